"""Built-in invariant suite: equivalence, gradients, metric oracles, cost ratios.

Everything here must pass on a fresh build. ``tolerance_scale`` exists as a
failure-path hook: scaling the tolerances down makes the suite report
failures without touching the checks themselves.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from . import bench, ops
from .attention import (AttentionBlockParams, ProjectionWeights, attention_block_forward,
                        channel_attention, kernel_attention_linear, kernel_attention_quadratic,
                        spatial_attention)
from .autodiff import GradTape, finite_diff_grad, max_rel_error
from .metrics import ConfusionMatrix, compute_report
from .network import SegmenterConfig, init_params, segmenter_forward
from .params import load_checkpoint, save_checkpoint
from .tensor import Tensor, scalar, tensor, tns_read, tns_write


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


def _random_qkv(rng, n, dk, dv, scale=1.0):
    q = Tensor(rng.standard_normal((n, dk)) * scale)
    k = Tensor(rng.standard_normal((n, dk)) * scale)
    v = Tensor(rng.standard_normal((n, dv)) * scale)
    return q, k, v


def check_equivalence(seed: int = 0, trials: int = 30, n_max: int = 256,
                      tol: float = 1e-10) -> CheckResult:
    """Linear kernel attention must match the quadratic form on random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, n_max + 1))
        dk = int(rng.integers(1, 33))
        dv = int(rng.integers(1, 65))
        q, k, v = _random_qkv(rng, n, dk, dv)
        err = _rel(kernel_attention_linear(q, k, v).data,
                   kernel_attention_quadratic(q, k, v).data)
        worst = max(worst, err)
    return CheckResult("kernel linear == quadratic", worst <= tol,
                       f"max rel err {worst:.3e} over {trials} trials (tol {tol:.1e})")


def check_gradients(seed: int = 0, tol: float = 1e-5) -> CheckResult:
    """Tape gradients of the attention forms match central finite differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0

    def gradcheck(fn, *tensors_in):
        nonlocal worst
        with GradTape() as tape:
            tape.watch(*tensors_in)
            loss = ops.sum_all(fn(*tensors_in))
        tape.backward(loss)
        for i, t in enumerate(tensors_in):
            def f(x, idx=i):
                args = [Tensor(tt.data) for tt in tensors_in]
                args[idx] = x
                return ops.sum_all(fn(*args))
            worst = max(worst, max_rel_error(tape.grad(t), finite_diff_grad(f, t)))

    q, k, v = _random_qkv(rng, 4, 3, 3)
    gradcheck(kernel_attention_linear, q, k, v)
    x = Tensor(rng.standard_normal((3, 4, 4)))
    beta = scalar(0.3)
    gradcheck(channel_attention, x, beta)
    return CheckResult("attention gradients vs finite differences", worst <= tol,
                       f"max rel err {worst:.3e} (tol {tol:.1e})")


def check_metrics(tol: float = 1e-6) -> CheckResult:
    """Hand-derived 2-class confusion matrix reproduces all six metrics."""
    cm = ConfusionMatrix(2)
    cm.counts = np.array([[3, 1], [2, 4]], dtype=np.int64)
    rep = compute_report(cm)
    expected = dict(pa=0.7, mpa=0.708333, kappa=0.4, miou=0.535714,
                    fwiou=0.542857, f1=0.696970)
    errs = {name: abs(getattr(rep, name) - val) for name, val in expected.items()}
    worst = max(errs.values())
    return CheckResult("metrics hand oracle", worst <= tol,
                       f"max abs err {worst:.3e} (tol {tol:.1e})")


def check_cost_model() -> CheckResult:
    """The frozen convention must reproduce the reference op/byte figures."""
    checks = []
    d_ops = bench.analytic_ops("dot", 4096, 32, 64)
    k_ops = bench.analytic_ops("kernel", 4096, 32, 64)
    d_bytes = bench.analytic_bytes("dot", 4096, 32, 64)
    k_bytes = bench.analytic_bytes("kernel", 4096, 32, 64)
    checks.append(abs(d_ops - 3e9) / 3e9 <= 0.10)
    checks.append(abs(k_ops - 3.7e7) / 3.7e7 <= 0.15)
    checks.append(70 <= d_ops / k_ops <= 110)
    checks.append(abs(d_bytes - 69e6) / 69e6 <= 0.10)
    checks.append(0.5 <= k_bytes / 3e6 <= 2.0)
    checks.append(14 <= d_bytes / k_bytes <= 30)
    d_ops_big = bench.analytic_ops("dot", 65536, 32, 64)
    k_ops_big = bench.analytic_ops("kernel", 65536, 32, 64)
    d_bytes_big = bench.analytic_bytes("dot", 65536, 32, 64)
    k_bytes_big = bench.analytic_bytes("kernel", 65536, 32, 64)
    checks.append(abs(d_bytes_big - 17.2e9) / 17.2e9 <= 0.05)
    checks.append(200 <= d_bytes_big / k_bytes_big <= 500)
    checks.append(1000 <= d_ops_big / k_ops_big <= 2000)
    passed = all(checks)
    return CheckResult("cost model reproduces reference figures", passed,
                       f"{sum(checks)}/{len(checks)} figure checks passed")


def check_structure(seed: int = 0, tol: float = 1e-12) -> CheckResult:
    """Zero residual scales are exact identities; normalizers survive extremes."""
    rng = np.random.default_rng(seed)
    failures = []

    x = Tensor(rng.standard_normal((4, 6, 6)))
    proj = ProjectionWeights(Tensor(rng.standard_normal((4, 2))),
                             Tensor(rng.standard_normal((4, 2))),
                             Tensor(rng.standard_normal((4, 4))))
    if np.max(np.abs(spatial_attention(x, proj, scalar(0.0)).data - x.data)) > tol:
        failures.append("spatial attention not identity at gamma=0")
    if np.max(np.abs(channel_attention(x, scalar(0.0)).data - x.data)) > tol:
        failures.append("channel attention not identity at beta=0")

    for fill in (-1e4, 1e4):
        q = Tensor(np.full((8, 4), fill))
        k = Tensor(np.full((8, 4), fill))
        v = Tensor(rng.standard_normal((8, 3)))
        out = kernel_attention_linear(q, k, v)
        expect = v.data.mean(axis=0)
        if np.max(np.abs(out.data - expect)) > 1e-9:
            failures.append(f"uniform-weight reduction failed at fill {fill}")
    qm = Tensor(np.where(rng.standard_normal((16, 4)) > 0, 1e4, -1e4))
    km = Tensor(np.where(rng.standard_normal((16, 4)) > 0, 1e4, -1e4))
    vm = Tensor(rng.standard_normal((16, 5)))
    out = kernel_attention_linear(qm, km, vm)
    lo, hi = vm.data.min(axis=0), vm.data.max(axis=0)
    if not ((out.data >= lo - 1e-9).all() and (out.data <= hi + 1e-9).all()):
        failures.append("convexity bound violated on mixed extreme inputs")

    t = Tensor(rng.standard_normal((2, 3, 4)).astype(np.float32))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.tns")
        tns_write(t, path)
        back = tns_read(path)
        if back.dtype != t.dtype or back.shape != t.shape or not np.array_equal(back.data, t.data):
            failures.append("TNS round trip not bit-exact")
        cfg = SegmenterConfig.tiny()
        prms = init_params(cfg, seed=7)
        ckpt = os.path.join(tmp, "model.ckpt")
        save_checkpoint(prms, ckpt)
        loaded = load_checkpoint(ckpt)
        for name, orig in prms.items():
            if not np.array_equal(loaded[name].data, orig.data):
                failures.append(f"checkpoint round trip differs at {name}")
                break

        img = Tensor(rng.standard_normal((3, 32, 32)) * 0.1)
        a = segmenter_forward(img, prms, cfg)
        b = segmenter_forward(img, prms, cfg, ablate_attention=True)
        if np.max(np.abs(a.data - b.data)) > tol:
            failures.append("attention ablation not exact at gamma=beta=0")

    return CheckResult("structural invariants", not failures,
                       "; ".join(failures) if failures else "identities, extremes, round trips OK")


def run_selftest(seed: int = 0, tolerance_scale: float = 1.0, trials: int = 30) -> list[CheckResult]:
    s = tolerance_scale
    return [
        check_equivalence(seed=seed, trials=trials, tol=1e-10 * s),
        check_gradients(seed=seed, tol=1e-5 * s),
        check_metrics(tol=1e-6 * s),
        check_cost_model(),
        check_structure(seed=seed, tol=max(1e-12 * s, 0.0)),
    ]


def print_results(results: list[CheckResult]) -> int:
    width = max(len(r.name) for r in results)
    print(f"# cost-model convention: {bench.COST_MODEL.convention}")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} checks passed")
    return 0
