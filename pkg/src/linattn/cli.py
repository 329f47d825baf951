"""Command-line entry point.

Exit codes: 0 success, 1 scientific check failure, 2 usage error. Every
subcommand prints its resolved configuration; runs with a fixed --seed are
bit-reproducible in single-thread mode.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench, ops, selftest
from .attention import (AttentionBlockParams, ProjectionWeights, attention_block_forward,
                        channel_attention, kernel_attention_linear,
                        kernel_attention_quadratic, spatial_attention)
from .autodiff import GradTape, finite_diff_grad, max_rel_error
from .errors import LinattnError
from .imageio import load_image, load_labels, save_labels
from .metrics import ConfusionMatrix, compute_report, report_csv
from .network import (ResNeXtBlockConfig, SegmenterConfig, block_params, init_block_params,
                      init_params, resnext_block_forward, segmenter_forward)
from .params import ModelParams, load_checkpoint, save_checkpoint
from .synthetic import generate_synthetic_dataset
from .tensor import Tensor, scalar, thread_limit
from .train import smoothed, train_demo


def _print_config(args: argparse.Namespace) -> None:
    shown = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("# config: " + " ".join(f"{k}={v}" for k, v in shown.items()))


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(1.0, float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) / scale


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_equiv(args) -> int:
    rng = np.random.default_rng(args.seed)
    np_dt = np.float32 if args.dtype == "f32" else np.float64
    worst = 0.0
    for _ in range(args.trials):
        n = int(rng.integers(1, args.n + 1))
        dk = int(rng.integers(1, args.dk + 1))
        dv = int(rng.integers(1, args.dv + 1))
        q = Tensor(rng.standard_normal((n, dk)).astype(np_dt))
        k = Tensor(rng.standard_normal((n, dk)).astype(np_dt))
        v = Tensor(rng.standard_normal((n, dv)).astype(np_dt))
        err = _rel(kernel_attention_linear(q, k, v).data,
                   kernel_attention_quadratic(q, k, v).data)
        worst = max(worst, err)
    tol = 1e-10 if args.dtype == "f64" else 1e-4
    print(f"max relative error {worst:.3e} over {args.trials} trials (tolerance {tol:.1e})")
    return 0 if worst <= tol else 1


def _gradcheck_battery(seed: int, tol: float) -> list[tuple[str, float]]:
    """(name, max rel err) of tape vs finite differences for every mechanism."""
    rng = np.random.default_rng(seed)
    results = []

    def check(name, fn, *tensors_in):
        with GradTape() as tape:
            tape.watch(*tensors_in)
            loss = ops.sum_all(fn(*tensors_in))
        tape.backward(loss)
        worst = 0.0
        for i, t in enumerate(tensors_in):
            def f(x, idx=i):
                argv = [Tensor(tt.data) for tt in tensors_in]
                argv[idx] = x
                return ops.sum_all(fn(*argv))
            worst = max(worst, max_rel_error(tape.grad(t), finite_diff_grad(f, t)))
        results.append((name, worst))

    q = Tensor(rng.standard_normal((5, 3)))
    k = Tensor(rng.standard_normal((5, 3)))
    v = Tensor(rng.standard_normal((5, 4)))
    check("kernel_attention_linear", kernel_attention_linear, q, k, v)

    x = Tensor(rng.standard_normal((3, 4, 4)))
    check("channel_attention", lambda xx, bb: channel_attention(xx, bb), x, scalar(0.4))
    proj = ProjectionWeights(Tensor(rng.standard_normal((3, 2))),
                             Tensor(rng.standard_normal((3, 2))),
                             Tensor(rng.standard_normal((3, 3))))
    check("spatial_attention",
          lambda xx, wq, wk, wv, g: spatial_attention(xx, ProjectionWeights(wq, wk, wv), g),
          x, proj.w_query, proj.w_key, proj.w_value, scalar(0.3))

    low = Tensor(rng.standard_normal((2, 4, 4)))
    high = Tensor(rng.standard_normal((3, 4, 4)))
    fuse = Tensor(rng.standard_normal((4, 5, 1, 1)) * 0.5)
    bwq = Tensor(rng.standard_normal((4, 2)))
    bwk = Tensor(rng.standard_normal((4, 2)))
    bwv = Tensor(rng.standard_normal((4, 4)))
    check("attention_block",
          lambda lo, hi, fw, wq, wk, wv, g, b: attention_block_forward(
              lo, hi, AttentionBlockParams(fw, ProjectionWeights(wq, wk, wv), g, b)),
          low, high, fuse, bwq, bwk, bwv, scalar(0.2), scalar(0.1))

    bcfg = ResNeXtBlockConfig(3, 4, 6, cardinality=2, stride=2)
    prm = init_block_params(bcfg, rng)
    xin = Tensor(rng.standard_normal((3, 6, 6)))
    names = prm.names()
    weights = [prm[name] for name in names]

    def block_fn(xx, *ws):
        view = ModelParams()
        for name, w in zip(names, ws):
            view.add(name, w)
        return resnext_block_forward(xx, bcfg, block_params(view, "blk", bcfg))

    check("resnext_block", block_fn, xin, *weights)
    return results


def cmd_gradcheck(args) -> int:
    tol = 1e-5
    failed = False
    for s in range(args.seeds):
        for name, err in _gradcheck_battery(args.seed + s, tol):
            status = "PASS" if err <= tol else "FAIL"
            if err > tol:
                failed = True
            print(f"{status}  seed {args.seed + s}  {name:<26} rel err {err:.3e}")
    print(f"tolerance {tol:.1e}")
    return 1 if failed else 0


def cmd_bench(args) -> int:
    try:
        n_list = [int(x) for x in args.n_list.split(",") if x.strip()]
    except ValueError:
        print(f"error: bad --n-list {args.n_list!r}", file=sys.stderr)
        return 2
    if not n_list:
        print("error: empty --n-list", file=sys.stderr)
        return 2
    rows = bench.build_report(n_list, args.dk, args.dv, mode=args.mode,
                              repeats=args.repeats, seed=args.seed)
    bench.emit_report(rows, args.out, args.svg)
    print(f"# convention: {bench.COST_MODEL.convention}")
    for r in rows:
        extra = ""
        if r.measured_ns is not None:
            extra = f"  measured {r.measured_ns / 1e6:.2f} ms, peak {r.measured_peak_bytes / 1e6:.2f} MB"
        elif args.mode == "measured":
            extra = "  (skipped: infeasible on this machine)"
        print(f"{r.mechanism:>6} N={r.n:<6} ops {r.analytic_ops:.3e}  bytes {r.analytic_bytes:.3e}{extra}")
    print(f"wrote {args.out}" + (f" and {args.svg}" if args.svg else ""))
    return 0


def cmd_train_demo(args) -> int:
    base = SegmenterConfig.tiny(num_classes=args.classes) if args.tiny else \
        SegmenterConfig(num_classes=args.classes)
    cfg = SegmenterConfig(num_classes=base.num_classes, input_channels=base.input_channels,
                          stage_channels=base.stage_channels, cardinality=base.cardinality,
                          dtype=args.dtype)
    data = generate_synthetic_dataset(args.samples, args.size, args.classes,
                                      seed=args.seed, dtype=cfg.dtype)
    result = train_demo(cfg, data, steps=args.steps, seed=args.seed,
                        log_every=max(1, args.steps // 10))
    first, last = result.losses[0], smoothed(result.losses)
    print(f"initial loss {first:.4f} -> smoothed final {last:.4f} "
          f"({last / first:.1%} of initial)")
    print(f"held-out mIoU {result.report.miou:.4f}  PA {result.report.pa:.4f}")
    if args.out:
        result.params.meta = {
            "num_classes": cfg.num_classes, "input_channels": cfg.input_channels,
            "stage_channels": list(cfg.stage_channels), "cardinality": cfg.cardinality,
            "dtype": cfg.dtype,
        }
        save_checkpoint(result.params, args.out)
        print(f"wrote checkpoint {args.out}")
    return 0


def cmd_segment(args) -> int:
    params = load_checkpoint(args.model)
    meta = params.meta
    if not meta:
        print("error: checkpoint carries no model configuration", file=sys.stderr)
        return 1
    cfg = SegmenterConfig(num_classes=meta["num_classes"],
                          input_channels=meta["input_channels"],
                          stage_channels=tuple(meta["stage_channels"]),
                          cardinality=meta["cardinality"], dtype=meta["dtype"])
    image = load_image(args.input, dtype=cfg.dtype)
    logits = segmenter_forward(image, params, cfg)
    save_labels(ops.argmax_channels(logits), args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_metrics(args) -> int:
    pred = load_labels(args.pred)
    ref = load_labels(args.ref)
    cm = ConfusionMatrix(args.classes).accumulate(pred, ref)
    report = compute_report(cm)
    csv_text = report_csv(report)
    print(csv_text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        print(f"wrote {args.out}")
    return 0


def cmd_selftest(args) -> int:
    results = selftest.run_selftest(seed=args.seed, trials=args.trials)
    return selftest.print_results(results)


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linattn",
        description="Linear-complexity kernel attention: checks, benchmarks, toy training.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS thread limit (default 1, bit-reproducible)")
    common.add_argument("--dtype", choices=("f32", "f64"), default="f64")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", parents=[common], help="cost model and profiling report")
    p.add_argument("--n-list", default="1024,4096", help="comma-separated sequence lengths")
    p.add_argument("--dk", type=int, default=32)
    p.add_argument("--dv", type=int, default=64)
    p.add_argument("--mode", choices=("analytic", "measured"), default="analytic")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--svg", default=None, help="optional SVG bar-chart path")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("equiv", parents=[common], help="linear vs quadratic kernel attention")
    p.add_argument("--n", type=int, default=256, help="max sequence length")
    p.add_argument("--dk", type=int, default=32)
    p.add_argument("--dv", type=int, default=64)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=cmd_equiv)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="tape gradients vs finite differences")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds to sweep")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-demo", parents=[common], help="train on synthetic shapes")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--samples", type=int, default=48, help="dataset size")
    p.add_argument("--tiny", action="store_true",
                   help="use the reduced-width config instead of the default toy one")
    p.add_argument("--out", default=None, help="checkpoint output path")
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("segment", parents=[common], help="run a checkpoint on a PPM image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="PPM (P6) image")
    p.add_argument("--out", required=True, help="PGM (P5) label map output")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("metrics", parents=[common], help="score a prediction against a reference")
    p.add_argument("--pred", required=True, help="PGM (P5) predicted labels")
    p.add_argument("--ref", required=True, help="PGM (P5) reference labels")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--out", default=None, help="optional CSV output path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("selftest", parents=[common], help="full invariant suite")
    p.add_argument("--trials", type=int, default=30, help="equivalence trials")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _print_config(args)
    try:
        with thread_limit(args.threads):
            return args.func(args)
    except LinattnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
