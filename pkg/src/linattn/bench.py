"""Analytic cost model and empirical profiler for the two attention mechanisms.

The counting convention is frozen: a multiply and an accumulate count as two
scalar ops, transcendentals (exp/log) as one op per element, scalars are 4
bytes (f32), and the shared Q/K/V projection cost is excluded. This is the
convention that reproduces the headline op and byte figures for both
mechanisms at N = 4096 and N = 65536 simultaneously.
"""

from __future__ import annotations

import platform
import statistics
import time
from dataclasses import dataclass

import numpy as np
import psutil

from . import ops
from .attention import kernel_attention_linear
from .errors import ConfigurationError, ContractError, NumericError
from .tensor import AllocationTracker, Tensor, single_thread

MECHANISMS = ("dot", "kernel")

CONVENTION = ("multiply+accumulate = 2 ops; exp/log = 1 op/element; "
              "4 bytes/scalar (f32); Q/K/V projection cost excluded")


@dataclass(frozen=True)
class CostModel:
    """Frozen op/byte accounting convention."""
    ops_per_mac: int = 2
    ops_per_transcendental: int = 1
    bytes_per_scalar: int = 4
    convention: str = CONVENTION


COST_MODEL = CostModel()


@dataclass
class CostRow:
    mechanism: str
    n: int
    dk: int
    dv: int
    analytic_ops: int
    analytic_bytes: int
    measured_ns: int | None = None
    measured_peak_bytes: int | None = None


def _check_dims(mechanism: str, n: int, dk: int, dv: int) -> None:
    if mechanism not in MECHANISMS:
        raise ConfigurationError(f"unknown mechanism {mechanism!r}; use one of {MECHANISMS}")
    if min(n, dk, dv) < 1:
        raise ConfigurationError(f"dimensions must be positive, got N={n} Dk={dk} Dv={dv}")


def analytic_ops(mechanism: str, n: int, dk: int, dv: int, model: CostModel = COST_MODEL) -> int:
    """Scalar op count of one attention evaluation under the frozen convention.

    dot: QK^T and the weights-times-V product (2 MACs per N^2 per dim) plus a
    3-pass softmax over the N x N matrix. kernel: the two reassociated
    products, key-sum and query-normalizer MACs, one divide per output
    element, and a softplus evaluation per Q/K element.
    """
    _check_dims(mechanism, n, dk, dv)
    mac = model.ops_per_mac
    trans = model.ops_per_transcendental
    if mechanism == "dot":
        return mac * n * n * (dk + dv) + 3 * trans * n * n
    return (2 * mac * n * dk * dv      # K^T V summary and Q times summary
            + mac * n * dk             # key sum
            + mac * n * dk             # query . key-sum normalizer
            + n * dv                   # final divide
            + 2 * trans * n * dk)      # softplus over Q and K


def analytic_bytes(mechanism: str, n: int, dk: int, dv: int, model: CostModel = COST_MODEL) -> int:
    """Peak live tensor bytes of one attention evaluation (inputs + intermediates + output)."""
    _check_dims(mechanism, n, dk, dv)
    bps = model.bytes_per_scalar
    inputs = n * (2 * dk + dv)
    if mechanism == "dot":
        return bps * (n * n + inputs + n * dv)
    return bps * (inputs + 2 * n * dk + dk * dv + dk + n * dv)


# ---------------------------------------------------------------------------
# empirical profiling
# ---------------------------------------------------------------------------

def _run_dot(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Dot attention with the N x N scores matrix fully materialized.

    Softmax + value aggregation stream over the scores in row blocks that fit
    cache, so the buffer is read from DRAM once; per-element cost then stays
    stable across N and the timing reflects the O(N^2) op count rather than
    the number of passes. Row results are identical to softmax_rows(QK^T) V.
    """
    s = ops.matmul(q, ops.transpose(k))
    sd = s.data
    n = sd.shape[0]
    out = Tensor(np.empty((n, v.shape[1]), dtype=sd.dtype))
    block = max(64, min(n, (1 << 22) // max(4 * n, 1)))
    scratch = np.empty((min(block, n), n), dtype=sd.dtype)
    vd, od = v.data, out.data
    for i in range(0, n, block):
        b = sd[i:i + block]
        e = scratch[:b.shape[0]]
        np.subtract(b, b.max(axis=1, keepdims=True), out=e)
        np.exp(e, out=e)
        den = e.sum(axis=1, keepdims=True)
        np.matmul(e, vd, out=od[i:i + b.shape[0]])
        od[i:i + b.shape[0]] /= den
    return out


def _run_kernel(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    return kernel_attention_linear(q, k, v)


_RUNNERS = {"dot": _run_dot, "kernel": _run_kernel}


def feasible(mechanism: str, n: int, dk: int, dv: int, headroom: float = 3.0) -> bool:
    """Whether a measured run plausibly fits in available memory."""
    need = headroom * analytic_bytes(mechanism, n, dk, dv)
    return need < 0.8 * psutil.virtual_memory().available


def measured_profile(mechanism: str, n: int, dk: int, dv: int,
                     repeats: int = 5, seed: int = 0,
                     min_sample_ns: int = 300_000_000) -> tuple[int, int] | None:
    """Median single-thread wall time (ns per call) and tracked peak tensor bytes.

    Each timed repeat is a batch of back-to-back calls long enough to span
    ``min_sample_ns``, which keeps sub-10ms configurations immune to scheduler
    noise; the reported value is the median per-call time over the repeats.
    One warmup run precedes timing; the allocation tracker covers one extra
    run of the attention call only. Returns None (skip marker) when the
    configuration does not fit in memory.
    """
    _check_dims(mechanism, n, dk, dv)
    if repeats < 3:
        raise ContractError(f"need repeats >= 3, got {repeats}")
    if not feasible(mechanism, n, dk, dv):
        return None
    rng = np.random.default_rng(seed)
    q = Tensor(rng.standard_normal((n, dk)).astype(np.float32))
    k = Tensor(rng.standard_normal((n, dk)).astype(np.float32))
    v = Tensor(rng.standard_normal((n, dv)).astype(np.float32))
    run = _RUNNERS[mechanism]
    with single_thread():
        t0 = time.perf_counter_ns()
        run(q, k, v)  # warmup, also estimates the batch size
        estimate = max(time.perf_counter_ns() - t0, 1)
        calls_per_sample = max(1, int(np.ceil(min_sample_ns / estimate)))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter_ns()
            for _ in range(calls_per_sample):
                out = run(q, k, v)
                del out
            times.append((time.perf_counter_ns() - t0) / calls_per_sample)
        with AllocationTracker() as tracker:
            out = run(q, k, v)
        peak = tracker.peak
        del out
    return int(statistics.median(times)), int(peak)


def fit_scaling_exponent(points) -> float:
    """Least-squares slope of log(measurement) against log(N)."""
    pts = list(points)
    if len(pts) < 3:
        raise ContractError(f"need at least 3 points, got {len(pts)}")
    ns = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64)
    if np.any(np.diff(ns) <= 0):
        raise ContractError("N values must be strictly increasing")
    if np.any(ys <= 0):
        raise NumericError("measurements must be positive for a log-log fit")
    slope, _ = np.polyfit(np.log(ns), np.log(ys), 1)
    return float(slope)


def build_report(n_list, dk: int, dv: int, mode: str = "analytic",
                 repeats: int = 5, seed: int = 0, mechanisms=MECHANISMS) -> list[CostRow]:
    """Cost rows for every (mechanism, N) pair; measured fields filled when asked and feasible."""
    if mode not in ("analytic", "measured"):
        raise ConfigurationError(f"mode must be 'analytic' or 'measured', got {mode!r}")
    rows = []
    for n in n_list:
        for mech in mechanisms:
            row = CostRow(mech, int(n), dk, dv,
                          analytic_ops(mech, int(n), dk, dv),
                          analytic_bytes(mech, int(n), dk, dv))
            if mode == "measured":
                measured = measured_profile(mech, int(n), dk, dv, repeats=repeats, seed=seed)
                if measured is not None:
                    row.measured_ns, row.measured_peak_bytes = measured
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

CSV_HEADER = "mechanism,N,dk,dv,analytic_ops,analytic_bytes,measured_ns,measured_peak_bytes"


def _machine_notes() -> list[str]:
    return [
        f"# convention: {COST_MODEL.convention}",
        f"# machine: {platform.platform()}",
        f"# python: {platform.python_version()}, numpy: {np.__version__}",
    ]


def report_csv(rows: list[CostRow]) -> str:
    """Fixed-header CSV; '#' machine-note comments only when measurements are present."""
    if not rows:
        raise ContractError("cannot emit an empty report")
    lines = []
    if any(r.measured_ns is not None for r in rows):
        lines.extend(_machine_notes())
    lines.append(CSV_HEADER)
    for r in rows:
        ns = "" if r.measured_ns is None else str(r.measured_ns)
        pb = "" if r.measured_peak_bytes is None else str(r.measured_peak_bytes)
        lines.append(f"{r.mechanism},{r.n},{r.dk},{r.dv},{r.analytic_ops},{r.analytic_bytes},{ns},{pb}")
    return "\n".join(lines) + "\n"


def report_svg(rows: list[CostRow]) -> str:
    """Self-contained grouped bar chart of analytic op counts, log-scaled, one bar per row."""
    if not rows:
        raise ContractError("cannot emit an empty report")
    groups: dict[int, list[CostRow]] = {}
    for r in rows:
        groups.setdefault(r.n, []).append(r)
    ns_sorted = sorted(groups)
    bar_w, gap, group_gap = 26, 6, 34
    left, top, plot_h = 70, 28, 220
    max_bars = max(len(v) for v in groups.values())
    group_w = max_bars * (bar_w + gap) + group_gap
    width = left + len(ns_sorted) * group_w + 20
    height = top + plot_h + 52
    vmax = max(np.log10(max(r.analytic_ops, 10)) for r in rows)
    colors = {"kernel": "#3a6fe4", "dot": "#e4803a"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{left}" y="16" font-size="12" font-family="sans-serif">'
        f'analytic scalar ops per attention call (log scale)</text>',
        f'<line x1="{left - 8}" y1="{top + plot_h}" x2="{width - 10}" y2="{top + plot_h}" '
        f'stroke="#333" stroke-width="1"/>',
    ]
    for gi, n in enumerate(ns_sorted):
        gx = left + gi * group_w
        for bi, r in enumerate(groups[n]):
            h = plot_h * np.log10(max(r.analytic_ops, 10)) / vmax
            x = gx + bi * (bar_w + gap)
            y = top + plot_h - h
            color = colors.get(r.mechanism, "#888888")
            parts.append(
                f'<rect class="bar" x="{x:.1f}" y="{y:.1f}" width="{bar_w}" height="{h:.1f}" '
                f'fill="{color}"><title>{r.mechanism} N={r.n}: {r.analytic_ops} ops</title></rect>')
        parts.append(
            f'<text x="{gx}" y="{top + plot_h + 16}" font-size="11" '
            f'font-family="sans-serif">N={n}</text>')
    legend_y = top + plot_h + 36
    lx = left
    for mech, color in colors.items():
        parts.append(f'<rect x="{lx}" y="{legend_y - 10}" width="12" height="12" fill="{color}"/>')
        parts.append(f'<text x="{lx + 16}" y="{legend_y}" font-size="11" '
                     f'font-family="sans-serif">{mech}</text>')
        lx += 90
    parts.append("</svg>")
    return "\n".join(parts)


def emit_report(rows: list[CostRow], csv_path, svg_path=None) -> None:
    csv_text = report_csv(rows)
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    if svg_path is not None:
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(report_svg(rows))
