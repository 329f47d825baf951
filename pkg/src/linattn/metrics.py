"""Confusion-matrix accumulation and the six segmentation quality metrics.

Counts stay in 64-bit integers until the final divisions, so tiled
accumulation is exactly equivalent to whole-image accumulation. Classes that
appear in neither reference nor prediction are excluded from the averaged
metrics (and flagged) instead of producing 0/0.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataError


class ConfusionMatrix:
    """k x k counts; counts[i][j] = pixels of reference class i predicted as j."""

    def __init__(self, k: int):
        if k < 2:
            raise ContractError(f"need at least 2 classes, got k={k}")
        self.k = k
        self.counts = np.zeros((k, k), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accumulate(self, pred: np.ndarray, ref: np.ndarray) -> "ConfusionMatrix":
        """Add per-pixel counts from a prediction/reference pair of label maps."""
        pred = np.asarray(pred)
        ref = np.asarray(ref)
        if pred.shape != ref.shape:
            raise DataError(f"prediction shape {pred.shape} != reference shape {ref.shape}")
        for name, arr in (("prediction", pred), ("reference", ref)):
            if not np.issubdtype(arr.dtype, np.integer):
                raise DataError(f"{name} labels must be integers, got dtype {arr.dtype}")
            bad = (arr < 0) | (arr >= self.k)
            if bad.any():
                pos = tuple(int(i) for i in np.argwhere(bad)[0])
                raise DataError(
                    f"{name} label {int(arr[pos])} out of range [0, {self.k}) at position {pos}")
        flat = self.k * ref.reshape(-1).astype(np.int64) + pred.reshape(-1)
        self.counts += np.bincount(flat, minlength=self.k * self.k).reshape(self.k, self.k)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Entrywise sum; enables deterministic parallel tile accumulation."""
        if other.k != self.k:
            raise DataError(f"cannot merge k={other.k} into k={self.k}")
        self.counts += other.counts
        return self


@dataclass
class MetricReport:
    pa: float
    mpa: float
    kappa: float
    miou: float
    fwiou: float
    f1: float                      # macro-averaged
    f1_micro: float
    iou_per_class: list = field(default_factory=list)
    f1_per_class: list = field(default_factory=list)
    empty_classes: list = field(default_factory=list)  # absent from ref AND pred
    kappa_degenerate: bool = False


def compute_report(cm: ConfusionMatrix) -> MetricReport:
    """Evaluate all metrics from integer counts; divisions happen here only."""
    counts = cm.counts
    total = cm.total
    if total == 0:
        raise ContractError("cannot compute metrics from an empty confusion matrix")
    diag = np.diag(counts)
    row = counts.sum(axis=1)   # reference pixels per class
    col = counts.sum(axis=0)   # predicted pixels per class

    pa = float(diag.sum() / total)

    present_ref = row > 0
    mpa = float(np.mean(diag[present_ref] / row[present_ref]))

    # expected agreement from the marginals, exact in integers
    pe_num = int(np.sum(row.astype(object) * col.astype(object)))
    total_sq = total * total
    kappa_degenerate = pe_num == total_sq
    if kappa_degenerate:
        kappa = 1.0 if diag.sum() == total else 0.0
    else:
        kappa = float((pa - pe_num / total_sq) / (1.0 - pe_num / total_sq))

    union = row + col - diag
    seen = union > 0
    iou = np.zeros(cm.k, dtype=np.float64)
    iou[seen] = diag[seen] / union[seen]
    miou = float(np.mean(iou[seen]))
    fwiou = float(np.sum(row[seen] * iou[seen]) / total)

    f1 = np.zeros(cm.k, dtype=np.float64)
    pr_sum = row + col
    nz = pr_sum > 0
    f1[nz] = 2.0 * diag[nz] / pr_sum[nz]   # == 2PR/(P+R) in count form
    f1_macro = float(np.mean(f1[seen]))
    f1_micro = pa

    return MetricReport(
        pa=pa, mpa=mpa, kappa=kappa, miou=miou, fwiou=fwiou,
        f1=f1_macro, f1_micro=f1_micro,
        iou_per_class=[float(v) for v in iou],
        f1_per_class=[float(v) for v in f1],
        empty_classes=[int(i) for i in np.flatnonzero(~seen)],
        kappa_degenerate=kappa_degenerate,
    )


def report_csv(report: MetricReport) -> str:
    """Two-line CSV: fixed header order, then values at 6 decimal places."""
    k = len(report.iou_per_class)
    header = ["pa", "mpa", "kappa", "miou", "fwiou", "f1"]
    header += [f"iou_{i}" for i in range(k)] + [f"f1_{i}" for i in range(k)]
    values = [report.pa, report.mpa, report.kappa, report.miou, report.fwiou, report.f1]
    values += report.iou_per_class + report.f1_per_class
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    buf.write(",".join(f"{v:.6f}" for v in values) + "\n")
    return buf.getvalue()
