"""Training demo: Adam on pixelwise cross-entropy over the synthetic dataset."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autodiff import GradTape
from .errors import ContractError, NumericError
from .metrics import ConfusionMatrix, MetricReport, compute_report
from .network import SegmenterConfig, init_params, segmenter_forward
from .params import ModelParams
from .tensor import Tensor


@dataclass
class Adam:
    """Standard Adam with bias correction; updates parameters in place."""
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _m: dict = field(default_factory=dict)
    _v: dict = field(default_factory=dict)
    _t: int = 0

    def step(self, params: ModelParams, grads: dict) -> None:
        self._t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in params.items():
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** self._t)
            v_hat = v / (1 - b2 ** self._t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    params: ModelParams
    losses: list
    report: MetricReport


def evaluate(params: ModelParams, cfg: SegmenterConfig, samples) -> MetricReport:
    """Confusion-matrix metrics of argmax predictions over a sample list."""
    cm = ConfusionMatrix(cfg.num_classes)
    for image, labels in samples:
        logits = segmenter_forward(image, params, cfg)
        cm.accumulate(ops.argmax_channels(logits), labels)
    return compute_report(cm)


def train_demo(cfg: SegmenterConfig, dataset, steps: int, seed: int,
               batch_size: int = 4, lr: float = 3e-4,
               holdout_fraction: float = 0.2, log_every: int = 0) -> TrainResult:
    """Adam (lr 3e-4) on pixelwise cross entropy; returns loss curve + held-out metrics.

    The dataset tail is held out for evaluation. A non-finite loss aborts
    with the failing step in the message.
    """
    if steps < 1:
        raise ContractError(f"steps must be >= 1, got {steps}")
    if len(dataset) < 2:
        raise ContractError("need at least 2 samples to split train/holdout")
    n_holdout = max(1, int(len(dataset) * holdout_fraction))
    train_set = dataset[:-n_holdout]
    holdout = dataset[-n_holdout:]

    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed)
    opt = Adam(lr=lr)
    losses = []
    for step_i in range(steps):
        batch_idx = rng.integers(0, len(train_set), size=min(batch_size, len(train_set)))
        with GradTape() as tape:
            tape.watch(*params.tensors())
            total = None
            for bi in batch_idx:
                image, labels = train_set[bi]
                loss_i = ops.softmax_cross_entropy(segmenter_forward(image, params, cfg), labels)
                total = loss_i if total is None else ops.add(total, loss_i)
            loss = ops.mul_scalar(total, 1.0 / len(batch_idx))
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {step_i}")
        losses.append(value)
        tape.backward(loss)
        opt.step(params, {name: tape.grad(t).data for name, t in params.items()})
        if log_every and (step_i % log_every == 0 or step_i == steps - 1):
            print(f"step {step_i:4d}  loss {value:.4f}")

    report = evaluate(params, cfg, holdout)
    return TrainResult(params=params, losses=losses, report=report)


def smoothed(losses, window: int = 20) -> float:
    """Mean of the trailing window; the loss-decrease criterion metric."""
    w = min(window, len(losses))
    return float(np.mean(losses[-w:]))
