"""Reverse-mode differentiation: a tape of executed ops plus a finite-difference oracle.

Ops in :mod:`linattn.ops` call :func:`record` after computing their forward
value; when a :class:`GradTape` is active this appends a node holding the
output, the inputs and one vector-Jacobian-product closure per differentiable
input. ``backward`` walks the recorded nodes in reverse execution order and
accumulates gradients by tensor identity.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError
from .tensor import Tensor

# (input tensor, vjp closure mapping upstream grad array -> grad array for input)
VjpPair = tuple[Tensor, Callable[[np.ndarray], np.ndarray]]

_TAPE_STACK: list["GradTape"] = []


class _Node:
    __slots__ = ("out", "pairs")

    def __init__(self, out: Tensor, pairs: Sequence[VjpPair]):
        self.out = out
        self.pairs = pairs


def record(out: Tensor, pairs: Sequence[VjpPair]) -> Tensor:
    """Record an executed op on the active tape (no-op without a tape)."""
    if _TAPE_STACK:
        _TAPE_STACK[-1]._nodes.append(_Node(out, pairs))
    return out


def tape_active() -> bool:
    return bool(_TAPE_STACK)


class GradTape:
    """Ordered record of executed differentiable operations.

    Usage::

        with GradTape() as tape:
            tape.watch(w)
            loss = ...        # ops executed here are recorded
        tape.backward(loss)
        gw = tape.grad(w)     # zeros if w never contributed to loss
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: list[Tensor] = []
        self._grads: dict[int, np.ndarray] | None = None

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        self._watched.extend(tensors)

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of ``loss`` w.r.t. every watched tensor."""
        if loss.size != 1:
            raise ContractError(f"loss must be scalar, got shape {loss.shape}")
        if self._grads is not None:
            raise ContractError("backward() already ran on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            gout = grads.get(id(node.out))
            if gout is None:
                continue
            for inp, vjp in node.pairs:
                g = vjp(gout)
                acc = grads.get(id(inp))
                if acc is None:
                    # Stored arrays are accumulated in place later, so never
                    # store an alias/view of the upstream gradient.
                    if g is gout or g.base is not None:
                        g = g.copy()
                    grads[id(inp)] = g
                else:
                    acc += g
        self._grads = grads

    def grad(self, t: Tensor) -> Tensor:
        """Gradient for ``t`` after backward; zeros for watched-but-unused tensors."""
        if self._grads is None:
            raise ContractError("call backward() before grad()")
        g = self._grads.get(id(t))
        if g is None:
            return Tensor(np.zeros_like(t.data))
        return Tensor(np.array(g, copy=True))


def finite_diff_grad(f: Callable[[Tensor], float | Tensor], x: Tensor, h: float = 1e-6) -> Tensor:
    """Central-difference gradient of a scalar function, coordinate by coordinate.

    The step for coordinate i is ``h * max(1, |x_i|)``. ``f`` must be
    deterministic; a non-finite evaluation raises NumericError.
    """
    if h <= 0:
        raise ContractError(f"step h must be positive, got {h}")

    def evaluate(arr: np.ndarray) -> float:
        out = f(Tensor(arr))
        val = out.item() if isinstance(out, Tensor) else float(out)
        if not np.isfinite(val):
            raise NumericError("finite_diff_grad: function returned a non-finite value")
        return val

    base = x.data
    grad = np.zeros_like(base)
    flat_grad = grad.reshape(-1)
    flat_base = base.reshape(-1)
    for i in range(flat_base.size):
        step = h * max(1.0, abs(float(flat_base[i])))
        plus = base.copy()
        plus.reshape(-1)[i] = flat_base[i] + step
        minus = base.copy()
        minus.reshape(-1)[i] = flat_base[i] - step
        flat_grad[i] = (evaluate(plus) - evaluate(minus)) / (2.0 * step)
    return Tensor(grad)


def max_rel_error(a: Tensor | np.ndarray, b: Tensor | np.ndarray) -> float:
    """max_i |a_i - b_i| / max(1, |a_i|, |b_i|): the gradcheck discrepancy metric."""
    aa = a.data if isinstance(a, Tensor) else np.asarray(a)
    bb = b.data if isinstance(b, Tensor) else np.asarray(b)
    denom = np.maximum(1.0, np.maximum(np.abs(aa), np.abs(bb)))
    return float(np.max(np.abs(aa - bb) / denom)) if aa.size else 0.0
