"""Linear-complexity kernel attention with a toy segmentation network and benchmarks."""

from . import attention, autodiff, bench, metrics, network, ops, synthetic, train
from .tensor import AllocationTracker, Tensor, eye, full, ones, scalar, single_thread, tensor, zeros

__version__ = "0.1.0"

__all__ = [
    "AllocationTracker", "Tensor", "attention", "autodiff", "bench", "eye", "full",
    "metrics", "network", "ones", "ops", "scalar", "single_thread", "synthetic",
    "tensor", "train", "zeros",
]
