"""Dense tensor kernel: the value type, allocation tracking, and TNS files.

Tensors are thin wrappers around C-contiguous-ish numpy arrays of f32/f64,
rank <= 4. Operations on them live in :mod:`linattn.ops`; this module only
owns the representation, the byte-level TNS serialization format and the
allocation tracker used by the benchmark profiler.
"""

from __future__ import annotations

import struct
import weakref
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import ConfigurationError, DataError, DimensionError, NumericError

MAX_RANK = 4

# dtype name <-> numpy dtype <-> TNS header code
_NP_DTYPE = {"f32": np.float32, "f64": np.float64}
_DTYPE_NAME = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_TNS_CODE = {"f32": 1, "f64": 2}
_TNS_DTYPE = {1: "f32", 2: "f64"}

_TRACKER_STACK: list["AllocationTracker"] = []


class AllocationTracker:
    """Tracks live bytes of tensor buffers created while the tracker is active.

    Buffers are counted on Tensor construction (only when the tensor owns its
    memory, i.e. it is not a view) and released when the owning Tensor is
    garbage collected. `peak` is the high-water mark of live tracked bytes.
    Profiling runs are sequential, so a simple stack of active trackers is
    enough.
    """

    def __init__(self):
        self.current = 0
        self.peak = 0

    def __enter__(self) -> "AllocationTracker":
        _TRACKER_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TRACKER_STACK.remove(self)

    def _claim(self, owner: "Tensor", nbytes: int) -> None:
        self.current += nbytes
        if self.current > self.peak:
            self.peak = self.current
        weakref.finalize(owner, self._release, nbytes)

    def _release(self, nbytes: int) -> None:
        self.current -= nbytes


def single_thread():
    """Context manager forcing BLAS pools to one thread (bit-reproducible mode)."""
    return threadpool_limits(limits=1)


def thread_limit(n: int):
    """Context manager limiting BLAS pools to ``n`` threads."""
    if n < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {n}")
    return threadpool_limits(limits=n)


class Tensor:
    """Dense row-major array of f32/f64 scalars, rank <= 4."""

    __slots__ = ("data", "__weakref__")

    def __init__(self, data: np.ndarray):
        if data.dtype not in _DTYPE_NAME:
            raise ConfigurationError(f"unsupported dtype {data.dtype}; use f32 or f64")
        if data.ndim > MAX_RANK:
            raise DimensionError(f"rank {data.ndim} exceeds maximum {MAX_RANK}")
        if 0 in data.shape:
            raise DimensionError(f"dimensions must be positive, got shape {data.shape}")
        self.data = data
        if _TRACKER_STACK and data.base is None:
            _TRACKER_STACK[-1]._claim(self, data.nbytes)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> str:
        return _DTYPE_NAME[self.data.dtype]

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def astype(self, dtype: str) -> "Tensor":
        return Tensor(self.data.astype(_np_dtype(dtype)))

    def check_finite(self, context: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"{context} contains non-finite values")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"


def _np_dtype(dtype: str) -> np.dtype:
    try:
        return np.dtype(_NP_DTYPE[dtype])
    except KeyError:
        raise ConfigurationError(f"unknown dtype {dtype!r}; use 'f32' or 'f64'") from None


def tensor(values, dtype: str = "f64") -> Tensor:
    """Build a tensor from nested lists / arrays, validating finiteness."""
    arr = np.asarray(values, dtype=_np_dtype(dtype))
    t = Tensor(arr)
    t.check_finite("tensor() input")
    return t


def zeros(shape: Sequence[int] | int, dtype: str = "f64") -> Tensor:
    return Tensor(np.zeros(shape, dtype=_np_dtype(dtype)))


def ones(shape: Sequence[int] | int, dtype: str = "f64") -> Tensor:
    return Tensor(np.ones(shape, dtype=_np_dtype(dtype)))


def full(shape: Sequence[int] | int, value: float, dtype: str = "f64") -> Tensor:
    return Tensor(np.full(shape, value, dtype=_np_dtype(dtype)))


def eye(n: int, dtype: str = "f64") -> Tensor:
    return Tensor(np.eye(n, dtype=_np_dtype(dtype)))


def scalar(value: float, dtype: str = "f64") -> Tensor:
    return tensor(np.asarray(value), dtype=dtype)


def random_normal(rng: np.random.Generator, shape, std: float = 1.0, dtype: str = "f64") -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(_np_dtype(dtype)))


# ---------------------------------------------------------------------------
# TNS file format
#
# magic "TNS1" | u8 dtype code (1=f32, 2=f64) | u8 rank | rank x u32 LE dims |
# row-major little-endian scalar payload. Bit-exact round trip required.
# ---------------------------------------------------------------------------

_MAGIC = b"TNS1"


def tns_bytes(t: Tensor) -> bytes:
    """Serialize a tensor to TNS bytes."""
    t.check_finite("TNS payload")
    header = _MAGIC + struct.pack("<BB", _TNS_CODE[t.dtype], t.rank)
    dims = struct.pack(f"<{t.rank}I", *t.shape) if t.rank else b""
    payload = np.ascontiguousarray(t.data).astype(t.data.dtype.newbyteorder("<"), copy=False)
    return header + dims + payload.tobytes()


def tns_write(t: Tensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tns_bytes(t))


def tns_from_bytes(buf: bytes, offset: int = 0) -> tuple[Tensor, int]:
    """Parse one TNS record starting at ``offset``; returns (tensor, end offset)."""
    pos = offset
    if buf[pos:pos + 4] != _MAGIC:
        raise DataError(f"bad TNS magic at byte {pos}")
    pos += 4
    if len(buf) < pos + 2:
        raise DataError(f"truncated TNS header at byte {pos}")
    code, rank = struct.unpack_from("<BB", buf, pos)
    pos += 2
    if code not in _TNS_DTYPE:
        raise DataError(f"unknown TNS dtype code {code} at byte {pos - 2}")
    if rank > MAX_RANK:
        raise DataError(f"TNS rank {rank} exceeds maximum {MAX_RANK} at byte {pos - 1}")
    if len(buf) < pos + 4 * rank:
        raise DataError(f"truncated TNS dims at byte {pos}")
    dims = struct.unpack_from(f"<{rank}I", buf, pos) if rank else ()
    pos += 4 * rank
    if any(d == 0 for d in dims):
        raise DataError(f"zero dimension in TNS dims at byte {pos - 4 * rank}")
    dtype = _TNS_DTYPE[code]
    count = int(np.prod(dims)) if dims else 1
    itemsize = np.dtype(_NP_DTYPE[dtype]).itemsize
    end = pos + count * itemsize
    if len(buf) < end:
        raise DataError(f"truncated TNS payload at byte {pos} (need {count * itemsize} bytes)")
    arr = np.frombuffer(buf[pos:end], dtype=np.dtype(_NP_DTYPE[dtype]).newbyteorder("<"))
    arr = arr.astype(_NP_DTYPE[dtype]).reshape(dims)
    t = Tensor(arr)
    t.check_finite(f"TNS payload at byte {pos}")
    return t, end


def tns_read(path) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = tns_from_bytes(buf)
    if end != len(buf):
        raise DataError(f"trailing bytes after TNS payload at byte {end}")
    return t
