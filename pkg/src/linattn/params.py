"""Learnable-parameter container and the checkpoint file format.

A checkpoint is a small binary container: magic, a JSON manifest (names,
shapes, offsets, init seed), then concatenated TNS records. Round trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from typing import Iterator

import numpy as np

from .errors import DataError
from .tensor import Tensor, tns_bytes, tns_from_bytes

_MAGIC = b"TNC1"


class ModelParams:
    """Ordered mapping of stable parameter names to tensors.

    ``meta`` carries small JSON-serializable facts needed to rebuild the
    owning model (class count, stage widths, ...) alongside the weights.
    """

    def __init__(self, seed: int | None = None, meta: dict | None = None):
        self.seed = seed
        self.meta = dict(meta or {})
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._tensors:
            raise DataError(f"duplicate parameter name {name!r}")
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise DataError(f"unknown parameter {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def tensors(self) -> Iterator[Tensor]:
        return iter(self._tensors.values())

    def total_size(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def check_finite(self) -> None:
        for name, t in self._tensors.items():
            t.check_finite(f"parameter {name!r}")


def save_checkpoint(params: ModelParams, path) -> None:
    blobs = []
    entries = []
    offset = 0
    for name, t in params.items():
        blob = tns_bytes(t)
        entries.append({"name": name, "shape": list(t.shape), "dtype": t.dtype, "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    manifest = json.dumps(
        {"seed": params.seed, "meta": params.meta, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != _MAGIC:
        raise DataError("bad checkpoint magic at byte 0")
    if len(buf) < 8:
        raise DataError("truncated checkpoint header at byte 4")
    (mlen,) = struct.unpack_from("<I", buf, 4)
    mstart = 8
    if len(buf) < mstart + mlen:
        raise DataError(f"truncated checkpoint manifest at byte {mstart}")
    try:
        manifest = json.loads(buf[mstart:mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"unreadable checkpoint manifest: {exc}") from None
    base = mstart + mlen
    params = ModelParams(seed=manifest.get("seed"), meta=manifest.get("meta"))
    for entry in manifest["tensors"]:
        t, _ = tns_from_bytes(buf, base + int(entry["offset"]))
        if list(t.shape) != list(entry["shape"]):
            raise DataError(
                f"checkpoint shape mismatch for {entry['name']!r}: "
                f"manifest {entry['shape']} vs payload {list(t.shape)}")
        params.add(entry["name"], t)
    return params
