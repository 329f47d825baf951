"""Binary PPM (P6) image and PGM (P5) label-map files, maxval 255 only.

Chosen over compressed formats so parsing stays bit-exact and dependency
free. Malformed input errors carry the byte offset of the problem.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .tensor import Tensor, _np_dtype

_WHITESPACE = b" \t\r\n\x0b\x0c"


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    # skip whitespace and '#' comments
    while pos < len(buf):
        c = buf[pos:pos + 1]
        if c in (b"#",):
            nl = buf.find(b"\n", pos)
            if nl < 0:
                raise DataError(f"unterminated comment at byte {pos}")
            pos = nl + 1
        elif c in _WHITESPACE:
            pos += 1
        else:
            break
    if pos >= len(buf):
        raise DataError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < len(buf) and buf[pos:pos + 1] not in _WHITESPACE and buf[pos:pos + 1] != b"#":
        pos += 1
    return buf[start:pos], pos


def _parse_header(buf: bytes, magic: bytes) -> tuple[int, int, int]:
    if buf[:2] != magic:
        raise DataError(f"expected magic {magic.decode()} at byte 0, got {buf[:2]!r}")
    pos = 2
    values = []
    for _ in range(3):
        token, pos = _next_token(buf, pos)
        if not token.isdigit():
            raise DataError(f"non-numeric header field {token!r} at byte {pos - len(token)}")
        values.append(int(token))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise DataError(f"bad image dimensions {width}x{height} in header")
    if maxval != 255:
        raise DataError(f"unsupported maxval {maxval}; only 255 is accepted")
    if pos >= len(buf) or buf[pos:pos + 1] not in _WHITESPACE:
        raise DataError(f"missing whitespace after maxval at byte {pos}")
    return width, height, pos + 1


def load_image(path, dtype: str = "f64") -> Tensor:
    """Binary PPM -> channel-major 3 x H x W tensor scaled to [0, 1]."""
    with open(path, "rb") as fh:
        buf = fh.read()
    width, height, pos = _parse_header(buf, b"P6")
    need = width * height * 3
    if len(buf) - pos < need:
        raise DataError(f"truncated pixel payload at byte {pos}: need {need} bytes, "
                        f"have {len(buf) - pos}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    pixels = raw.reshape(height, width, 3).transpose(2, 0, 1)
    return Tensor((pixels / 255.0).astype(_np_dtype(dtype)))


def save_image(t: Tensor, path) -> None:
    """Channel-major 3 x H x W tensor in [0, 1] -> binary PPM."""
    if t.rank != 3 or t.shape[0] != 3:
        raise DataError(f"expected a 3 x H x W tensor, got shape {t.shape}")
    arr = np.clip(np.rint(t.data * 255.0), 0, 255).astype(np.uint8)
    _, h, w = t.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.transpose(1, 2, 0).tobytes())


def load_labels(path) -> np.ndarray:
    """Binary PGM -> H x W int64 label map (gray value = class index)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    width, height, pos = _parse_header(buf, b"P5")
    need = width * height
    if len(buf) - pos < need:
        raise DataError(f"truncated label payload at byte {pos}: need {need} bytes, "
                        f"have {len(buf) - pos}")
    raw = np.frombuffer(buf, dtype=np.uint8, count=need, offset=pos)
    return raw.reshape(height, width).astype(np.int64)


def save_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise DataError(f"label map must be 2-D, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise DataError(f"labels out of u8 range: {labels.min()}..{labels.max()}")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(labels.astype(np.uint8).tobytes())
