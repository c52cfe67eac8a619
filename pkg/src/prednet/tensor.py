"""NCHW tensor validation and binary tensor serialization.

Every dense quantity in this package (frames, activations, convolution
kernels) is a plain ``numpy.ndarray``. Batched image-like data uses the
(batch, channels, height, width) layout. Training runs at float32; gradient
checking runs the identical code paths at float64.

The on-disk format ("PTNSR01") is an 8-byte magic string, four little-endian
64-bit unsigned dims (n, c, h, w), then raw little-endian float32 values in
row-major order.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from pathlib import Path
from typing import BinaryIO

import numpy as np

TENSOR_MAGIC = b"PTNSR01\n"

DTYPE = np.float32

_checked = False


def checked_mode_enabled() -> bool:
    return _checked


@contextmanager
def checked_mode():
    """Enable finiteness/range validation at kernel boundaries.

    Off by default; the checks cost a full pass over the data.
    """
    global _checked
    prev = _checked
    _checked = True
    try:
        yield
    finally:
        _checked = prev


class ShapeError(ValueError):
    """Raised when an array violates a kernel's shape contract."""


def as_nchw(x, name: str = "input") -> np.ndarray:
    """Validate that ``x`` is a 4-D (n, c, h, w) float array and return it."""
    arr = np.asarray(x)
    if arr.ndim != 4:
        raise ShapeError(
            f"{name}: expected a 4-D (batch, channels, height, width) array, "
            f"got shape {arr.shape}"
        )
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(DTYPE)
    if _checked and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_finite(x: np.ndarray, name: str = "input") -> None:
    if _checked and not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: contains non-finite values")


def write_tensor(dest: str | Path | BinaryIO, arr: np.ndarray) -> None:
    """Write an array in the PTNSR01 container (stored as float32).

    Arrays of fewer than 4 dims are left-padded with singleton dims so that
    vectors and matrices round-trip through the same container.
    """
    a = np.asarray(arr)
    if a.ndim > 4:
        raise ShapeError(f"cannot serialize a {a.ndim}-D array")
    shape = (1,) * (4 - a.ndim) + a.shape
    data = np.ascontiguousarray(a.reshape(shape), dtype="<f4")
    header = TENSOR_MAGIC + struct.pack("<4Q", *shape)
    if hasattr(dest, "write"):
        dest.write(header)
        dest.write(data.tobytes())
    else:
        with open(dest, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes())


def read_tensor(src: str | Path | BinaryIO) -> np.ndarray:
    """Read a PTNSR01 container back into a float32 (n, c, h, w) array."""
    if hasattr(src, "read"):
        return _read_tensor_stream(src)
    with open(src, "rb") as fh:
        return _read_tensor_stream(fh)


def _read_tensor_stream(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(len(TENSOR_MAGIC))
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}; expected {TENSOR_MAGIC!r}")
    dims = struct.unpack("<4Q", fh.read(32))
    count = int(np.prod(dims))
    raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise ValueError("truncated tensor payload")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(DTYPE)
