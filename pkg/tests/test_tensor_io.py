import io

import numpy as np
import pytest

from prednet.tensor import (
    TENSOR_MAGIC,
    ShapeError,
    as_nchw,
    checked_mode,
    read_tensor,
    write_tensor,
)


def test_roundtrip_is_bitwise(tmp_path, rng):
    arr = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
    path = tmp_path / "t.ptnsr"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_header_layout(tmp_path):
    arr = np.zeros((1, 2, 3, 4), np.float32)
    path = tmp_path / "t.ptnsr"
    write_tensor(path, arr)
    raw = path.read_bytes()
    assert raw[:8] == TENSOR_MAGIC
    dims = np.frombuffer(raw[8:40], dtype="<u8")
    assert tuple(dims) == (1, 2, 3, 4)
    assert len(raw) == 40 + arr.size * 4


def test_lower_rank_arrays_left_pad():
    buf = io.BytesIO()
    write_tensor(buf, np.arange(6, dtype=np.float32))
    buf.seek(0)
    back = read_tensor(buf)
    assert back.shape == (1, 1, 1, 6)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ptnsr"
    path.write_bytes(b"NOTMAGIC" + b"\0" * 64)
    with pytest.raises(ValueError, match="magic"):
        read_tensor(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.ptnsr"
    write_tensor(path, np.ones((1, 1, 2, 2), np.float32))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ValueError, match="truncated"):
        read_tensor(path)


def test_as_nchw_validates_rank():
    with pytest.raises(ShapeError):
        as_nchw(np.zeros((3, 3)))


def test_checked_mode_rejects_nonfinite():
    bad = np.full((1, 1, 2, 2), np.nan, np.float32)
    as_nchw(bad)  # fine when unchecked
    with checked_mode():
        with pytest.raises(ValueError, match="non-finite"):
            as_nchw(bad)
