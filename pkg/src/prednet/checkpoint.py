"""Model checkpoints: a self-describing single-file weight container.

Layout: the 8-byte magic "PNETW01\\n", a little-endian u64 byte length, the
UTF-8 JSON config block of that length, then every named parameter tensor in
PTNSR01 format, ordered by sorted parameter name. The config fully
determines the parameter names and shapes, so names are not repeated in the
payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import PredNetConfig
from .model import PredNet
from .tensor import read_tensor, write_tensor

CHECKPOINT_MAGIC = b"PNETW01\n"


def save_checkpoint(path: str | Path, model: PredNet) -> None:
    blob = json.dumps({"config": model.config.to_dict()}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(model.params):
            write_tensor(fh, model.params[name].data)


def load_checkpoint(path: str | Path, dtype=np.float32) -> PredNet:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(
                f"bad checkpoint magic {magic!r}; expected {CHECKPOINT_MAGIC!r}"
            )
        (length,) = struct.unpack("<Q", fh.read(8))
        blob = json.loads(fh.read(length).decode())
        config = PredNetConfig.from_dict(blob["config"])
        model = PredNet(config, dtype=dtype)
        arrays = {}
        for name in sorted(model.params):
            expect = model.params[name].data.shape
            arr = read_tensor(fh)
            if arr.size != int(np.prod(expect)):
                raise ValueError(
                    f"{name}: checkpoint tensor has {arr.size} values, "
                    f"expected {int(np.prod(expect))}"
                )
            arrays[name] = arr.reshape(expect)
        model.load_weight_arrays(arrays)
    return model
