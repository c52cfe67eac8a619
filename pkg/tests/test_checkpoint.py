import numpy as np
import pytest

from prednet.checkpoint import CHECKPOINT_MAGIC, load_checkpoint, save_checkpoint
from prednet.config import PredNetConfig
from prednet.model import PredNet


def test_roundtrip_restores_exact_weights(tmp_path):
    model = PredNet(PredNetConfig(channels=(1, 4, 8), variant="encdec"), seed=5)
    path = tmp_path / "m.pnetw"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    assert back.config == model.config
    assert set(back.params) == set(model.params)
    for name in model.params:
        assert back.params[name].data.tobytes() == model.params[name].data.tobytes()


def test_save_is_deterministic(tmp_path):
    model = PredNet(PredNetConfig(channels=(1, 4)), seed=1)
    p1, p2 = tmp_path / "a.pnetw", tmp_path / "b.pnetw"
    save_checkpoint(p1, model)
    save_checkpoint(p2, model)
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_header(tmp_path):
    model = PredNet(PredNetConfig(channels=(1, 4)), seed=1)
    path = tmp_path / "m.pnetw"
    save_checkpoint(path, model)
    assert path.read_bytes()[:8] == CHECKPOINT_MAGIC


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.pnetw"
    path.write_bytes(b"WRONGMG\n" + b"\0" * 32)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_loaded_model_predicts_identically(tmp_path, rng):
    model = PredNet(PredNetConfig(channels=(1, 4)), seed=2)
    path = tmp_path / "m.pnetw"
    save_checkpoint(path, model)
    back = load_checkpoint(path)
    frames = rng.uniform(0, 1, size=(3, 2, 1, 8, 8)).astype(np.float32)
    a = model.run_sequence(frames).prediction_array()
    b = back.run_sequence(frames).prediction_array()
    assert a.tobytes() == b.tobytes()
