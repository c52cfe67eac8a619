import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prednet import kernels as K
from prednet.config import PredNetConfig
from prednet.gradcheck import check_gradients
from prednet.model import PredNet, convlstm_cell, error_unit
from prednet.tape import Parameter, Value
from prednet.tensor import ShapeError, checked_mode

from conftest import generic_bias_point


def small_config(**kw):
    kw.setdefault("channels", (1, 4))
    return PredNetConfig(**kw)


# ---------------------------------------------------------------------------
# ConvLSTM cell
# ---------------------------------------------------------------------------


def _zero_gates(c_in, c_out, k=3, dtype=np.float64):
    return [
        (Value(np.zeros((c_out, c_in, k, k), dtype)), Value(np.zeros(c_out, dtype)))
        for _ in range(4)
    ]


def test_cell_all_zero_stays_zero():
    gates = _zero_gates(c_in=3, c_out=2)
    inputs = np.zeros((1, 3, 4, 4))
    hidden = np.zeros((1, 2, 4, 4))
    cell = np.zeros((1, 2, 4, 4))
    h2, c2 = convlstm_cell(inputs, hidden, cell, gates)
    np.testing.assert_array_equal(h2.data, hidden)
    np.testing.assert_array_equal(c2.data, cell)


def test_cell_saturated_gates_preserve_memory(rng):
    gates = _zero_gates(c_in=3, c_out=2)
    gates[1][1].data[:] = 20.0  # forget gate wide open
    gates[0][1].data[:] = -20.0  # input gate shut
    inputs = rng.normal(size=(1, 3, 4, 4))
    cell = rng.normal(size=(1, 2, 4, 4))
    _, c2 = convlstm_cell(inputs, np.zeros((1, 2, 4, 4)), cell, gates)
    assert np.max(np.abs(c2.data - cell)) < 1e-8


def test_cell_rejects_hidden_cell_mismatch():
    gates = _zero_gates(c_in=3, c_out=2)
    with pytest.raises(ShapeError, match="hidden/cell"):
        convlstm_cell(
            np.zeros((1, 3, 4, 4)), np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 2, 2)), gates
        )


def test_cell_gradients_match_finite_differences(rng):
    gates = [
        (
            Parameter(rng.normal(size=(2, 5, 3, 3)) * 0.3, f"w{i}"),
            Parameter(rng.normal(size=2) * 0.3, f"b{i}"),
        )
        for i in range(4)
    ]
    inputs = Parameter(rng.normal(size=(1, 5, 4, 4)), "inp")
    hidden = rng.normal(size=(1, 2, 4, 4))
    cell = Parameter(rng.normal(size=(1, 2, 4, 4)), "cell")
    coeff = rng.normal(size=(1, 2, 4, 4))

    def make_loss():
        h2, c2 = convlstm_cell(inputs, hidden, cell, gates)
        return K.sum_all(K.add(K.hadamard(h2, coeff), c2))

    wrt = [inputs, cell] + [p for pair in gates for p in pair]
    assert check_gradients(make_loss, wrt) < 1e-4


# ---------------------------------------------------------------------------
# error units
# ---------------------------------------------------------------------------


def test_error_unit_splits_signed_difference():
    a = np.full((1, 1, 1, 1), 0.2)
    b = np.full((1, 1, 1, 1), 0.5)
    e = error_unit(a, b).data
    np.testing.assert_allclose(e[:, 0], 0.0)
    np.testing.assert_allclose(e[:, 1], 0.3)


def test_error_unit_zero_when_prediction_exact(rng):
    a = rng.normal(size=(2, 3, 4, 4))
    np.testing.assert_array_equal(error_unit(a, a).data, np.zeros((2, 6, 4, 4)))


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (1, 2, 3, 3), elements=st.floats(-5, 5)),
    arrays(np.float64, (1, 2, 3, 3), elements=st.floats(-5, 5)),
)
def test_error_unit_algebraic_identities(a, b):
    e = error_unit(a, b).data
    pos, neg = e[:, :2], e[:, 2:]
    np.testing.assert_array_equal(pos - neg, a - b)
    np.testing.assert_array_equal(pos + neg, np.abs(a - b))


# ---------------------------------------------------------------------------
# state initialization
# ---------------------------------------------------------------------------


def test_init_state_shapes_and_zeros():
    model = PredNet(PredNetConfig(channels=(1, 8)), seed=0)
    state = model.init_state(1, 16, 16)
    assert state.rep[0].data.shape == (1, 1, 16, 16)
    assert state.rep[1].data.shape == (1, 8, 8, 8)
    assert state.lateral[0].data.shape == (1, 2, 16, 16)
    assert state.lateral[1].data.shape == (1, 16, 8, 8)
    total = sum(
        np.abs(v.data).sum() for v in state.rep + state.cell + state.lateral
    )
    assert total == 0.0


def test_init_state_five_layer_top_scale():
    cfg = PredNetConfig(channels=(1, 32, 64, 128, 256))
    model = PredNet(cfg, seed=0)
    state = model.init_state(1, 64, 64)
    assert state.rep[4].data.shape[2:] == (4, 4)


def test_init_state_names_required_divisor():
    model = PredNet(PredNetConfig(channels=(1, 4, 8)), seed=0)
    with pytest.raises(ShapeError, match="divisible by 4"):
        model.init_state(1, 18, 16)


# ---------------------------------------------------------------------------
# single step
# ---------------------------------------------------------------------------


def test_first_prediction_is_spatially_uniform(rng):
    model = PredNet(small_config(), seed=3)
    frame = rng.uniform(0, 1, size=(2, 1, 8, 8)).astype(np.float32)
    out = model.step(model.init_state(2, 8, 8), frame)
    pred = out.prediction.data
    assert pred.var(axis=(2, 3)).max() == 0.0


def test_first_step_zero_bias_prediction_is_zero(rng):
    model = PredNet(small_config(), seed=3)  # default init: zero prediction bias
    frame = rng.uniform(0.1, 1, size=(1, 1, 8, 8)).astype(np.float32)
    out = model.step(model.init_state(1, 8, 8), frame)
    np.testing.assert_array_equal(out.prediction.data, np.zeros_like(frame))
    e0 = out.errors[0].data
    np.testing.assert_array_equal(e0[:, :1], frame)  # positive half carries the frame
    np.testing.assert_array_equal(e0[:, 1:], np.zeros_like(frame))


def test_first_step_bottom_up_equals_feedforward_network(rng):
    cfg = PredNetConfig(channels=(1, 4, 8))
    model = PredNet(cfg, seed=5)
    frame = rng.uniform(0, 1, size=(1, 1, 16, 16)).astype(np.float32)
    out = model.step(model.init_state(1, 16, 16), frame)

    # the same chain evaluated as a plain feedforward network
    a = Value(frame)
    for layer in range(cfg.num_layers):
        pred = K.relu(
            K.conv2d(
                np.zeros((1, cfg.channels[layer], 16 >> layer, 16 >> layer), np.float32),
                model.params[f"layer{layer:02d}.pred.weight"],
                model.params[f"layer{layer:02d}.pred.bias"],
            )
        )
        if layer == 0:
            pred = K.satlu(pred, cfg.p_max)
        err = error_unit(a, pred)
        if layer == cfg.num_layers - 1:
            np.testing.assert_array_equal(err.data, out.errors[layer].data)
            break
        a = K.maxpool2(
            K.relu(
                K.conv2d(
                    err,
                    model.params[f"layer{layer + 1:02d}.target.weight"],
                    model.params[f"layer{layer + 1:02d}.target.bias"],
                )
            )
        )
        np.testing.assert_array_equal(err.data, out.errors[layer].data)


def test_error_units_stay_nonnegative_over_time(rng):
    model = PredNet(small_config(), seed=1)
    frames = rng.uniform(0, 1, size=(5, 2, 1, 8, 8)).astype(np.float32)
    result = model.run_sequence(frames)
    for per_step in result.errors:
        for err in per_step:
            assert err.data.min() >= 0.0


def test_predictions_respect_pixel_ceiling(rng):
    model = PredNet(small_config(p_max=0.8), seed=2)
    generic_bias_point(model)  # push biases around so saturation is exercised
    frames = rng.uniform(0, 0.8, size=(6, 2, 1, 8, 8)).astype(np.float32)
    result = model.run_sequence(frames)
    for p in result.predictions:
        assert p.data.min() >= 0.0
        assert p.data.max() <= 0.8


def test_update_order_is_top_down_then_bottom_up(rng):
    model = PredNet(PredNetConfig(channels=(1, 4, 8)), seed=0)
    frame = rng.uniform(0, 1, size=(1, 1, 8, 8)).astype(np.float32)
    trace = []
    model.step(model.init_state(1, 8, 8), frame, trace=trace)
    rep_events = [e for e in trace if e[0] == "rep"]
    assert rep_events == [("rep", 2), ("rep", 1), ("rep", 0)]
    assert trace.index(("err", 0)) < trace.index(("target", 1))
    assert trace.index(("rep", 0)) < trace.index(("pred", 0))
    assert [e for e in trace if e[0] == "err"] == [("err", 0), ("err", 1), ("err", 2)]


def test_checked_mode_rejects_out_of_range_frames():
    model = PredNet(small_config(), seed=0)
    frame = np.full((1, 1, 8, 8), 1.5, np.float32)
    with checked_mode():
        with pytest.raises(ValueError, match="outside"):
            model.step(model.init_state(1, 8, 8), frame)


def test_step_rejects_wrong_frame_shape():
    model = PredNet(small_config(), seed=0)
    with pytest.raises(ShapeError, match="frame shape"):
        model.step(model.init_state(1, 8, 8), np.zeros((1, 1, 4, 4), np.float32))


# ---------------------------------------------------------------------------
# sequences
# ---------------------------------------------------------------------------


def test_run_sequence_rejects_empty():
    model = PredNet(small_config(), seed=0)
    with pytest.raises(ValueError, match="empty"):
        model.run_sequence(np.zeros((0, 1, 1, 8, 8), np.float32))


def test_single_step_sequence_is_uniform(rng):
    model = PredNet(small_config(), seed=0)
    frames = rng.uniform(0, 1, size=(1, 1, 1, 8, 8)).astype(np.float32)
    result = model.run_sequence(frames)
    assert len(result.predictions) == 1
    assert result.predictions[0].data.var() == 0.0


def test_run_sequence_is_bit_identical(rng):
    frames = rng.uniform(0, 1, size=(4, 2, 1, 8, 8)).astype(np.float32)
    outs = []
    for _ in range(2):
        model = PredNet(small_config(), seed=9)
        outs.append(model.run_sequence(frames).prediction_array())
    assert outs[0].tobytes() == outs[1].tobytes()


def test_extrapolate_zero_horizon_matches_run_sequence(rng):
    model = PredNet(small_config(), seed=4)
    generic_bias_point(model)
    frames = rng.uniform(0, 1, size=(5, 2, 1, 8, 8)).astype(np.float32)
    a = model.run_sequence(frames).prediction_array()
    b = model.extrapolate(frames, t_switch=5, horizon=0).prediction_array()
    assert a.tobytes() == b.tobytes()


def test_extrapolate_stays_in_pixel_range(rng):
    model = PredNet(small_config(), seed=4)
    generic_bias_point(model)
    frames = rng.uniform(0, 1, size=(4, 1, 1, 8, 8)).astype(np.float32)
    result = model.extrapolate(frames, t_switch=4, horizon=6)
    assert len(result.predictions) == 10
    for p in result.predictions:
        assert p.data.min() >= 0.0 and p.data.max() <= 1.0


def test_extrapolate_free_running_bottom_errors_are_zero(rng):
    model = PredNet(small_config(), seed=4)
    frames = rng.uniform(0, 1, size=(3, 1, 1, 8, 8)).astype(np.float32)
    result = model.extrapolate(frames, t_switch=3, horizon=2)
    for t in (3, 4):  # free-running steps
        np.testing.assert_array_equal(
            result.errors[t][0].data, np.zeros_like(result.errors[t][0].data)
        )


def test_extrapolate_validates_t_switch(rng):
    model = PredNet(small_config(), seed=0)
    frames = rng.uniform(0, 1, size=(3, 1, 1, 8, 8)).astype(np.float32)
    with pytest.raises(ValueError, match="t_switch"):
        model.extrapolate(frames, t_switch=5, horizon=1)
