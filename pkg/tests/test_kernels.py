import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from prednet import kernels as K
from prednet.gradcheck import check_gradients
from prednet.tape import Parameter, Tape
from prednet.tensor import ShapeError

# ---------------------------------------------------------------------------
# brute-force references
# ---------------------------------------------------------------------------


def conv2d_reference(x, w, b):
    """Quadruple-nested-loop direct convolution with same zero padding."""
    n, _, h, wd = x.shape
    co, ci, k, _ = w.shape
    p = k // 2
    out = np.zeros((n, co, h, wd), x.dtype)
    for i in range(n):
        for o in range(co):
            for y in range(h):
                for xx in range(wd):
                    acc = 0.0
                    for ch in range(ci):
                        for a in range(k):
                            for bb in range(k):
                                yy, xc = y + a - p, xx + bb - p
                                if 0 <= yy < h and 0 <= xc < wd:
                                    acc += x[i, ch, yy, xc] * w[o, ch, a, bb]
                    out[i, o, y, xx] = acc + b[o]
    return out


def maxpool_reference(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), x.dtype)
    for i in range(n):
        for ch in range(c):
            for y in range(0, h, 2):
                for xx in range(0, w, 2):
                    out[i, ch, y // 2, xx // 2] = x[i, ch, y : y + 2, xx : xx + 2].max()
    return out


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def test_conv_ones_kernel_counts_neighbors():
    y = K.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1)).data
    assert y[0, 0, 1, 1] == 9.0
    assert y[0, 0, 0, 0] == 4.0


def test_conv_delta_kernel_is_identity(rng):
    x = rng.normal(size=(1, 1, 5, 5))
    delta = np.zeros((1, 1, 3, 3))
    delta[0, 0, 1, 1] = 1.0
    y = K.conv2d(x, delta, np.zeros(1)).data
    np.testing.assert_array_equal(y, x)


def test_conv_matches_nested_loop_reference(rng):
    x = rng.normal(size=(1, 2, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    got = K.conv2d(x, w, b).data
    want = conv2d_reference(x, w, b)
    assert np.max(np.abs(got - want)) < 1e-12


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ShapeError, match="channel mismatch"):
        K.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)), np.zeros(1))


def test_conv_rejects_even_kernel():
    with pytest.raises(ShapeError, match="odd"):
        K.conv2d(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)), np.zeros(1))


def test_conv_is_linear_in_input(rng):
    w = rng.normal(size=(2, 2, 3, 3))
    x = rng.normal(size=(1, 2, 6, 6))
    y = rng.normal(size=(1, 2, 6, 6))
    a, b = 0.7, -1.3
    lhs = K.conv2d(a * x + b * y, w).data
    rhs = a * K.conv2d(x, w).data + b * K.conv2d(y, w).data
    assert np.max(np.abs(lhs - rhs)) < 1e-10


# ---------------------------------------------------------------------------
# pooling / upsampling
# ---------------------------------------------------------------------------


def test_maxpool_window_maximum():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    assert K.maxpool2(x).data[0, 0, 0, 0] == 4.0


def test_maxpool_constant_input_stays_constant():
    x = np.full((1, 2, 4, 4), 0.7)
    np.testing.assert_array_equal(K.maxpool2(x).data, np.full((1, 2, 2, 2), 0.7))


def test_maxpool_matches_window_scan_and_routes_one_cell(rng):
    x = Parameter(rng.normal(size=(2, 3, 8, 8)), "x")
    with Tape() as tape:
        pooled = K.maxpool2(x)
        loss = K.sum_all(pooled)
    np.testing.assert_array_equal(pooled.data, maxpool_reference(x.data))
    tape.backward(loss)
    grad = x.grad.reshape(2, 3, 4, 2, 4, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 3, 16, 4)
    # exactly one unit of gradient lands in each 2x2 window
    np.testing.assert_array_equal(grad.sum(axis=-1), np.ones((2, 3, 16)))
    assert set(np.unique(x.grad)) <= {0.0, 1.0}


def test_maxpool_rejects_odd_dims():
    with pytest.raises(ShapeError, match="even"):
        K.maxpool2(np.zeros((1, 1, 3, 4)))


def test_maxpool_tie_routes_to_first_in_row_major_scan():
    x = Parameter(np.zeros((1, 1, 2, 2)), "x")
    with Tape() as tape:
        loss = K.sum_all(K.maxpool2(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[[[1.0, 0.0], [0.0, 0.0]]]])


def test_upsample_replicates_blocks():
    y = K.upsample_nn2(np.full((1, 1, 1, 1), 5.0)).data
    np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), 5.0))


@settings(max_examples=25, deadline=None)
@given(
    arrays(
        np.float64,
        array_shapes(min_dims=4, max_dims=4, min_side=1, max_side=4),
        elements=st.floats(-10, 10),
    )
)
def test_maxpool_of_upsample_is_identity(x):
    recovered = K.maxpool2(K.upsample_nn2(x)).data
    np.testing.assert_array_equal(recovered, x)


def test_upsample_gradient_matches_finite_differences(rng):
    x = Parameter(rng.normal(size=(1, 2, 3, 3)), "x")
    coeff = rng.normal(size=(1, 2, 6, 6))
    err = check_gradients(lambda: K.sum_all(K.hadamard(K.upsample_nn2(x), coeff)), [x])
    assert err < 1e-6


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def test_activation_values():
    assert K.satlu(np.full((1, 1, 1, 1), 1.7), p_max=1.0).data.item() == 1.0
    assert K.satlu(np.full((1, 1, 1, 1), 0.3), p_max=1.0).data.item() == pytest.approx(0.3)
    assert K.relu(np.full((1, 1, 1, 1), -0.3)).data.item() == 0.0
    assert K.relu(np.full((1, 1, 1, 1), 0.3)).data.item() == pytest.approx(0.3)
    assert K.sigmoid(np.zeros((1, 1, 1, 1))).data.item() == 0.5
    assert K.tanh(np.zeros((1, 1, 1, 1))).data.item() == 0.0


def test_satlu_requires_positive_ceiling():
    with pytest.raises(ValueError, match="p_max"):
        K.satlu(np.zeros((1, 1, 1, 1)), p_max=0.0)


def test_kink_subgradients_are_zero_on_flat_side():
    x = Parameter(np.array([[[[0.0]]]]), "x")
    with Tape() as tape:
        loss = K.sum_all(K.relu(x))
    tape.backward(loss)
    assert x.grad.item() == 0.0
    y = Parameter(np.array([[[[1.0]]]]), "y")
    with Tape() as tape:
        loss = K.sum_all(K.satlu(y, p_max=1.0))
    tape.backward(loss)
    assert y.grad.item() == 0.0


# ---------------------------------------------------------------------------
# structural / arithmetic
# ---------------------------------------------------------------------------


def test_concat_channel_arithmetic(rng):
    a = rng.normal(size=(1, 2, 4, 4))
    b = rng.normal(size=(1, 3, 4, 4))
    out = K.concat_channels(a, b).data
    assert out.shape == (1, 5, 4, 4)
    np.testing.assert_array_equal(out[:, :2], a)
    np.testing.assert_array_equal(out[:, 2:], b)


def test_concat_rejects_spatial_mismatch():
    with pytest.raises(ShapeError, match="spatial"):
        K.concat_channels(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 2, 2)))


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.float64, (1, 2, 3, 3), elements=st.floats(-5, 5)),
    arrays(np.float64, (1, 4, 3, 3), elements=st.floats(-5, 5)),
)
def test_concat_then_slice_recovers_operands(a, b):
    joined = K.concat_channels(a, b)
    np.testing.assert_array_equal(K.slice_channels(joined, 0, 2).data, a)
    np.testing.assert_array_equal(K.slice_channels(joined, 2, 6).data, b)


def test_subtract_self_is_zero(rng):
    x = rng.normal(size=(2, 1, 3, 3))
    np.testing.assert_array_equal(K.subtract(x, x).data, np.zeros_like(x))


def test_hadamard_with_ones_is_identity(rng):
    x = rng.normal(size=(2, 1, 3, 3))
    np.testing.assert_array_equal(K.hadamard(x, np.ones_like(x)).data, x)


def test_arithmetic_rejects_shape_mismatch():
    with pytest.raises(ShapeError, match="shape mismatch"):
        K.add(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


# ---------------------------------------------------------------------------
# gradients of every kernel
# ---------------------------------------------------------------------------


def _kernel_cases(rng):
    """Closures over float64 inputs bounded away from nonlinearity kinks."""
    x = Parameter(rng.normal(size=(2, 3, 4, 4)), "x")
    w = Parameter(rng.normal(size=(2, 3, 3, 3)) * 0.5, "w")
    b = Parameter(rng.normal(size=2), "b")
    xs = Parameter(rng.uniform(0.1, 0.9, size=(1, 2, 4, 4)), "xs")
    pool_in = Parameter(rng.permutation(64).reshape(1, 1, 8, 8).astype(np.float64), "p")
    other = rng.normal(size=(2, 3, 4, 4))
    cases = {
        "conv2d": (lambda: K.sum_all(K.conv2d(x, w, b)), [x, w, b]),
        "maxpool2": (lambda: K.sum_all(K.hadamard(K.maxpool2(pool_in), np.arange(16.0).reshape(1, 1, 4, 4))), [pool_in]),
        "upsample_nn2": (lambda: K.sum_all(K.hadamard(K.upsample_nn2(x), np.ones((2, 3, 8, 8)))), [x]),
        "relu": (lambda: K.sum_all(K.relu(x)), [x]),
        "satlu": (lambda: K.sum_all(K.satlu(xs, p_max=1.0)), [xs]),
        "sigmoid": (lambda: K.sum_all(K.sigmoid(x)), [x]),
        "tanh": (lambda: K.sum_all(K.tanh(x)), [x]),
        "absolute": (lambda: K.sum_all(K.absolute(x)), [x]),
        "concat+slice": (lambda: K.sum_all(K.slice_channels(K.concat_channels(x, K.scale(x, 2.0)), 2, 5)), [x]),
        "add": (lambda: K.sum_all(K.add(x, K.hadamard(x, other))), [x]),
        "subtract": (lambda: K.sum_all(K.hadamard(K.subtract(x, other), x)), [x]),
        "mean_all": (lambda: K.mean_all(K.hadamard(x, x)), [x]),
    }
    return cases


@pytest.mark.parametrize("name", list(_kernel_cases(np.random.default_rng(7)).keys()))
def test_kernel_gradients_match_finite_differences(name):
    make_loss, wrt = _kernel_cases(np.random.default_rng(7))[name]
    assert check_gradients(make_loss, wrt) < 1e-4


def test_repeated_forward_backward_is_bit_identical(rng):
    x = Parameter(rng.normal(size=(1, 2, 4, 4)), "x")
    w = Parameter(rng.normal(size=(3, 2, 3, 3)), "w")

    def run():
        with Tape() as tape:
            loss = K.sum_all(K.relu(K.conv2d(x, w, np.zeros(3))))
        tape.backward(loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    first = run()
    second = run()
    for a, b in zip(first, second):
        assert a.tobytes() == b.tobytes()
