import numpy as np
import pytest

from prednet import kernels as K
from prednet.gradcheck import check_gradients
from prednet.tape import Parameter, Tape, Value


def test_relu_is_transparent_for_positive_preactivations(rng):
    w = Parameter(rng.uniform(0.5, 1.0, size=(2, 1, 3, 3)), "w")
    x = np.abs(rng.normal(size=(1, 1, 4, 4))) + 0.1  # all-positive preactivations

    with Tape() as tape:
        loss = K.sum_all(K.relu(K.conv2d(x, w, np.full(2, 1.0))))
    tape.backward(loss)
    grad_relu = w.grad.copy()

    with Tape() as tape:
        loss = K.sum_all(K.conv2d(x, w, np.full(2, 1.0)))
    tape.backward(loss)
    np.testing.assert_array_equal(grad_relu, w.grad)


def test_unused_parameter_gets_exactly_zero(rng):
    used = Parameter(rng.normal(size=(1, 1, 3, 3)), "used")
    unused = Parameter(rng.normal(size=(1, 1, 3, 3)), "unused")
    with Tape() as tape:
        loss = K.sum_all(K.conv2d(np.ones((1, 1, 4, 4)), used, np.zeros(1)))
    tape.backward(loss)
    grads = tape.gradients([used, unused])
    assert np.any(grads[0] != 0)
    np.testing.assert_array_equal(grads[1], np.zeros_like(unused.data))


def test_loss_must_be_scalar():
    x = Parameter(np.ones((1, 1, 2, 2)), "x")
    with Tape() as tape:
        y = K.relu(x)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_loss_must_be_on_tape():
    x = Parameter(np.ones((1, 1, 2, 2)), "x")
    with Tape():
        K.relu(x)
    other = Tape()
    with other:
        stray = K.sum_all(K.relu(x))
    fresh = Tape()
    with pytest.raises(ValueError, match="not recorded"):
        fresh.backward(stray)


def test_constants_are_not_differentiated(rng):
    x = Value(rng.normal(size=(1, 1, 4, 4)))  # constant, not a parameter
    w = Parameter(rng.normal(size=(1, 1, 3, 3)), "w")
    with Tape() as tape:
        loss = K.sum_all(K.conv2d(x, w, np.zeros(1)))
    tape.backward(loss)
    assert x.grad is None
    assert w.grad is not None


def test_two_layer_composition_matches_finite_differences(rng):
    w1 = Parameter(rng.normal(size=(3, 2, 3, 3)) * 0.4, "w1")
    b1 = Parameter(rng.normal(size=3) * 0.2, "b1")
    w2 = Parameter(rng.normal(size=(1, 3, 3, 3)) * 0.4, "w2")
    b2 = Parameter(rng.normal(size=1) * 0.2, "b2")
    x = rng.normal(size=(2, 2, 6, 6))

    def make_loss():
        h = K.tanh(K.conv2d(x, w1, b1))
        return K.mean_all(K.sigmoid(K.conv2d(h, w2, b2)))

    assert check_gradients(make_loss, [w1, b1, w2, b2]) < 1e-4


def test_diamond_reuse_accumulates(rng):
    # x feeds two branches that later merge; gradient must be the sum
    x = Parameter(np.full((1, 1, 2, 2), 0.5), "x")
    with Tape() as tape:
        loss = K.sum_all(K.add(K.scale(x, 2.0), K.hadamard(x, x)))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 3.0))


def test_gradients_requires_backward_first():
    tape = Tape()
    with pytest.raises(RuntimeError, match="backward"):
        tape.gradients([])
