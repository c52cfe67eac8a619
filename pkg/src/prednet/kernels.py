"""Differentiable kernels over NCHW arrays.

Each public function runs a plain numpy forward pass and, when a tape is
active and an input carries gradients, records a pullback for the exact
reverse-mode derivative. Kernels are pure functions of their inputs and safe
to call concurrently; only tapes are single-owner.

Convolutions are same-padded (zero fill, odd kernels) so spatial dims are
preserved; pooling is the only downsampler. The convolution is evaluated as
one GEMM over an im2col view; the input gradient reuses the same path as a
full correlation with the flipped, transposed kernel.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tape import Value, active_tape, as_value
from .tensor import ShapeError, check_finite

# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Unfold same-padded k x k patches into rows of (n*h*w, c*k*k)."""
    p = k // 2
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    sn, sc, sh, sw = xp.strides
    win = as_strided(xp, (n, h, w, c, k, k), (sn, sh, sw, sc, sh, sw), writeable=False)
    return win.reshape(n * h * w, c * k * k)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> np.ndarray:
    n, c, h, wd = x.shape
    co = w.shape[0]
    k = w.shape[2]
    y = _im2col(x, k) @ w.reshape(co, -1).T
    if b is not None:
        y = y + b
    return y.reshape(n, h, wd, co).transpose(0, 3, 1, 2)


def _conv_check(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> None:
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D (n,c,h,w), got {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d kernel must be (c_out,c_in,k,k), got {w.shape}")
    k = w.shape[2]
    if k % 2 == 0:
        raise ShapeError(f"conv2d kernel size must be odd for same padding, got {k}")
    if w.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: kernel expects {w.shape[1]} input "
            f"channels, input has {x.shape[1]}"
        )
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"conv2d bias must be ({w.shape[0]},), got {b.shape}")


def conv2d(x, w, b=None) -> Value:
    """Same-padded 2-D convolution (stride 1) with optional per-channel bias."""
    x, w = as_value(x), as_value(w)
    b = as_value(b) if b is not None else None
    _conv_check(x.data, w.data, None if b is None else b.data)
    check_finite(x.data, "conv2d input")
    out = Value(_conv_forward(x.data, w.data, None if b is None else b.data))
    tape = active_tape()
    needs = x.needs_grad or w.needs_grad or (b is not None and b.needs_grad)
    if tape is not None and needs:
        xd, wd = x.data, w.data

        def pullback(dy):
            co, k = wd.shape[0], wd.shape[2]
            dx = dw = db = None
            if x.needs_grad:
                wt = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
                dx = _conv_forward(dy, wt, None)
            if w.needs_grad:
                dyt = dy.transpose(0, 2, 3, 1).reshape(-1, co)
                dw = (dyt.T @ _im2col(xd, k)).reshape(wd.shape)
            if b is not None and b.needs_grad:
                db = dy.sum(axis=(0, 2, 3))
            return (dx, dw, db) if b is not None else (dx, dw)

        tape.record(out, (x, w, b) if b is not None else (x, w), pullback)
    return out


# ---------------------------------------------------------------------------
# pooling / upsampling
# ---------------------------------------------------------------------------


def maxpool2(x) -> Value:
    """2x2 max pooling, stride 2. Gradient routes to the first maximum of
    each window in row-major scan order."""
    x = as_value(x)
    n, c, h, w = _require_nchw(x.data, "maxpool2")
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    win = (
        x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1)
    out = Value(np.take_along_axis(win, idx[..., None], axis=-1)[..., 0])
    tape = active_tape()
    if tape is not None and x.needs_grad:

        def pullback(dy):
            dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
            np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
            dx = (
                dwin.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )
            return (dx,)

        tape.record(out, (x,), pullback)
    return out


def upsample_nn2(x) -> Value:
    """Nearest-neighbor 2x upsampling; gradient sums each 2x2 block."""
    x = as_value(x)
    n, c, h, w = _require_nchw(x.data, "upsample_nn2")
    out = Value(x.data.repeat(2, axis=2).repeat(2, axis=3))
    tape = active_tape()
    if tape is not None and x.needs_grad:

        def pullback(dy):
            return (dy.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

        tape.record(out, (x,), pullback)
    return out


def _require_nchw(a: np.ndarray, op: str):
    if a.ndim != 4:
        raise ShapeError(f"{op} expects a 4-D (n,c,h,w) array, got {a.shape}")
    check_finite(a, op)
    return a.shape


# ---------------------------------------------------------------------------
# elementwise nonlinearities
# ---------------------------------------------------------------------------


def relu(x) -> Value:
    """max(0, x); subgradient 0 at the kink."""
    x = as_value(x)
    out = Value(np.maximum(x.data, 0))
    tape = active_tape()
    if tape is not None and x.needs_grad:
        mask = x.data > 0
        tape.record(out, (x,), lambda dy: (dy * mask,))
    return out


def satlu(x, p_max: float) -> Value:
    """min(p_max, x): saturation at the pixel ceiling; subgradient 0 when
    saturated."""
    if p_max <= 0:
        raise ValueError(f"p_max must be positive, got {p_max}")
    x = as_value(x)
    out = Value(np.minimum(x.data, p_max))
    tape = active_tape()
    if tape is not None and x.needs_grad:
        mask = x.data < p_max
        tape.record(out, (x,), lambda dy: (dy * mask,))
    return out


def sigmoid(x) -> Value:
    x = as_value(x)
    out = Value(_stable_sigmoid(x.data))
    tape = active_tape()
    if tape is not None and x.needs_grad:
        y = out.data
        tape.record(out, (x,), lambda dy: (dy * y * (1.0 - y),))
    return out


def tanh(x) -> Value:
    x = as_value(x)
    out = Value(np.tanh(x.data))
    tape = active_tape()
    if tape is not None and x.needs_grad:
        y = out.data
        tape.record(out, (x,), lambda dy: (dy * (1.0 - y * y),))
    return out


def absolute(x) -> Value:
    """|x|; subgradient 0 at zero."""
    x = as_value(x)
    out = Value(np.abs(x.data))
    tape = active_tape()
    if tape is not None and x.needs_grad:
        s = np.sign(x.data)
        tape.record(out, (x,), lambda dy: (dy * s,))
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------


def concat(xs, axis: int) -> Value:
    """Concatenate along one axis; gradient splits back at the seams."""
    vals = [as_value(x) for x in xs]
    out = Value(np.concatenate([v.data for v in vals], axis=axis))
    tape = active_tape()
    if tape is not None and any(v.needs_grad for v in vals):
        sizes = [v.data.shape[axis] for v in vals]
        bounds = np.cumsum([0] + sizes)

        def pullback(dy):
            sl = [slice(None)] * dy.ndim
            grads = []
            for i in range(len(vals)):
                sl[axis] = slice(int(bounds[i]), int(bounds[i + 1]))
                grads.append(dy[tuple(sl)])
            return tuple(grads)

        tape.record(out, tuple(vals), pullback)
    return out


def concat_channels(*xs) -> Value:
    """Concatenate NCHW tensors along the channel axis."""
    shapes = [as_value(x).data.shape for x in xs]
    for s in shapes:
        if len(s) != 4:
            raise ShapeError(f"concat_channels expects 4-D inputs, got {s}")
    base = shapes[0]
    for s in shapes[1:]:
        if (s[0], s[2], s[3]) != (base[0], base[2], base[3]):
            raise ShapeError(
                f"concat_channels: batch/spatial dims differ, {base} vs {s}"
            )
    return concat(xs, axis=1)


def slice_channels(x, start: int, stop: int) -> Value:
    """Take channels [start, stop); gradient zero-pads the complement."""
    x = as_value(x)
    if x.data.ndim != 4:
        raise ShapeError(f"slice_channels expects 4-D input, got {x.data.shape}")
    out = Value(x.data[:, start:stop])
    tape = active_tape()
    if tape is not None and x.needs_grad:
        shape = x.data.shape

        def pullback(dy):
            dx = np.zeros(shape, dtype=dy.dtype)
            dx[:, start:stop] = dy
            return (dx,)

        tape.record(out, (x,), pullback)
    return out


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------


def _binary(a, b, fwd, da, db, name: str) -> Value:
    a, b = as_value(a), as_value(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{name}: shape mismatch {a.data.shape} vs {b.data.shape}")
    check_finite(a.data, name)
    check_finite(b.data, name)
    out = Value(fwd(a.data, b.data))
    tape = active_tape()
    if tape is not None and (a.needs_grad or b.needs_grad):
        tape.record(out, (a, b), lambda dy: (da(dy, a.data, b.data), db(dy, a.data, b.data)))
    return out


def add(a, b) -> Value:
    return _binary(a, b, lambda x, y: x + y, lambda dy, x, y: dy, lambda dy, x, y: dy, "add")


def subtract(a, b) -> Value:
    return _binary(
        a, b, lambda x, y: x - y, lambda dy, x, y: dy, lambda dy, x, y: -dy, "subtract"
    )


def hadamard(a, b) -> Value:
    return _binary(
        a, b, lambda x, y: x * y, lambda dy, x, y: dy * y, lambda dy, x, y: dy * x, "hadamard"
    )


def scale(x, alpha: float) -> Value:
    """Multiply by a fixed scalar."""
    x = as_value(x)
    out = Value(x.data * alpha)
    tape = active_tape()
    if tape is not None and x.needs_grad:
        tape.record(out, (x,), lambda dy: (dy * alpha,))
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_all(x) -> Value:
    """Sum of all elements as a 0-d node."""
    x = as_value(x)
    out = Value(x.data.sum())
    tape = active_tape()
    if tape is not None and x.needs_grad:
        shape = x.data.shape
        tape.record(out, (x,), lambda dy: (np.broadcast_to(dy, shape),))
    return out


def mean_all(x) -> Value:
    """Mean of all elements as a 0-d node."""
    x = as_value(x)
    out = Value(x.data.mean())
    tape = active_tape()
    if tape is not None and x.needs_grad:
        shape = x.data.shape
        inv = 1.0 / x.data.size
        tape.record(out, (x,), lambda dy: (np.broadcast_to(dy * inv, shape),))
    return out
