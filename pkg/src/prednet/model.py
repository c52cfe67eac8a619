"""The stacked predictive-coding state machine.

Each layer holds a recurrent representation (a ConvLSTM), a convolutional
prediction of the layer's target, and rectified error units comparing the
two. Within a timestep the update runs in two passes: a top-down pass
refreshing every representation (upper layers first, their state upsampled
into the layer below), then a bottom-up pass computing predictions, errors,
and the next layer's target from the forwarded tensor.

The standard wiring forwards the split error units both laterally (into the
layer's own ConvLSTM on the next step) and upward. Control variants rewire
what is forwarded — raw target activations for the encoder-decoder family,
linear errors, or sign-split activations — while keeping module interfaces
and the training loss identical.
"""

from __future__ import annotations

from contextlib import nullcontext
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .config import PredNetConfig
from .tape import Parameter, Tape, Value, as_value
from .tensor import ShapeError, checked_mode_enabled

GATE_NAMES = ("input", "forget", "cell", "output")


@dataclass
class NetworkState:
    """Per-layer recurrent state advanced by :meth:`PredNet.step`.

    ``lateral`` holds the tensor each layer forwarded on the previous step:
    error units in the standard wiring, activations in the encoder-decoder
    controls.
    """

    rep: list[Value]
    cell: list[Value]
    lateral: list[Value]


@dataclass
class StepOutput:
    prediction: Value
    errors: list[Value]
    state: NetworkState


@dataclass
class SequenceResult:
    predictions: list[Value]
    errors: list[list[Value]]  # [t][layer]
    error_means: list[list[Value]]  # [t][layer], scalar nodes
    state: NetworkState

    def prediction_array(self) -> np.ndarray:
        """Predictions stacked to (t, n, c, h, w)."""
        return np.stack([p.data for p in self.predictions])


def convlstm_cell(inputs, hidden, cell, gates) -> tuple[Value, Value]:
    """One ConvLSTM update from the concatenated layer inputs.

    ``gates`` is a sequence of (kernel, bias) pairs in input/forget/cell/
    output order; the four gate convolutions are evaluated as a single
    stacked convolution and sliced apart. ``inputs`` already contains the
    previous hidden state alongside the lateral and top-down tensors.
    """
    inputs, hidden, cell = as_value(inputs), as_value(hidden), as_value(cell)
    if hidden.data.shape != cell.data.shape:
        raise ShapeError(
            f"hidden/cell shape mismatch: {hidden.data.shape} vs {cell.data.shape}"
        )
    w_all = K.concat([w for w, _ in gates], axis=0)
    b_all = K.concat([b for _, b in gates], axis=0)
    pre = K.conv2d(inputs, w_all, b_all)
    c = hidden.data.shape[1]
    gate_in = K.sigmoid(K.slice_channels(pre, 0, c))
    gate_forget = K.sigmoid(K.slice_channels(pre, c, 2 * c))
    candidate = K.tanh(K.slice_channels(pre, 2 * c, 3 * c))
    gate_out = K.sigmoid(K.slice_channels(pre, 3 * c, 4 * c))
    new_cell = K.add(K.hadamard(gate_forget, cell), K.hadamard(gate_in, candidate))
    new_hidden = K.hadamard(gate_out, K.tanh(new_cell))
    return new_hidden, new_cell


def error_unit(target, prediction) -> Value:
    """Split rectified error: positive deviations first, negative after,
    concatenated along channels (doubling the width)."""
    target, prediction = as_value(target), as_value(prediction)
    if target.data.shape != prediction.data.shape:
        raise ShapeError(
            f"error_unit shape mismatch: {target.data.shape} vs {prediction.data.shape}"
        )
    return K.concat_channels(
        K.relu(K.subtract(target, prediction)),
        K.relu(K.subtract(prediction, target)),
    )


class PredNet:
    """Weights plus wiring for one configuration.

    The constructor builds the variant selected by ``config.variant``; the
    set of parameter names is shared across variants so checkpoints stay
    self-describing. Kernels draw from a Glorot-uniform distribution, the
    forget-gate bias starts at +1, and all other biases at zero, so the
    first prediction is exactly spatially uniform.

    A model instance is single-owner while stepping; frozen weights may be
    shared read-only across evaluation threads.
    """

    def __init__(self, config: PredNetConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        for layer in range(config.num_layers):
            c_l = config.channels[layer]
            k_r = config.filter_size_r
            c_in = config.lstm_in_channels(layer)
            for gate in GATE_NAMES:
                self._add(
                    f"layer{layer:02d}.lstm.{gate}.weight",
                    self._glorot(rng, (c_l, c_in, k_r, k_r)),
                )
                bias = np.full((c_l,), 1.0 if gate == "forget" else 0.0, self.dtype)
                self._add(f"layer{layer:02d}.lstm.{gate}.bias", bias)
            k_p = config.filter_size_ahat
            a_ch = config.a_channels(layer)
            self._add(
                f"layer{layer:02d}.pred.weight",
                self._glorot(rng, (a_ch, c_l, k_p, k_p)),
            )
            self._add(f"layer{layer:02d}.pred.bias", np.zeros((a_ch,), self.dtype))
            if layer >= 1:
                k_a = config.filter_size_a
                self._add(
                    f"layer{layer:02d}.target.weight",
                    self._glorot(
                        rng, (a_ch, config.forward_channels(layer - 1), k_a, k_a)
                    ),
                )
                self._add(f"layer{layer:02d}.target.bias", np.zeros((a_ch,), self.dtype))

    def _glorot(self, rng: np.random.Generator, shape) -> np.ndarray:
        c_out, c_in, k, _ = shape
        limit = np.sqrt(6.0 / ((c_in + c_out) * k * k))
        return rng.uniform(-limit, limit, size=shape).astype(self.dtype)

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Parameter(data, name)

    # -- parameter access -----------------------------------------------------

    def parameters(self) -> list[Parameter]:
        """All parameters in a fixed, deterministic order."""
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def weight_arrays(self) -> dict[str, np.ndarray]:
        """Copies of all parameter arrays, keyed by name."""
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_weight_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(
                f"weight set mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        for name, p in self.params.items():
            a = np.asarray(arrays[name], dtype=self.dtype)
            if a.shape != p.data.shape:
                raise ShapeError(
                    f"{name}: expected shape {p.data.shape}, got {a.shape}"
                )
            p.data = a.copy()

    def _gates(self, layer: int):
        return [
            (
                self.params[f"layer{layer:02d}.lstm.{g}.weight"],
                self.params[f"layer{layer:02d}.lstm.{g}.bias"],
            )
            for g in GATE_NAMES
        ]

    # -- state ------------------------------------------------------------------

    def init_state(self, batch: int, height: int, width: int) -> NetworkState:
        """Zero-filled recurrent state at the correct per-layer scales."""
        num_layers = self.config.num_layers
        divisor = 2 ** (num_layers - 1)
        if height % divisor or width % divisor:
            raise ShapeError(
                f"spatial dims must be divisible by {divisor} for "
                f"{num_layers} layers, got {height}x{width}"
            )
        rep, cell, lateral = [], [], []
        for layer in range(num_layers):
            h_l, w_l = height >> layer, width >> layer
            c_l = self.config.channels[layer]
            rep.append(Value(np.zeros((batch, c_l, h_l, w_l), self.dtype)))
            cell.append(Value(np.zeros((batch, c_l, h_l, w_l), self.dtype)))
            lateral.append(
                Value(
                    np.zeros(
                        (batch, self.config.forward_channels(layer), h_l, w_l),
                        self.dtype,
                    )
                )
            )
        return NetworkState(rep, cell, lateral)

    # -- one timestep -------------------------------------------------------------

    def step(self, state: NetworkState, frame=None, trace=None) -> StepOutput:
        """Advance one timestep.

        With ``frame=None`` the model feeds its own pixel prediction back as
        the bottom-layer target (free-running extrapolation); the bottom
        error units are then exactly zero.

        ``trace``, if given, collects ("rep"|"pred"|"err"|"target", layer)
        tuples in execution order.
        """
        cfg = self.config
        num_layers = cfg.num_layers
        x = None
        if frame is not None:
            x = self._check_frame(frame, state)

        new_rep: list[Value | None] = [None] * num_layers
        new_cell: list[Value | None] = [None] * num_layers
        for layer in range(num_layers - 1, -1, -1):
            parts = [state.lateral[layer], state.rep[layer]]
            if layer < num_layers - 1:
                parts.append(K.upsample_nn2(new_rep[layer + 1]))
            inputs = K.concat_channels(*parts)
            hidden, cell = convlstm_cell(
                inputs, state.rep[layer], state.cell[layer], self._gates(layer)
            )
            new_rep[layer] = hidden
            new_cell[layer] = cell
            if trace is not None:
                trace.append(("rep", layer))

        prediction: Value | None = None
        target: Value | None = None
        errors: list[Value] = []
        laterals: list[Value] = []
        for layer in range(num_layers):
            pred = K.relu(
                K.conv2d(
                    new_rep[layer],
                    self.params[f"layer{layer:02d}.pred.weight"],
                    self.params[f"layer{layer:02d}.pred.bias"],
                )
            )
            if layer == 0:
                pred = K.satlu(pred, cfg.p_max)
                prediction = pred
                target = x if x is not None else pred
            if trace is not None:
                trace.append(("pred", layer))
            err = self._error(target, pred)
            errors.append(err)
            if trace is not None:
                trace.append(("err", layer))
            laterals.append(self._forwarded(layer, target, err))
            if layer < num_layers - 1:
                target = K.maxpool2(
                    K.relu(
                        K.conv2d(
                            laterals[layer],
                            self.params[f"layer{layer + 1:02d}.target.weight"],
                            self.params[f"layer{layer + 1:02d}.target.bias"],
                        )
                    )
                )
                if trace is not None:
                    trace.append(("target", layer + 1))

        return StepOutput(prediction, errors, NetworkState(new_rep, new_cell, laterals))

    def _error(self, target: Value, pred: Value) -> Value:
        if self.config.variant == "prednet_no_E_split":
            return K.subtract(target, pred)
        return error_unit(target, pred)

    def _forwarded(self, layer: int, target: Value, err: Value) -> Value:
        v = self.config.variant
        if v in ("prednet", "prednet_no_E_split"):
            return err
        if v in ("encdec", "encdec_2x_filters"):
            return target
        if v == "encdec_pass_E0":
            return err if layer == 0 else target
        if v == "encdec_pm_split":
            return K.concat_channels(K.relu(target), K.relu(K.scale(target, -1.0)))
        raise AssertionError(v)

    def _check_frame(self, frame, state: NetworkState) -> Value:
        v = as_value(np.asarray(frame.data if isinstance(frame, Value) else frame, self.dtype))
        n, c, h, w = state.rep[0].data.shape
        expect = (n, self.config.channels[0], h, w)
        if v.data.shape != expect:
            raise ShapeError(f"frame shape {v.data.shape}, expected {expect}")
        if checked_mode_enabled():
            lo, hi = float(v.data.min()), float(v.data.max())
            if lo < 0.0 or hi > self.config.p_max:
                raise ValueError(
                    f"frame values [{lo:.4g}, {hi:.4g}] outside [0, {self.config.p_max}]"
                )
        return v

    # -- sequences ----------------------------------------------------------------

    def run_sequence(self, frames, tape: Tape | None = None, trace=None) -> SequenceResult:
        """Run all frames teacher-forced from a zero state.

        ``frames`` is (t, n, c, h, w) or a sequence of (n, c, h, w) arrays.
        With a tape, every kernel application is recorded for backward.
        """
        frames = self._as_frames(frames)
        if len(frames) == 0:
            raise ValueError("empty sequence")
        ctx = tape if tape is not None else nullcontext()
        with ctx:
            state = self.init_state(*self._dims(frames[0]))
            return self._advance(state, list(frames), 0, trace)

    def extrapolate(
        self,
        frames,
        t_switch: int,
        horizon: int,
        tape: Tape | None = None,
        trace=None,
    ) -> SequenceResult:
        """Teacher-force ``t_switch`` frames, then free-run ``horizon`` more
        steps feeding each pixel prediction back as the next input."""
        frames = self._as_frames(frames)
        if horizon < 0:
            raise ValueError(f"horizon must be >= 0, got {horizon}")
        if not 1 <= t_switch <= len(frames):
            raise ValueError(
                f"t_switch={t_switch} outside the {len(frames)} supplied frames"
            )
        ctx = tape if tape is not None else nullcontext()
        with ctx:
            state = self.init_state(*self._dims(frames[0]))
            return self._advance(state, list(frames[:t_switch]), horizon, trace)

    def _advance(self, state, frames, horizon, trace) -> SequenceResult:
        preds, errs, means = [], [], []
        for t in range(len(frames) + horizon):
            frame = frames[t] if t < len(frames) else None
            out = self.step(state, frame, trace)
            state = out.state
            preds.append(out.prediction)
            errs.append(out.errors)
            means.append([self._error_mean(e) for e in out.errors])
        return SequenceResult(preds, errs, means, state)

    def _error_mean(self, err: Value) -> Value:
        if self.config.variant == "prednet_no_E_split":
            return K.mean_all(K.absolute(err))
        return K.mean_all(err)

    def _as_frames(self, frames):
        if isinstance(frames, np.ndarray):
            if frames.ndim != 5:
                raise ShapeError(
                    f"frames must be (t, n, c, h, w), got shape {frames.shape}"
                )
            return np.asarray(frames, dtype=self.dtype)
        return [np.asarray(f, dtype=self.dtype) for f in frames]

    def _dims(self, frame0) -> tuple[int, int, int]:
        n, _, h, w = np.asarray(frame0).shape
        return n, h, w
