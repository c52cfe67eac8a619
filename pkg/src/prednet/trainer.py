"""Loss assembly, Adam, and the training loops.

The training objective is the layer- and time-weighted sum of mean error
activations; with split rectified error units each layer term is an L1
error. Controls: an L2 pixel objective over steps >= 2, and an extrapolation
objective that scores teacher-forced steps on error units and free-running
steps on mean absolute pixel error against ground truth.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import kernels as K
from .model import PredNet, SequenceResult
from .tape import Tape, Value

LOSS_MODES = ("L1_error_units", "L2_pixel")


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int
    batch_size: int = 8
    samples_per_epoch: int | None = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_halving: bool = True
    seed: int = 0
    loss_mode: str = "L1_error_units"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1/beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "samples_per_epoch": self.samples_per_epoch,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "lr_halving": self.lr_halving,
            "seed": self.seed,
            "loss_mode": self.loss_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        return cls(**d)


def lr_for_epoch(schedule: TrainSchedule, epoch: int) -> float:
    """Learning rate for a 1-based epoch: one x0.1 drop past the midpoint."""
    if schedule.lr_halving and epoch > math.ceil(schedule.epochs / 2):
        return schedule.learning_rate * 0.1
    return schedule.learning_rate


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    step = -lr * m_hat / (sqrt(v_hat) + eps). Raises FloatingPointError on
    non-finite gradients so callers can abort with the last good weights.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads, lr: float) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameter list")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape mismatch for {p!r}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {p!r}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def training_loss(error_means, lambda_layer, time_weights) -> Value:
    """Weighted sum of mean error activations over timesteps and layers.

    ``error_means[t][l]`` are scalar nodes holding the mean activation of
    layer l's error units at step t (mean over batch and units, which folds
    in the per-layer unit count). Zero-weight terms are dropped outright.
    """
    t_steps = len(error_means)
    if len(time_weights) != t_steps:
        raise ValueError(
            f"time weights: expected {t_steps} entries, got {len(time_weights)}"
        )
    terms = []
    for t in range(t_steps):
        if len(error_means[t]) != len(lambda_layer):
            raise ValueError(
                f"layer weights: expected {len(error_means[t])} entries, "
                f"got {len(lambda_layer)}"
            )
        for l, lam in enumerate(lambda_layer):
            w = time_weights[t] * lam
            if w != 0.0:
                terms.append(K.scale(error_means[t][l], w))
    if not terms:
        raise ValueError("loss has no positive lambda terms for this sequence")
    total = terms[0]
    for term in terms[1:]:
        total = K.add(total, term)
    return total


def l2_pixel_loss(predictions, frames) -> Value:
    """Mean squared pixel error over steps 2..T (step 1 is uninformed)."""
    t_steps = len(predictions)
    if t_steps < 2:
        raise ValueError("L2 pixel loss needs at least 2 timesteps")
    total = None
    for t in range(1, t_steps):
        diff = K.subtract(predictions[t], Value(frames[t]))
        term = K.mean_all(K.hadamard(diff, diff))
        total = term if total is None else K.add(total, term)
    return K.scale(total, 1.0 / (t_steps - 1))


def extrapolation_loss(
    result: SequenceResult, frames, t_switch: int, lambda_layer, time_weights
) -> Value:
    """Error-unit loss on teacher-forced steps plus mean absolute pixel
    error on every free-running step."""
    total = training_loss(result.error_means[:t_switch], lambda_layer, time_weights)
    for t in range(t_switch, len(result.predictions)):
        diff = K.subtract(result.predictions[t], Value(frames[t]))
        total = K.add(total, K.mean_all(K.absolute(diff)))
    return total


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class History:
    rows: list[HistoryRow] = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for r in self.rows:
                fh.write(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.lr!r}\n")


def _frames_of(data) -> np.ndarray:
    return getattr(data, "frames", data)


def validation_l1(model: PredNet, val_data, batch_size: int = 32) -> float:
    """Mean per-pixel absolute error of teacher-forced predictions over
    steps 2..T — the model-selection metric."""
    frames = _frames_of(val_data)
    if frames.shape[0] < 2:
        raise ValueError("validation needs sequences of at least 2 steps")
    total, count = 0.0, 0
    for chunk in _chunks(frames, batch_size):
        preds = model.run_sequence(chunk).prediction_array()
        diff = np.abs(preds[1:].astype(np.float64) - chunk[1:].astype(np.float64))
        total += float(diff.sum())
        count += diff.size
    return total / count


def _chunks(frames: np.ndarray, batch_size: int):
    n = frames.shape[1]
    for start in range(0, n, batch_size):
        yield frames[:, start : start + batch_size]


def train(model: PredNet, train_data, val_data, schedule: TrainSchedule) -> History:
    """Epochs of shuffled mini-batches with best-validation selection.

    The model is left holding the weights of the epoch with the lowest
    validation L1. On divergence (non-finite loss or gradients) training
    aborts, keeps the best weights seen, and flags the history.
    """

    def batch_loss(xb):
        result = model.run_sequence(xb)
        if schedule.loss_mode == "L2_pixel":
            return l2_pixel_loss(result.predictions, xb)
        cfg = model.config
        return training_loss(
            result.error_means, cfg.lambda_layer, cfg.time_weights(xb.shape[0])
        )

    return _fit(model, train_data, val_data, schedule, batch_loss, validation_l1)


def train_l2_variant(
    model: PredNet, train_data, val_data, schedule: TrainSchedule
) -> History:
    """Same loop, objective replaced by mean squared pixel error."""
    return train(model, train_data, val_data, replace(schedule, loss_mode="L2_pixel"))


def finetune_extrapolation(
    model: PredNet,
    train_data,
    val_data,
    schedule: TrainSchedule,
    t_total: int = 15,
    t_switch: int = 10,
) -> History:
    """Fine-tune with free-running steps in the loop.

    Each sequence is teacher-forced for ``t_switch`` steps and free-run for
    the remaining ``t_total - t_switch``; the free-run segment is scored by
    mean absolute pixel error against ground truth. ``t_switch == t_total``
    reduces to ordinary training.
    """
    if not 1 <= t_switch <= t_total:
        raise ValueError(f"need 1 <= t_switch <= t_total, got {t_switch}/{t_total}")
    for name, data in (("train", train_data), ("val", val_data)):
        if _frames_of(data).shape[0] < t_total:
            raise ValueError(
                f"{name} sequences have {_frames_of(data).shape[0]} steps, "
                f"need {t_total}"
            )
    horizon = t_total - t_switch
    cfg = model.config
    time_weights = cfg.time_weights(t_switch)

    def batch_loss(xb):
        xb = xb[:t_total]
        result = model.extrapolate(xb, t_switch, horizon)
        return extrapolation_loss(result, xb, t_switch, cfg.lambda_layer, time_weights)

    def val_metric(m, val, batch_size=32):
        frames = _frames_of(val)[:t_total]
        total, count = 0.0, 0
        for chunk in _chunks(frames, batch_size):
            loss = batch_loss(chunk)
            total += float(loss.data) * chunk.shape[1]
            count += chunk.shape[1]
        return total / count

    return _fit(model, train_data, val_data, schedule, batch_loss, val_metric)


def _fit(model, train_data, val_data, schedule, batch_loss, val_metric) -> History:
    frames_tr = _frames_of(train_data)
    n = frames_tr.shape[1]
    if n == 0:
        raise ValueError("empty training dataset")
    params = model.parameters()
    adam = Adam(params, schedule.beta1, schedule.beta2, schedule.eps)
    rng = np.random.default_rng(schedule.seed)
    history = History()
    best_val = math.inf
    best_weights = None

    for epoch in range(1, schedule.epochs + 1):
        lr = lr_for_epoch(schedule, epoch)
        order = rng.permutation(n)
        if schedule.samples_per_epoch is not None:
            order = order[: schedule.samples_per_epoch]
        loss_sum, seen = 0.0, 0
        diverged = False
        for start in range(0, len(order), schedule.batch_size):
            idx = order[start : start + schedule.batch_size]
            xb = frames_tr[:, idx]
            try:
                tape = Tape()
                with tape:
                    loss = batch_loss(xb)
                tape.backward(loss)
                adam.step(tape.gradients(params), lr)
            except FloatingPointError as err:
                warnings.warn(f"training diverged: {err}")
                diverged = True
                break
            loss_sum += float(loss.data) * len(idx)
            seen += len(idx)
            if not math.isfinite(loss_sum):
                warnings.warn("training diverged: non-finite loss")
                diverged = True
                break
        if diverged:
            history.diverged = True
            break
        train_loss = loss_sum / max(seen, 1)
        val_loss = val_metric(model, val_data)
        history.rows.append(HistoryRow(epoch, train_loss, val_loss, lr))
        if val_loss < best_val:
            best_val = val_loss
            best_weights = model.weight_arrays()
            history.best_epoch = epoch

    if best_weights is None:
        raise RuntimeError("training produced no finite epoch; nothing to keep")
    model.load_weight_arrays(best_weights)
    return history
