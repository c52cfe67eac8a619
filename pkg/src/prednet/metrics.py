"""Prediction quality metrics and the evaluation harness.

Scores follow the next-frame protocol: predictions are teacher-forced and
averaged over every step after the first, against the trivial baseline of
copying the previous frame. MSE and PSNR are computed over all channels;
SSIM averages channels to luminance first and aggregates over valid
(unpadded) window positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def mse(pred, actual) -> float:
    """Mean squared error between two arrays of identical shape.

    Parameters
    ----------
    pred, actual : array_like
        Arrays of matching shape.

    Returns
    -------
    float
        Mean of squared elementwise differences, accumulated at float64.
    """
    p = np.asarray(pred, dtype=np.float64)
    a = np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {a.shape}")
    return float(np.mean((p - a) ** 2))


def psnr(pred, actual, p_max: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB: 10*log10(p_max^2 / MSE).

    Identical inputs have zero error; the defined sentinel for that case is
    ``math.inf`` rather than a finite number.
    """
    err = mse(pred, actual)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(p_max * p_max / err)


@dataclass(frozen=True)
class SsimParams:
    """Standard reference configuration: 11x11 Gaussian window (sigma 1.5),
    stability constants K1=0.01, K2=0.03 scaled by the dynamic range."""

    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Isotropic 2-D Gaussian weights normalized to sum to one."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _to_luma(frame: np.ndarray) -> np.ndarray:
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3:
        return frame.mean(axis=0)
    raise ValueError(f"expected (h, w) or (c, h, w) frame, got shape {frame.shape}")


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.shape[0]
    v = sliding_window_view(img, (k, k))
    return np.tensordot(v, win, axes=([2, 3], [0, 1]))


def ssim(pred, actual, params: SsimParams | None = None) -> float:
    """Mean local structural similarity over valid window positions.

    Parameters
    ----------
    pred, actual : array_like
        Single frames, (h, w) or (c, h, w); multi-channel input is averaged
        to luminance first.
    params : SsimParams, optional
        Window and stability constants.

    Returns
    -------
    float
        Score in [-1, 1]; identical inputs score exactly 1.
    """
    p = params or SsimParams()
    x = _to_luma(np.asarray(pred, dtype=np.float64))
    y = _to_luma(np.asarray(actual, dtype=np.float64))
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < p.window_size:
        raise ValueError(
            f"frame {x.shape} smaller than the {p.window_size}x{p.window_size} window"
        )
    win = gaussian_window(p.window_size, p.sigma)
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    var_x = _filter_valid(x * x, win) - mu_x * mu_x
    var_y = _filter_valid(y * y, win) - mu_y * mu_y
    cov = _filter_valid(x * y, win) - mu_x * mu_y
    c1 = (p.k1 * p.dynamic_range) ** 2
    c2 = (p.k2 * p.dynamic_range) ** 2
    score = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(score.mean())


def copy_last_frame(frames: np.ndarray) -> np.ndarray:
    """The trivial predictor: frame t-1 stands in for frame t.

    Index 0 (which the evaluation protocol never scores) holds frame 0.
    """
    if frames.shape[0] < 2:
        raise ValueError("copy-last-frame needs at least 2 timesteps")
    return np.concatenate([frames[:1], frames[:-1]], axis=0)


# ---------------------------------------------------------------------------
# evaluation harness
# ---------------------------------------------------------------------------


@dataclass
class MetricsRow:
    name: str
    mse: float
    psnr: float
    ssim: float


@dataclass
class MetricsReport:
    """Per-model scores in table shape, plus dataset metadata."""

    rows: list[MetricsRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_csv(self, path: str | Path | None = None) -> str:
        lines = ["model,mse,psnr,ssim"]
        for r in self.rows:
            lines.append(f"{_csv_quote(r.name)},{r.mse!r},{r.psnr!r},{r.ssim!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_text(self) -> str:
        width = max([len("model")] + [len(r.name) for r in self.rows])
        lines = [f"{'model'.ljust(width)}  {'MSE':>12}  {'PSNR':>8}  {'SSIM':>8}"]
        for r in self.rows:
            lines.append(
                f"{r.name.ljust(width)}  {r.mse:12.6g}  {r.psnr:8.4g}  {r.ssim:8.4g}"
            )
        return "\n".join(lines) + "\n"

    def grouped_text(self, split: str = "@") -> str:
        """Collapse rows sharing a name prefix into 'first (avg over k)'.

        Useful when the same architecture was evaluated under several seeds
        or hyperparameter draws.
        """
        groups: dict[str, list[MetricsRow]] = {}
        for r in self.rows:
            groups.setdefault(r.name.split(split)[0], []).append(r)
        width = max(len(name) for name in list(groups) + ["model"])
        lines = [f"{'model'.ljust(width)}  {'MSE':>18}  {'PSNR':>16}  {'SSIM':>16}"]
        for name, rows in groups.items():
            cells = []
            for attr in ("mse", "psnr", "ssim"):
                vals = [getattr(r, attr) for r in rows]
                first, avg = vals[0], float(np.mean(vals))
                cells.append(f"{first:.4g} ({avg:.4g})" if len(vals) > 1 else f"{first:.4g}")
            lines.append(
                f"{name.ljust(width)}  {cells[0]:>18}  {cells[1]:>16}  {cells[2]:>16}"
            )
        return "\n".join(lines) + "\n"


def _csv_quote(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def _predict_teacher_forced(model, frames: np.ndarray, batch_size: int) -> np.ndarray:
    preds = []
    for start in range(0, frames.shape[1], batch_size):
        chunk = frames[:, start : start + batch_size]
        preds.append(model.run_sequence(chunk).prediction_array())
    return np.concatenate(preds, axis=1)


def score_predictions(
    name: str,
    preds: np.ndarray,
    frames: np.ndarray,
    p_max: float = 1.0,
    ssim_params: SsimParams | None = None,
) -> MetricsRow:
    """Score a (t, n, c, h, w) prediction stack over steps 2..T."""
    params = ssim_params or SsimParams(dynamic_range=p_max)
    err = mse(preds[1:], frames[1:])
    t_steps, n = frames.shape[:2]
    ssims = [
        ssim(preds[t, i], frames[t, i], params)
        for t in range(1, t_steps)
        for i in range(n)
    ]
    return MetricsRow(
        name=name,
        mse=err,
        psnr=math.inf if err == 0.0 else 10.0 * math.log10(p_max * p_max / err),
        ssim=float(np.mean(ssims)),
    )


def evaluate(
    models,
    data,
    p_max: float = 1.0,
    ssim_params: SsimParams | None = None,
    batch_size: int = 16,
) -> MetricsReport:
    """Score each named model and the copy-last-frame baseline.

    Parameters
    ----------
    models : sequence of (str, PredNet)
        Models to evaluate, in the row order the report should keep.
    data : SequenceBatch or (t, n, c, h, w) array
        Held-out sequences; needs t >= 2.

    Returns
    -------
    MetricsReport
        One row per model plus the baseline row, deterministic order.
    """
    frames = getattr(data, "frames", data)
    if frames.shape[1] == 0:
        raise ValueError("empty dataset")
    rows = []
    for name, model in models:
        preds = _predict_teacher_forced(model, frames, batch_size)
        rows.append(score_predictions(name, preds, frames, p_max, ssim_params))
    rows.append(
        score_predictions("Copy Last Frame", copy_last_frame(frames), frames, p_max, ssim_params)
    )
    metadata = {
        "sequences": int(frames.shape[1]),
        "t_steps": int(frames.shape[0]),
        "scored_steps": "2..T",
    }
    return MetricsReport(rows, metadata)


@dataclass
class ExtrapolationCurve:
    """Per-offset MSE for free-running prediction vs. the frozen baseline."""

    t_switch: int
    offsets: list[int]
    model_mse: list[float]
    baseline_mse: list[float]

    def to_csv(self, path: str | Path | None = None) -> str:
        lines = ["offset,model_mse,copy_last_mse"]
        for off, m, b in zip(self.offsets, self.model_mse, self.baseline_mse):
            lines.append(f"{off},{m!r},{b!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def extrapolation_curve(
    model, data, t_switch: int, horizon: int, batch_size: int = 16
) -> ExtrapolationCurve:
    """MSE at each free-running offset, with the baseline frozen at the last
    seen frame. Offset 1 is the ordinary next-frame prediction."""
    frames = getattr(data, "frames", data)
    if frames.shape[0] < t_switch + horizon:
        raise ValueError(
            f"sequences have {frames.shape[0]} steps; need {t_switch + horizon}"
        )
    preds = []
    for start in range(0, frames.shape[1], batch_size):
        chunk = frames[:, start : start + batch_size]
        preds.append(model.extrapolate(chunk, t_switch, horizon).prediction_array())
    stacked = np.concatenate(preds, axis=1)
    last_seen = frames[t_switch - 1]
    offsets = list(range(1, horizon + 1))
    model_mse, baseline_mse = [], []
    for off in offsets:
        # 1-based step t_switch + off lives at index t_switch + off - 1
        truth = frames[t_switch + off - 1]
        model_mse.append(mse(stacked[t_switch + off - 1], truth))
        baseline_mse.append(mse(last_seen, truth))
    return ExtrapolationCurve(t_switch, offsets, model_mse, baseline_mse)
