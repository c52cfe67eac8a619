"""Linear decoding of latent parameters from frozen representations.

Features are the representation units after a chosen number of input
frames, spatially average-pooled to the coarsest selected layer's grid and
concatenated in ascending layer order. Decoders are closed-form ridge
regressors (features standardized per dimension, targets centered) with the
regularizer chosen on an internal validation split; classification is
one-vs-rest ridge on +/-1 targets with argmax prediction.

The comparison harness scores the same readouts on a trained model and on
freshly initialized models of the same architecture, with shared splits so
the comparison is paired.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import PredNet
from .synthdata import SequenceBatch

DEFAULT_ALPHA_GRID = tuple(float(a) for a in np.logspace(-4, 4, 9))

#: Latents whose earliest informative step needs motion (two frames seen).
DYNAMIC_TARGETS = ("velocity",)


@dataclass(frozen=True)
class FeatureSpec:
    """Which representations to read and when.

    ``timestep`` is 1-based: features are taken after that many input
    frames. ``layers`` of None selects every layer.
    """

    timestep: int = 2
    layers: tuple[int, ...] | None = None

    def resolved_layers(self, num_layers: int) -> tuple[int, ...]:
        layers = tuple(range(num_layers)) if self.layers is None else tuple(self.layers)
        if not layers:
            raise ValueError("feature spec selects no layers")
        if any(l < 0 or l >= num_layers for l in layers):
            raise ValueError(f"layer selection {layers} outside 0..{num_layers - 1}")
        if self.timestep < 1:
            raise ValueError(f"timestep must be >= 1, got {self.timestep}")
        return tuple(sorted(layers))


def feature_dim(config, spec: FeatureSpec, height: int, width: int) -> int:
    """Dimensionality of the pooled, concatenated feature vector."""
    layers = spec.resolved_layers(config.num_layers)
    coarsest = max(layers)
    cells = (height >> coarsest) * (width >> coarsest)
    return sum(config.channels[l] for l in layers) * cells


def _block_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return arr
    n, c, h, w = arr.shape
    return arr.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))


def extract_features(
    model: PredNet, frames: np.ndarray, spec: FeatureSpec, batch_size: int = 64
) -> np.ndarray:
    """Run the network ``spec.timestep`` steps and pool its representations.

    Returns a (sequences, dim) float64 matrix; identical inputs give
    identical features.
    """
    frames = getattr(frames, "frames", frames)
    layers = spec.resolved_layers(model.config.num_layers)
    if frames.shape[0] < spec.timestep:
        raise ValueError(
            f"feature timestep {spec.timestep} exceeds the {frames.shape[0]} frames"
        )
    coarsest = max(layers)
    chunks = []
    for start in range(0, frames.shape[1], batch_size):
        sub = frames[: spec.timestep, start : start + batch_size]
        state = model.run_sequence(sub).state
        pooled = [
            _block_mean(state.rep[l].data.astype(np.float64), 2 ** (coarsest - l))
            for l in layers
        ]
        chunks.append(
            np.concatenate([p.reshape(p.shape[0], -1) for p in pooled], axis=1)
        )
    return np.concatenate(chunks, axis=0)


# ---------------------------------------------------------------------------
# ridge regression
# ---------------------------------------------------------------------------


@dataclass
class RidgeModel:
    """Closed-form ridge fit on standardized features.

    ``weights`` act on standardized inputs; :attr:`coefficients` and
    :attr:`intercept` express the same map in the original feature space.
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    weights: np.ndarray  # (dim, targets)
    y_mean: np.ndarray  # (targets,)
    alpha: float
    val_mse: float

    @property
    def coefficients(self) -> np.ndarray:
        return self.weights / self.x_scale[:, None]

    @property
    def intercept(self) -> np.ndarray:
        return self.y_mean - self.x_mean @ self.coefficients


def ridge_predict(model: RidgeModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return (X - model.x_mean) / model.x_scale @ model.weights + model.y_mean


def ridge_fit(
    X,
    y,
    alphas=DEFAULT_ALPHA_GRID,
    val_split: float = 0.2,
    seed: int = 0,
) -> RidgeModel:
    """Solve (X'X + alpha*I) w = X'y per grid point; keep the alpha with the
    lowest validation MSE (smallest alpha wins ties).

    The returned model is the one fitted on the training part of the split,
    so its validation score is by construction the grid optimum. A singular
    system at alpha = 0 is skipped with a warning.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n, dim = X.shape
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]}")
    if n < 2:
        raise ValueError(f"need at least 2 rows to fit, got {n}")
    alphas = sorted(float(a) for a in alphas)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(round(val_split * n))
    if n_val == 0 and len(alphas) > 1:
        raise ValueError("selecting among several alphas requires a validation split")
    n_val = min(n_val, n - 1)
    val_idx, train_idx = order[:n_val], order[n_val:]
    Xtr, ytr = X[train_idx], y[train_idx]

    x_mean = Xtr.mean(axis=0)
    x_scale = Xtr.std(axis=0)
    x_scale[x_scale == 0.0] = 1.0
    y_mean = ytr.mean(axis=0)
    Xs = (Xtr - x_mean) / x_scale
    yc = ytr - y_mean
    gram = Xs.T @ Xs
    xty = Xs.T @ yc

    best: RidgeModel | None = None
    for alpha in alphas:
        if alpha == 0.0 and np.linalg.matrix_rank(gram) < dim:
            warnings.warn("singular system at alpha=0; grid point skipped")
            continue
        try:
            w = np.linalg.solve(gram + alpha * np.eye(dim), xty)
        except np.linalg.LinAlgError:
            warnings.warn(f"linear solve failed at alpha={alpha}; grid point skipped")
            continue
        model = RidgeModel(x_mean, x_scale, w, y_mean, alpha, np.nan)
        if n_val:
            resid = ridge_predict(model, X[val_idx]) - y[val_idx]
            model.val_mse = float(np.mean(resid**2))
        else:
            model.val_mse = float(np.mean((Xs @ w - yc) ** 2))
        if best is None or model.val_mse < best.val_mse:
            best = model
    if best is None:
        raise ValueError("every alpha grid point was singular; nothing fitted")
    return best


def r2_score(y_pred, y_true) -> float:
    """Coefficient of determination, averaged uniformly over target columns.

    Zero-variance targets make the score undefined; the sentinel is NaN.
    """
    yp = np.asarray(y_pred, dtype=np.float64)
    yt = np.asarray(y_true, dtype=np.float64)
    if yp.shape != yt.shape:
        raise ValueError(f"shape mismatch: {yp.shape} vs {yt.shape}")
    if yp.ndim == 1:
        yp, yt = yp[:, None], yt[:, None]
    ss_tot = ((yt - yt.mean(axis=0)) ** 2).sum(axis=0)
    if np.any(ss_tot == 0.0):
        return float("nan")
    ss_res = ((yt - yp) ** 2).sum(axis=0)
    return float(np.mean(1.0 - ss_res / ss_tot))


# ---------------------------------------------------------------------------
# one-vs-rest classification
# ---------------------------------------------------------------------------


@dataclass
class RidgeClassifierModel:
    scores: RidgeModel
    classes: np.ndarray


def classify_fit(
    X,
    labels,
    alphas=DEFAULT_ALPHA_GRID,
    val_split: float = 0.2,
    seed: int = 0,
    classes=None,
) -> RidgeClassifierModel:
    """One ridge regressor per class on +/-1 targets, shared alpha."""
    labels = np.asarray(labels)
    present = np.unique(labels)
    if classes is None:
        classes = present
    else:
        classes = np.asarray(classes)
        missing = set(classes.tolist()) - set(present.tolist())
        if missing:
            raise ValueError(f"classes absent from training data: {sorted(missing)}")
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes, got {len(classes)}")
    targets = np.where(labels[:, None] == classes[None, :], 1.0, -1.0)
    model = ridge_fit(X, targets, alphas=alphas, val_split=val_split, seed=seed)
    return RidgeClassifierModel(model, classes)


def classify(clf: RidgeClassifierModel, X) -> np.ndarray:
    scores = ridge_predict(clf.scores, X)
    return clf.classes[np.argmax(scores, axis=1)]


def accuracy(pred_labels, true_labels) -> float:
    pred_labels = np.asarray(pred_labels)
    true_labels = np.asarray(true_labels)
    return float(np.mean(pred_labels == true_labels))


# ---------------------------------------------------------------------------
# trained-vs-random comparison harness
# ---------------------------------------------------------------------------


def default_timestep(target: str) -> int:
    """Earliest informative step: static latents are visible once the first
    frame has propagated (step 2), motion needs one more step."""
    return 3 if target in DYNAMIC_TARGETS else 2


def compare_trained_vs_random(
    trained: PredNet,
    data: SequenceBatch,
    regression_targets=("velocity", "position0", "intensity"),
    class_target: str | None = "shape_id",
    random_seeds=(1,),
    test_fraction: float = 0.5,
    train_sizes=None,
    frame_counts=None,
    n_splits: int = 20,
    alphas=DEFAULT_ALPHA_GRID,
    seed: int = 0,
) -> list[dict]:
    """Paired decoding scores for a trained model vs. fresh initializations.

    Every condition sees identical train/test splits and subset draws.
    Returns flat rows (target, condition, sweep, sweep_value, metric,
    value), ready for CSV.
    """
    if data.latents is None:
        raise ValueError("comparison needs a dataset with latent labels")
    conditions: dict[str, PredNet] = {"trained": trained}
    for s in random_seeds:
        conditions[f"random@{s}"] = PredNet(trained.config, seed=s)

    n = data.count
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = max(1, int(round(test_fraction * n)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    # fresh generators per use so every condition sees identical subset draws
    subset_seeds = [int(rng.integers(2**63)) for _ in range(n_splits)]

    rows: list[dict] = []
    for cond_name, model in conditions.items():
        feats: dict[int, np.ndarray] = {}

        def features_at(t: int, model=model, feats=feats) -> np.ndarray:
            if t not in feats:
                feats[t] = extract_features(model, data.frames, FeatureSpec(timestep=t))
            return feats[t]

        for target in regression_targets:
            t_star = default_timestep(target)
            X = features_at(t_star)
            y = data.latents.target(target)
            fit = ridge_fit(X[train_idx], y[train_idx], alphas=alphas, seed=seed)
            score = r2_score(ridge_predict(fit, X[test_idx]), _as2d(y[test_idx]))
            rows.append(_row(target, cond_name, "", t_star, "r2", score))

        if class_target is not None:
            t_star = default_timestep(class_target)
            X = features_at(t_star)
            labels = data.latents.target(class_target)
            classes = np.unique(labels)
            clf = classify_fit(X[train_idx], labels[train_idx], alphas=alphas, seed=seed)
            acc = accuracy(classify(clf, X[test_idx]), labels[test_idx])
            rows.append(_row(class_target, cond_name, "", t_star, "accuracy", acc))
            pool_alpha = clf.scores.alpha  # reused for the tiny subset fits
            for size in train_sizes or ():
                accs = []
                for split_seed in subset_seeds:
                    split_rng = np.random.default_rng(split_seed)
                    sub = _per_class_subset(labels[train_idx], size, split_rng)
                    idx = train_idx[sub]
                    sub_clf = classify_fit(
                        X[idx], labels[idx], alphas=[pool_alpha],
                        val_split=0.0, seed=seed, classes=classes,
                    )
                    accs.append(accuracy(classify(sub_clf, X[test_idx]), labels[test_idx]))
                rows.append(
                    _row(class_target, cond_name, "train_size", size, "accuracy",
                         float(np.mean(accs)))
                )

        for t in frame_counts or ():
            target = regression_targets[0]
            X = features_at(t)
            y = data.latents.target(target)
            fit = ridge_fit(X[train_idx], y[train_idx], alphas=alphas, seed=seed)
            score = r2_score(ridge_predict(fit, X[test_idx]), _as2d(y[test_idx]))
            rows.append(_row(target, cond_name, "frames", t, "r2", score))
    return rows


def _as2d(y: np.ndarray) -> np.ndarray:
    return y[:, None] if y.ndim == 1 else y


def _row(target, condition, sweep, sweep_value, metric, value) -> dict:
    return {
        "target": target,
        "condition": condition,
        "sweep": sweep,
        "sweep_value": sweep_value,
        "metric": metric,
        "value": value,
    }


def _per_class_subset(labels: np.ndarray, per_class: int, rng) -> np.ndarray:
    picks = []
    for cls in np.unique(labels):
        pool = np.flatnonzero(labels == cls)
        if len(pool) < per_class:
            raise ValueError(
                f"class {cls!r} has only {len(pool)} training rows, need {per_class}"
            )
        picks.append(rng.choice(pool, size=per_class, replace=False))
    return np.concatenate(picks)


def write_readout_csv(rows: list[dict], path: str | Path) -> None:
    fields = ["target", "condition", "sweep", "sweep_value", "metric", "value"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})
