"""scikit-learn style estimators over the video predictor and readouts.

These wrappers follow the fit/predict/transform protocol (plus
``get_params``/``set_params`` via ``BaseEstimator``) so the models compose
with pipelines, grid search, and cross-validation drivers. Sequence data is
sample-major here, (n_sequences, t, c, h, w); the engine's time-major layout
is an internal detail.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import trainer
from .config import PredNetConfig, lambda_preset
from .model import PredNet
from .readout import (
    DEFAULT_ALPHA_GRID,
    FeatureSpec,
    accuracy,
    classify,
    classify_fit,
    extract_features,
    r2_score,
    ridge_fit,
    ridge_predict,
)


def check_sequence_array(X, p_max: float = 1.0) -> np.ndarray:
    """Validate sample-major sequences: 5-D, finite, within [0, p_max]."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 5:
        raise ValueError(
            f"expected sequences shaped (n, t, c, h, w), got shape {X.shape}"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("sequences contain non-finite values")
    lo, hi = float(X.min()), float(X.max())
    if lo < 0.0 or hi > p_max:
        raise ValueError(f"pixel values [{lo:.4g}, {hi:.4g}] outside [0, {p_max}]")
    return X


def _time_major(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(X.transpose(1, 0, 2, 3, 4))


class PredNetVideoPredictor(BaseEstimator, TransformerMixin):
    """Next-frame video predictor with a feature-extracting ``transform``.

    ``fit`` trains on unlabeled sequences; ``predict`` returns the
    teacher-forced next-frame predictions; ``transform`` returns pooled
    representation features usable by any downstream estimator.
    """

    def __init__(
        self,
        channels=(1, 16, 32),
        filter_size: int = 3,
        lambda_layers: str = "L0",
        variant: str = "prednet",
        p_max: float = 1.0,
        epochs: int = 4,
        batch_size: int = 8,
        learning_rate: float = 1e-3,
        lr_halving: bool = True,
        loss_mode: str = "L1_error_units",
        val_fraction: float = 0.1,
        feature_timestep: int = 2,
        seed: int = 0,
    ):
        self.channels = channels
        self.filter_size = filter_size
        self.lambda_layers = lambda_layers
        self.variant = variant
        self.p_max = p_max
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_halving = lr_halving
        self.loss_mode = loss_mode
        self.val_fraction = val_fraction
        self.feature_timestep = feature_timestep
        self.seed = seed

    def _config(self) -> PredNetConfig:
        channels = tuple(self.channels)
        lam = self.lambda_layers
        if isinstance(lam, str):
            lam = lambda_preset(lam, len(channels))
        return PredNetConfig(
            channels=channels,
            filter_size_a=self.filter_size,
            filter_size_ahat=self.filter_size,
            filter_size_r=self.filter_size,
            lambda_layer=tuple(lam),
            p_max=self.p_max,
            variant=self.variant,
        )

    def fit(self, X, y=None):
        X = check_sequence_array(X, self.p_max)
        frames = _time_major(X)
        n = frames.shape[1]
        n_val = min(max(1, int(round(self.val_fraction * n))), n - 1)
        order = np.random.default_rng(self.seed).permutation(n)
        val, tr = frames[:, order[:n_val]], frames[:, order[n_val:]]
        self.config_ = self._config()
        self.model_ = PredNet(self.config_, seed=self.seed)
        schedule = trainer.TrainSchedule(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_halving=self.lr_halving,
            seed=self.seed,
            loss_mode=self.loss_mode,
        )
        self.history_ = trainer.train(self.model_, tr, val, schedule)
        return self

    def _model(self) -> PredNet:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict/transform/score")
        return self.model_

    def predict(self, X) -> np.ndarray:
        """Teacher-forced next-frame predictions, sample-major like X."""
        model = self._model()
        frames = _time_major(check_sequence_array(X, self.p_max))
        preds = model.run_sequence(frames).prediction_array()
        return preds.transpose(1, 0, 2, 3, 4)

    def transform(self, X) -> np.ndarray:
        """Pooled representation features after ``feature_timestep`` frames."""
        model = self._model()
        frames = _time_major(check_sequence_array(X, self.p_max))
        return extract_features(model, frames, FeatureSpec(timestep=self.feature_timestep))

    def score(self, X, y=None) -> float:
        """Negative MSE of next-frame prediction over steps 2..T."""
        frames = _time_major(check_sequence_array(X, self.p_max))
        preds = self._model().run_sequence(frames).prediction_array()
        return -float(np.mean((preds[1:] - frames[1:]) ** 2))


class RidgeReadout(BaseEstimator, RegressorMixin):
    """Closed-form ridge regression with grid-selected regularization."""

    def __init__(self, alphas=DEFAULT_ALPHA_GRID, val_split: float = 0.2, seed: int = 0):
        self.alphas = alphas
        self.val_split = val_split
        self.seed = seed

    def fit(self, X, y):
        self.model_ = ridge_fit(
            X, y, alphas=self.alphas, val_split=self.val_split, seed=self.seed
        )
        self.n_targets_ = self.model_.weights.shape[1]
        self._squeeze = np.asarray(y).ndim == 1
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predict")
        yhat = ridge_predict(self.model_, X)
        return yhat[:, 0] if self._squeeze else yhat

    def score(self, X, y) -> float:
        return r2_score(self.predict(X), np.asarray(y, dtype=np.float64))


class RidgeReadoutClassifier(BaseEstimator, ClassifierMixin):
    """One-vs-rest ridge classification on +/-1 targets."""

    def __init__(self, alphas=DEFAULT_ALPHA_GRID, val_split: float = 0.2, seed: int = 0):
        self.alphas = alphas
        self.val_split = val_split
        self.seed = seed

    def fit(self, X, y):
        self.clf_ = classify_fit(
            X, y, alphas=self.alphas, val_split=self.val_split, seed=self.seed
        )
        self.classes_ = self.clf_.classes
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "clf_"):
            raise NotFittedError("call fit before predict")
        return classify(self.clf_, X)

    def score(self, X, y) -> float:
        return accuracy(self.predict(X), np.asarray(y))
