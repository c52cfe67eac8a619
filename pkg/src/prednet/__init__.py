"""Predictive-coding video prediction.

A stack of recurrent layers each predicts its own input and forwards only
the rectified prediction error; training minimizes the weighted error-unit
activity. The package bundles the differentiable kernels and recording tape
the model is built from, training and extrapolation fine-tuning, synthetic
moving-shape data with known latents, evaluation metrics, linear latent
readouts, scikit-learn style estimators, and a CLI.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PredNetConfig, default_time_weights, lambda_preset
from .estimators import (
    PredNetVideoPredictor,
    RidgeReadout,
    RidgeReadoutClassifier,
    check_sequence_array,
)
from .gradcheck import check_gradients
from .metrics import (
    MetricsReport,
    SsimParams,
    copy_last_frame,
    evaluate,
    extrapolation_curve,
    mse,
    psnr,
    ssim,
)
from .model import NetworkState, PredNet, convlstm_cell, error_unit
from .readout import (
    FeatureSpec,
    compare_trained_vs_random,
    extract_features,
    r2_score,
    ridge_fit,
    ridge_predict,
)
from .synthdata import (
    SequenceBatch,
    generate_moving_shapes,
    load_frame_dir,
    scramble_time,
)
from .tape import Parameter, Tape, Value
from .tensor import checked_mode, read_tensor, write_tensor
from .trainer import (
    Adam,
    TrainSchedule,
    finetune_extrapolation,
    train,
    train_l2_variant,
    training_loss,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "FeatureSpec",
    "MetricsReport",
    "NetworkState",
    "Parameter",
    "PredNet",
    "PredNetConfig",
    "PredNetVideoPredictor",
    "RidgeReadout",
    "RidgeReadoutClassifier",
    "SequenceBatch",
    "SsimParams",
    "Tape",
    "TrainSchedule",
    "Value",
    "check_gradients",
    "check_sequence_array",
    "checked_mode",
    "compare_trained_vs_random",
    "convlstm_cell",
    "copy_last_frame",
    "default_time_weights",
    "error_unit",
    "evaluate",
    "extract_features",
    "extrapolation_curve",
    "finetune_extrapolation",
    "generate_moving_shapes",
    "lambda_preset",
    "load_checkpoint",
    "load_frame_dir",
    "mse",
    "psnr",
    "r2_score",
    "read_tensor",
    "ridge_fit",
    "ridge_predict",
    "save_checkpoint",
    "scramble_time",
    "ssim",
    "train",
    "train_l2_variant",
    "training_loss",
    "write_tensor",
]
