"""Minimal differentiable-network substrate: tensors with reverse-mode
gradients, layers, heteroscedastic losses, Adam, and checkpoint IO."""

from .tensor import Tensor, avg_pool1d, concatenate, conv1d, dropout
from .layers import (AvgPool1d, Conv1d, Dense, Dropout, Flatten,
                     HeteroscedasticOutput, Network, Relu, Tanh,
                     split_heteroscedastic, LOG_VAR_CLAMP)
from .losses import (batch_triplet, joint_ppg_loss, nll_loss, pulse_loss,
                     PULSE_LOSS_ALPHA, PULSE_LOSS_BETA, PULSE_LOSS_GAMMA)
from .optim import Adam
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .arch import (AppearanceRegressor, PulseWindowRegressor,
                   ReconstructionRegressor, RegressionModel, build_model,
                   RPPG_DROPOUT, PPG_DROPOUT, IMG_DROPOUT)

__all__ = [
    "Tensor", "avg_pool1d", "concatenate", "conv1d", "dropout",
    "AvgPool1d", "Conv1d", "Dense", "Dropout", "Flatten",
    "HeteroscedasticOutput", "Network", "Relu", "Tanh",
    "split_heteroscedastic", "LOG_VAR_CLAMP",
    "batch_triplet", "joint_ppg_loss", "nll_loss", "pulse_loss",
    "PULSE_LOSS_ALPHA", "PULSE_LOSS_BETA", "PULSE_LOSS_GAMMA",
    "Adam", "Checkpoint", "load_checkpoint", "save_checkpoint",
    "AppearanceRegressor", "PulseWindowRegressor", "ReconstructionRegressor",
    "RegressionModel", "build_model",
    "RPPG_DROPOUT", "PPG_DROPOUT", "IMG_DROPOUT",
]
