"""Training losses for the regression heads and the pulse reconstruction path."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .layers import HeteroscedasticOutput
from .tensor import Tensor

PULSE_LOSS_ALPHA = 5.0
PULSE_LOSS_BETA = 10.0
PULSE_LOSS_GAMMA = 15.0


def nll_loss(outputs: HeteroscedasticOutput, labels: np.ndarray) -> Tensor:
    """Heteroscedastic Gaussian negative log-likelihood, summed over targets.

    Per target the batch-mean of r^2 / (2 sigma^2) + log(sigma^2) / 2 with
    sigma^2 = exp(s); the variance term lets the model down-weight noisy
    samples while the log term keeps it from inflating uncertainty
    everywhere. Can be negative: the log term has no floor.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[1] != 2:
        raise UsageError(f"labels must be (batch, 2), got {labels.shape}")
    if labels.shape[0] == 0:
        raise UsageError("empty batch")
    if labels.shape[0] != outputs.mu_sbp.shape[0]:
        raise UsageError("batch size mismatch between outputs and labels")

    def target_term(mu: Tensor, s: Tensor, y: np.ndarray) -> Tensor:
        residual = Tensor(y) - mu
        return (residual * residual * (-s).exp() * 0.5 + s * 0.5).mean()

    return (target_term(outputs.mu_sbp, outputs.s_sbp, labels[:, 0])
            + target_term(outputs.mu_dbp, outputs.s_dbp, labels[:, 1]))


def batch_triplet(signal: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Waveform with forward-difference derivatives, inside the graph.

    `signal` is (batch, length); derivatives are one and two samples shorter.
    """
    vpg = signal[:, 1:] - signal[:, :-1]
    apg = vpg[:, 1:] - vpg[:, :-1]
    return signal, vpg, apg


def _as_pair(pred, truth, name: str) -> tuple[Tensor, np.ndarray]:
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred))
    truth = truth.data if isinstance(truth, Tensor) else np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise UsageError(
            f"{name} length mismatch: predicted {pred.shape} vs true {truth.shape}")
    return pred, truth


def pulse_loss(pred, truth, alpha: float = PULSE_LOSS_ALPHA,
               beta: float = PULSE_LOSS_BETA,
               gamma: float = PULSE_LOSS_GAMMA) -> Tensor:
    """Weighted MSE over a waveform and its two difference orders.

    `pred` and `truth` are triplets: anything exposing `.ppg/.vpg/.apg` or a
    3-sequence of (waveform, first differences, second differences). Each
    part is the per-sample mean squared error averaged over the batch.
    """

    def parts(obj):
        if hasattr(obj, "ppg"):
            return obj.ppg, obj.vpg, obj.apg
        return tuple(obj)

    pred_parts, truth_parts = parts(pred), parts(truth)
    total = None
    for weight, p, t, name in zip((alpha, beta, gamma), pred_parts, truth_parts,
                                  ("ppg", "vpg", "apg")):
        p, t = _as_pair(p, t, name)
        diff = p - Tensor(t)
        term = (diff * diff).mean() * weight
        total = term if total is None else total + term
    return total


def joint_ppg_loss(pulse_term: Tensor, nll_term: Tensor) -> Tensor:
    """Unweighted sum of the reconstruction loss and the regression NLL."""
    return pulse_term + nll_term
