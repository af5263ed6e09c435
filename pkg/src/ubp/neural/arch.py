"""Scaled-down model architectures for the three input families.

Every model ends in a four-unit head read as (mean, log-variance) for each
target, and carries dropout that stays available at inference for
Monte-Carlo posterior sampling.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError
from .layers import (AvgPool1d, Conv1d, Dense, Dropout, Flatten,
                     HeteroscedasticOutput, Network, Relu,
                     split_heteroscedastic)
from .tensor import Tensor, concatenate

RPPG_DROPOUT = 0.2
PPG_DROPOUT = 0.5
IMG_DROPOUT = 0.5


class RegressionModel:
    """Common surface: parameters, deterministic state, heteroscedastic forward."""

    arch: dict
    networks: list[Network]

    @property
    def params(self) -> list[Tensor]:
        return [p for net in self.networks for p in net.params]

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.params]

    def load_state(self, values: list[np.ndarray]):
        params = self.params
        if len(values) != len(params):
            raise ConfigurationError(
                f"state has {len(values)} arrays, model needs {len(params)}")
        for p, v in zip(params, values):
            if p.data.shape != v.shape:
                raise ConfigurationError(
                    f"state shape {v.shape} does not match parameter {p.data.shape}")
            p.data = np.asarray(v, dtype=np.float64).copy()


class PulseWindowRegressor(RegressionModel):
    """BP head over a multi-region pulse window (frames, regions)."""

    def __init__(self, window_frames: int = 150, regions: int = 3,
                 dropout: float = RPPG_DROPOUT, seed: int = 0):
        self.arch = {"name": "rppg", "window_frames": window_frames,
                     "regions": regions, "dropout": dropout}
        rng = np.random.default_rng(np.random.SeedSequence([0x0A2C4, seed]))
        self.net = Network((window_frames, regions), [
            Conv1d(8, 7), Relu(), Dropout(dropout), AvgPool1d(2),
            Conv1d(16, 5), Relu(), Dropout(dropout), AvgPool1d(2),
            Flatten(), Dense(32), Relu(), Dense(4),
        ], rng)
        self.networks = [self.net]

    def het_forward(self, x, *, dropout_active: bool = False,
                    rng: np.random.Generator | None = None) -> HeteroscedasticOutput:
        return split_heteroscedastic(
            self.net.forward(x, dropout_active=dropout_active, rng=rng))


class ReconstructionRegressor(RegressionModel):
    """Waveform reconstruction from a spatio-temporal map, then a BP head
    over the reconstructed waveform and its two difference orders.

    The reconstruction stack is deterministic; dropout lives only in the
    regression branches and trunk, which is where posterior sampling of the
    BP estimate belongs.
    """

    def __init__(self, window_frames: int = 150, blocks: int = 16,
                 dropout: float = PPG_DROPOUT, seed: int = 0):
        self.arch = {"name": "ppg", "window_frames": window_frames,
                     "blocks": blocks, "dropout": dropout}
        rng = np.random.default_rng(np.random.SeedSequence([0x0B93D, seed]))
        self.recon = Network((window_frames, 3 * blocks), [
            Conv1d(12, 3), Relu(),
            Conv1d(8, 5), Relu(),
            Conv1d(1, 5),
        ], rng)
        branches = []
        for length in (window_frames, window_frames - 1, window_frames - 2):
            branches.append(Network((length, 1), [
                Conv1d(4, 7), Relu(), Dropout(dropout), AvgPool1d(3), Flatten(),
            ], rng))
        self.branches = branches
        feature_dim = sum(net.out_shape[0] for net in branches)
        self.head = Network((feature_dim,), [
            Dense(32), Relu(), Dropout(dropout), Dense(4),
        ], rng)
        self.networks = [self.recon, *branches, self.head]

    def forward(self, x, *, dropout_active: bool = False,
                rng: np.random.Generator | None = None):
        """Returns (reconstructed waveform (batch, frames), head output)."""
        waveform = self.recon.forward(
            x, dropout_active=dropout_active, rng=rng).reshape(x.shape[0], -1)
        vpg = waveform[:, 1:] - waveform[:, :-1]
        apg = vpg[:, 1:] - vpg[:, :-1]
        features = []
        for net, part in zip(self.branches, (waveform, vpg, apg)):
            expanded = part.reshape(part.shape[0], part.shape[1], 1)
            features.append(net.forward(expanded, dropout_active=dropout_active,
                                        rng=rng))
        merged = concatenate(features, axis=1)
        raw = self.head.forward(merged, dropout_active=dropout_active, rng=rng)
        return waveform, split_heteroscedastic(raw)

    def het_forward(self, x, *, dropout_active: bool = False,
                    rng: np.random.Generator | None = None) -> HeteroscedasticOutput:
        return self.forward(x, dropout_active=dropout_active, rng=rng)[1]


class AppearanceRegressor(RegressionModel):
    """BP head over an appearance feature vector."""

    def __init__(self, feature_dim: int = 16, dropout: float = IMG_DROPOUT,
                 seed: int = 0):
        self.arch = {"name": "img", "feature_dim": feature_dim, "dropout": dropout}
        rng = np.random.default_rng(np.random.SeedSequence([0x0C51F, seed]))
        self.net = Network((feature_dim,), [
            Dense(32), Relu(), Dropout(dropout),
            Dense(32), Relu(), Dropout(dropout),
            Dense(4),
        ], rng)
        self.networks = [self.net]

    def het_forward(self, x, *, dropout_active: bool = False,
                    rng: np.random.Generator | None = None) -> HeteroscedasticOutput:
        return split_heteroscedastic(
            self.net.forward(x, dropout_active=dropout_active, rng=rng))


def build_model(arch: dict, seed: int = 0) -> RegressionModel:
    """Instantiate a model from its checkpoint descriptor."""
    kind = arch.get("name")
    if kind == "rppg":
        return PulseWindowRegressor(arch["window_frames"], arch["regions"],
                                    arch["dropout"], seed=seed)
    if kind == "ppg":
        return ReconstructionRegressor(arch["window_frames"], arch["blocks"],
                                       arch["dropout"], seed=seed)
    if kind == "img":
        return AppearanceRegressor(arch["feature_dim"], arch["dropout"], seed=seed)
    raise ConfigurationError(f"unknown architecture: {arch!r}")
