"""Network layers and the sequential container.

Layers are declarative: a `Network` is built from a layer list plus the
(batch-free) input shape, allocating fan-in-scaled uniform parameters from
the seed it is given. Dropout masks are drawn from the generator passed to
`forward`, so a fixed seed reproduces a forward pass exactly — that is what
makes Monte-Carlo dropout sampling deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from .tensor import Tensor, avg_pool1d, conv1d, dropout


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base layer: stateless unless `build` allocates parameters."""

    params: list[Tensor]

    def __init__(self):
        self.params = []

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator):
        return in_shape

    def forward(self, x: Tensor, *, dropout_active: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, units: int):
        super().__init__()
        self.units = units
        self.weight = None
        self.bias = None

    def build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise ConfigurationError(
                f"dense layer needs flat input, got shape {in_shape}")
        fan_in = in_shape[0]
        self.weight = Tensor(_fan_in_uniform(rng, (fan_in, self.units), fan_in),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(self.units), requires_grad=True)
        self.params = [self.weight, self.bias]
        return (self.units,)

    def forward(self, x, **_):
        return x @ self.weight + self.bias


class Conv1d(Layer):
    def __init__(self, filters: int, kernel: int):
        super().__init__()
        if kernel % 2 == 0 or kernel < 1:
            raise ConfigurationError("conv kernel must be odd and positive")
        self.filters = filters
        self.kernel = kernel
        self.weight = None
        self.bias = None

    def build(self, in_shape, rng):
        if len(in_shape) != 2:
            raise ConfigurationError(
                f"conv layer needs (frames, channels) input, got shape {in_shape}")
        frames, channels = in_shape
        fan_in = channels * self.kernel
        self.weight = Tensor(
            _fan_in_uniform(rng, (self.kernel, channels, self.filters), fan_in),
            requires_grad=True)
        self.bias = Tensor(np.zeros(self.filters), requires_grad=True)
        self.params = [self.weight, self.bias]
        return (frames, self.filters)

    def forward(self, x, **_):
        return conv1d(x, self.weight, self.bias)


class Relu(Layer):
    def forward(self, x, **_):
        return x.relu()


class Tanh(Layer):
    def forward(self, x, **_):
        return x.tanh()


class Dropout(Layer):
    def __init__(self, p: float):
        super().__init__()
        if not (0 <= p < 1):
            raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, *, dropout_active=False, rng=None):
        if not dropout_active or self.p == 0:
            return x
        if rng is None:
            raise ConfigurationError("dropout_active requires a random generator")
        return dropout(x, self.p, rng)


class AvgPool1d(Layer):
    def __init__(self, width: int):
        super().__init__()
        self.width = width

    def build(self, in_shape, rng):
        frames, channels = in_shape
        if frames // self.width < 1:
            raise ConfigurationError(f"cannot pool {frames} frames by {self.width}")
        return (frames // self.width, channels)

    def forward(self, x, **_):
        return avg_pool1d(x, self.width)


class Flatten(Layer):
    def build(self, in_shape, rng):
        return (int(np.prod(in_shape)),)

    def forward(self, x, **_):
        return x.reshape(x.shape[0], -1)


class Network:
    """A sequential stack with shape checking and deterministic init."""

    def __init__(self, in_shape: tuple[int, ...], layers: list[Layer],
                 rng: np.random.Generator):
        self.in_shape = tuple(in_shape)
        self.layers = layers
        shape = self.in_shape
        for layer in layers:
            shape = layer.build(shape, rng)
        self.out_shape = shape

    @property
    def params(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.params]

    def forward(self, x, *, dropout_active: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if tuple(x.shape[1:]) != self.in_shape:
            raise ConfigurationError(
                f"input shape {tuple(x.shape[1:])} does not match network "
                f"input {self.in_shape}")
        for layer in self.layers:
            x = layer.forward(x, dropout_active=dropout_active, rng=rng)
        return x


LOG_VAR_CLAMP = 10.0


@dataclass
class HeteroscedasticOutput:
    """Predictive mean and log-variance for both targets, in normalized units."""

    mu_sbp: Tensor
    s_sbp: Tensor
    mu_dbp: Tensor
    s_dbp: Tensor

    def means(self) -> np.ndarray:
        """(batch, 2) array of predictive means."""
        return np.stack([self.mu_sbp.data, self.mu_dbp.data], axis=1)

    def log_vars(self) -> np.ndarray:
        """(batch, 2) array of clamped log-variances."""
        return np.stack([self.s_sbp.data, self.s_dbp.data], axis=1)


def split_heteroscedastic(raw: Tensor) -> HeteroscedasticOutput:
    """Split a (batch, 4) head output into means and clamped log-variances."""
    if raw.shape[-1] != 4:
        raise ConfigurationError(
            f"heteroscedastic head must emit 4 values, got {raw.shape[-1]}")
    return HeteroscedasticOutput(
        mu_sbp=raw[:, 0],
        s_sbp=raw[:, 1].clip(-LOG_VAR_CLAMP, LOG_VAR_CLAMP),
        mu_dbp=raw[:, 2],
        s_dbp=raw[:, 3].clip(-LOG_VAR_CLAMP, LOG_VAR_CLAMP),
    )
