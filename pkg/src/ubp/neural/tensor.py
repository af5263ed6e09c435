"""Reverse-mode automatic differentiation over numpy arrays.

A `Tensor` wraps a float64 array and remembers how it was produced; calling
`backward()` on a scalar result accumulates gradients into every reachable
tensor created with `requires_grad=True`. The op set is exactly what the
regression models and losses need: elementwise arithmetic, matmul,
reductions, shape surgery, and the three network primitives (1-D
convolution, average pooling, dropout masking).
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, UsageError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            # Copy: upstream may hand the same buffer to several parents.
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def backward(self):
        """Accumulate gradients of this scalar into all requiring ancestors."""
        if self.data.size != 1:
            raise UsageError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor with no recorded graph")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic -------------------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad, other.data.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(_unbroadcast(grad * other.data, self.data.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(grad * self.data, other.data.shape))

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __truediv__(self, other):
        other = self._lift(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return self._lift(other) * self ** -1.0

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise UsageError("only scalar exponents are supported")
        out = Tensor(self.data ** exponent, parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * exponent * self.data ** (exponent - 1))

        out._backward = backward
        return out

    def __matmul__(self, other):
        other = self._lift(other)
        if other.data.ndim != 2:
            raise UsageError("matmul right operand must be 2-D")
        out = Tensor(self.data @ other.data, parents=(self, other))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad @ other.data.T)
            if other.requires_grad:
                if self.data.ndim == 2:
                    other._accumulate(self.data.T @ grad)
                else:
                    axes = tuple(range(self.data.ndim - 1))
                    other._accumulate(np.tensordot(self.data, grad, (axes, axes)))

        out._backward = backward
        return out

    # -- elementwise nonlinearities ---------------------------------------

    def exp(self):
        value = np.exp(self.data)
        out = Tensor(value, parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * value)

        out._backward = backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad / self.data)

        out._backward = backward
        return out

    def tanh(self):
        value = np.tanh(self.data)
        out = Tensor(value, parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * (1.0 - value * value))

        out._backward = backward
        return out

    def relu(self):
        value = np.maximum(self.data, 0.0)
        out = Tensor(value, parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * (value > 0))

        out._backward = backward
        return out

    def clip(self, low: float, high: float):
        """Clamp values; gradient passes only where the input is inside the band."""
        inside = (self.data >= low) & (self.data <= high)
        out = Tensor(np.clip(self.data, low, high), parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad * inside)

        out._backward = backward
        return out

    # -- reductions & shape ops -------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def backward(grad):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(grad, self.data.shape).copy())
                return
            if not keepdims:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad, self.data.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if np.isscalar(axis) else axis
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))

        def backward(grad):
            if self.requires_grad:
                self._accumulate(grad.reshape(self.data.shape))

        out._backward = backward
        return out

    def __getitem__(self, index):
        out = Tensor(self.data[index], parents=(self,))
        parts = index if isinstance(index, tuple) else (index,)
        basic = all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis
                    for p in parts)

        def backward(grad):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                if basic:
                    # Basic slices never alias, so a direct add is safe and
                    # much faster than the buffered scatter-add.
                    full[index] += grad
                else:
                    np.add.at(full, index, grad)
                self._accumulate(full)

        out._backward = backward
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def concatenate(tensors, axis: int = -1) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(grad):
        moved = np.moveaxis(grad, axis, 0)
        for tensor, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if tensor.requires_grad:
                tensor._accumulate(
                    np.moveaxis(moved[start:stop], 0, axis))

    out._backward = backward
    return out


# Below this kernel*channels size, materializing the full unrolled window
# matrix beats the per-tap matmul loop; above it, the copy dominates.
_IM2COL_MAX = 64


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Same-padded 1-D convolution over channels-last input.

    x: (batch, frames, in_channels); weight: (kernel, in_channels,
    out_channels), kernel odd; bias: (out_channels,). Small receptive
    fields go through one unrolled matmul; large ones through one matmul
    per kernel tap, which avoids the big unrolled copy.
    """
    kernel, c_in, c_out = weight.data.shape
    if kernel % 2 == 0:
        raise ConfigurationError("conv1d kernel width must be odd")
    if x.data.ndim != 3 or x.data.shape[2] != c_in:
        raise ConfigurationError(
            f"conv1d input shape {x.data.shape} incompatible with weight {weight.data.shape}"
        )
    n, frames, _ = x.data.shape
    pad = (kernel - 1) // 2
    padded = np.zeros((n, frames + 2 * pad, c_in))
    padded[:, pad:pad + frames, :] = x.data

    if c_in * kernel <= _IM2COL_MAX:
        return _conv1d_unrolled(x, weight, bias, padded, n, frames, pad)
    return _conv1d_taps(x, weight, bias, padded, n, frames, pad)


def _conv1d_unrolled(x, weight, bias, padded, n, frames, pad):
    kernel, c_in, c_out = weight.data.shape
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel, axis=1)
    col = windows.reshape(n * frames, c_in * kernel)     # columns ordered (c, k)
    w_flat = weight.data.transpose(1, 0, 2).reshape(c_in * kernel, c_out)
    value = col @ w_flat
    value += bias.data
    out = Tensor(value.reshape(n, frames, c_out), parents=(x, weight, bias))

    def backward(grad):
        grad_flat = grad.reshape(n * frames, c_out)
        if bias.requires_grad:
            bias._accumulate(grad_flat.sum(axis=0))
        if weight.requires_grad:
            grad_w = (col.T @ grad_flat).reshape(c_in, kernel, c_out)
            weight._accumulate(grad_w.transpose(1, 0, 2))
        if x.requires_grad:
            grad_col = (grad_flat @ w_flat.T).reshape(n, frames, c_in, kernel)
            grad_padded = np.zeros_like(padded)
            for k in range(kernel):
                grad_padded[:, k:k + frames, :] += grad_col[:, :, :, k]
            x._accumulate(grad_padded[:, pad:pad + frames, :])

    out._backward = backward
    return out


def _conv1d_taps(x, weight, bias, padded, n, frames, pad):
    kernel, c_in, c_out = weight.data.shape
    value = np.empty((n, frames, c_out))
    value[:] = bias.data
    for k in range(kernel):
        tap = padded[:, k:k + frames, :].reshape(n * frames, c_in)
        value += (tap @ weight.data[k]).reshape(n, frames, c_out)
    out = Tensor(value, parents=(x, weight, bias))

    def backward(grad):
        grad_flat = grad.reshape(n * frames, c_out)
        if bias.requires_grad:
            bias._accumulate(grad_flat.sum(axis=0))
        if weight.requires_grad or x.requires_grad:
            grad_weight = np.zeros_like(weight.data) if weight.requires_grad else None
            grad_padded = np.zeros_like(padded) if x.requires_grad else None
            for k in range(kernel):
                if grad_weight is not None:
                    tap = padded[:, k:k + frames, :].reshape(n * frames, c_in)
                    grad_weight[k] = tap.T @ grad_flat
                if grad_padded is not None:
                    grad_padded[:, k:k + frames, :] += (
                        grad_flat @ weight.data[k].T).reshape(n, frames, c_in)
            if grad_weight is not None:
                weight._accumulate(grad_weight)
            if x.requires_grad:
                x._accumulate(grad_padded[:, pad:pad + frames, :])

    out._backward = backward
    return out


def avg_pool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping average pooling along the frame axis; the tail
    shorter than `width` is dropped."""
    n, frames, channels = x.data.shape
    pooled = frames // width
    if pooled < 1:
        raise ConfigurationError(f"cannot pool {frames} frames by {width}")
    value = x.data[:, 0:pooled * width:width, :].copy()
    for offset in range(1, width):
        value += x.data[:, offset:pooled * width:width, :]
    value *= 1.0 / width
    out = Tensor(value, parents=(x,))

    def backward(grad):
        if not x.requires_grad:
            return
        full = np.zeros_like(x.data)
        scaled = grad / width
        for offset in range(width):
            full[:, offset:pooled * width:width, :] = scaled
        x._accumulate(full)

    out._backward = backward
    return out


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero units with probability p, scale survivors by 1/(1-p)."""
    if not (0 <= p < 1):
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0:
        return x
    # float32 uniforms: same keep-probability to within 2^-24, twice as fast.
    keep = rng.random(x.data.shape, dtype=np.float32) >= p
    mask = keep / (1.0 - p)
    out = Tensor(x.data * mask, parents=(x,))

    def backward(grad):
        if x.requires_grad:
            x._accumulate(grad * mask)

    out._backward = backward
    return out
