"""From-scratch layer kernels with forward and backward passes.

Conventions:
  - 2-D layers take (N, H, W, C) batches; temporal layers take (N, T, C).
  - Convolutions are stride 1.  Conv2D uses Same zero padding; pooling is
    Valid with stride equal to the kernel (trailing remainder dropped).
  - The causal 1-D convolution left-pads (k-1)*dilation zeros so output step
    t sees x(t), x(t-d), ..., x(t-(k-1)d) only.
  - backward() accumulates parameter gradients and returns the input
    gradient; it requires a prior forward() on the same layer.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


class Param:
    """A learnable tensor paired with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"
    name = ""

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    def out_shape(self, in_shape: tuple) -> tuple:
        return tuple(in_shape)

    def _need_forward(self, cached) -> None:
        if cached is None:
            raise RuntimeError(f"{self.name or self.kind}: backward called before forward")


class Conv2D(Layer):
    """Same-padded 2-D convolution, weight shape (kh, kw, Cin, Cout)."""

    kind = "conv2d"

    def __init__(self, kh, kw, cin, cout, *, rng=None, name="conv2d"):
        if kh < 1 or kw < 1:
            raise ValidationError(f"{name}: kernel dims must be >= 1, got {kh}x{kw}")
        rng = rng or np.random.default_rng(0)
        fan_in = kh * kw * cin
        self.name = name
        self.kh, self.kw, self.cin, self.cout = kh, kw, cin, cout
        self.weight = Param(f"{name}.weight", _he_uniform(rng, (kh, kw, cin, cout), fan_in))
        self.bias = Param(f"{name}.bias", np.zeros(cout))
        self._xp = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if c != self.cin:
            raise ValidationError(f"{self.name}: expected {self.cin} input channels, got {c}")
        return (h, w, self.cout)

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.cin:
            raise ValidationError(f"{self.name}: expected {self.cin} input channels, got {c}")
        pt, pl = self.kh // 2, self.kw // 2
        pb, pr = self.kh - 1 - pt, self.kw - 1 - pl
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        wv = self.weight.value
        y = np.broadcast_to(self.bias.value, (n, h, w, self.cout)).copy()
        for i in range(self.kh):
            for j in range(self.kw):
                y += xp[:, i : i + h, j : j + w, :] @ wv[i, j]
        self._xp = xp
        self._hw = (h, w)
        return y

    def backward(self, grad):
        self._need_forward(self._xp)
        h, w = self._hw
        pt, pl = self.kh // 2, self.kw // 2
        xp = self._xp
        wv = self.weight.value
        dxp = np.zeros_like(xp)
        for i in range(self.kh):
            for j in range(self.kw):
                patch = xp[:, i : i + h, j : j + w, :]
                self.weight.grad[i, j] += np.tensordot(patch, grad, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, i : i + h, j : j + w, :] += grad @ wv[i, j].T
        self.bias.grad += grad.sum(axis=(0, 1, 2))
        return dxp[:, pt : pt + h, pl : pl + w, :]


class MaxPool2D(Layer):
    """Valid max pooling, stride = kernel.  Ties break to the first element
    in row-major window scan order; the argmax routes the gradient."""

    kind = "maxpool2d"

    def __init__(self, kh, kw, *, name="maxpool2d"):
        if kh < 1 or kw < 1:
            raise ValidationError(f"{name}: kernel dims must be >= 1, got {kh}x{kw}")
        self.name = name
        self.kh, self.kw = kh, kw
        self._cache = None

    def out_shape(self, in_shape):
        h, w, c = in_shape
        if self.kh > h or self.kw > w:
            raise ValidationError(
                f"{self.name}: kernel {self.kh}x{self.kw} larger than input {h}x{w}"
            )
        return (h // self.kh, w // self.kw, c)

    def forward(self, x):
        n, h, w, c = x.shape
        ho, wo, _ = self.out_shape((h, w, c))
        xc = x[:, : ho * self.kh, : wo * self.kw, :]
        win = (
            xc.reshape(n, ho, self.kh, wo, self.kw, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, ho, wo, self.kh * self.kw, c)
        )
        idx = win.argmax(axis=3)
        out = np.take_along_axis(win, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self._cache = (idx, (n, h, w, c), (ho, wo))
        return out

    def backward(self, grad):
        self._need_forward(self._cache)
        idx, (n, h, w, c), (ho, wo) = self._cache
        dwin = np.zeros((n, ho, wo, self.kh * self.kw, c))
        np.put_along_axis(dwin, idx[:, :, :, None, :], grad[:, :, :, None, :], axis=3)
        dxc = (
            dwin.reshape(n, ho, wo, self.kh, self.kw, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, ho * self.kh, wo * self.kw, c)
        )
        dx = np.zeros((n, h, w, c))
        dx[:, : ho * self.kh, : wo * self.kw, :] = dxc
        return dx


class ReLU(Layer):
    kind = "relu"

    def __init__(self, name="relu"):
        self.name = name
        self._mask = None

    def forward(self, x):
        self._mask = x > 0  # subgradient at 0 is 0
        return x * self._mask

    def backward(self, grad):
        self._need_forward(self._mask)
        return grad * self._mask


class Flatten(Layer):
    kind = "flatten"

    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        self._need_forward(self._shape)
        return grad.reshape(self._shape)


class Dense(Layer):
    """Affine map over the last axis; leading axes are preserved, so one
    weight matrix is shared across batch and time steps."""

    kind = "dense"

    def __init__(self, n_in, n_out, *, rng=None, name="dense"):
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.n_in, self.n_out = n_in, n_out
        self.weight = Param(f"{name}.weight", _he_uniform(rng, (n_in, n_out), n_in))
        self.bias = Param(f"{name}.bias", np.zeros(n_out))
        self._x2 = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        if in_shape[-1] != self.n_in:
            raise ValidationError(f"{self.name}: expected width {self.n_in}, got {in_shape[-1]}")
        return tuple(in_shape[:-1]) + (self.n_out,)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValidationError(f"{self.name}: expected width {self.n_in}, got {x.shape[-1]}")
        self._lead = x.shape[:-1]
        self._x2 = x.reshape(-1, self.n_in)
        y = self._x2 @ self.weight.value + self.bias.value
        return y.reshape(*self._lead, self.n_out)

    def backward(self, grad):
        self._need_forward(self._x2)
        g2 = grad.reshape(-1, self.n_out)
        self.weight.grad += self._x2.T @ g2
        self.bias.grad += g2.sum(axis=0)
        return (g2 @ self.weight.value.T).reshape(*self._lead, self.n_in)


class CausalConv1D(Layer):
    """Dilated causal 1-D convolution with full channel mixing.

    Weight shape (k, Cin, Cout); tap k-1 is the current time step.
    """

    kind = "causal_conv1d"

    def __init__(self, k, cin, cout, *, dilation=1, rng=None, name="causal_conv1d"):
        if k < 1 or dilation < 1:
            raise ValidationError(f"{name}: k and dilation must be >= 1")
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.k, self.cin, self.cout, self.dilation = k, cin, cout, dilation
        self.weight = Param(f"{name}.weight", _he_uniform(rng, (k, cin, cout), k * cin))
        self.bias = Param(f"{name}.bias", np.zeros(cout))
        self._xp = None

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        t, c = in_shape
        if c != self.cin:
            raise ValidationError(f"{self.name}: expected {self.cin} input channels, got {c}")
        return (t, self.cout)

    def forward(self, x):
        n, t, c = x.shape
        if c != self.cin:
            raise ValidationError(f"{self.name}: expected {self.cin} input channels, got {c}")
        pad = (self.k - 1) * self.dilation
        xp = np.pad(x, ((0, 0), (pad, 0), (0, 0)))
        wv = self.weight.value
        y = np.broadcast_to(self.bias.value, (n, t, self.cout)).copy()
        for i in range(self.k):
            y += xp[:, i * self.dilation : i * self.dilation + t, :] @ wv[i]
        self._xp = xp
        self._t = t
        return y

    def backward(self, grad):
        self._need_forward(self._xp)
        t = self._t
        pad = (self.k - 1) * self.dilation
        xp = self._xp
        wv = self.weight.value
        dxp = np.zeros_like(xp)
        g2 = grad.reshape(-1, self.cout)
        for i in range(self.k):
            lo = i * self.dilation
            patch = xp[:, lo : lo + t, :].reshape(-1, self.cin)
            self.weight.grad[i] += patch.T @ g2
            dxp[:, lo : lo + t, :] += grad @ wv[i].T
        self.bias.grad += g2.sum(axis=0)
        return dxp[:, pad:, :]


class ResidualBlock(Layer):
    """y = x + relu(causal_conv(x)) with kernel size 2 and full mixing."""

    kind = "residual_block"

    def __init__(self, filters, *, dilation=1, rng=None, name="residual_block"):
        self.name = name
        self.filters = filters
        self.dilation = dilation
        self.conv = CausalConv1D(
            2, filters, filters, dilation=dilation, rng=rng, name=f"{name}.conv"
        )
        self._mask = None

    def params(self):
        return self.conv.params()

    def out_shape(self, in_shape):
        t, c = in_shape
        if c != self.filters:
            raise ValidationError(f"{self.name}: expected {self.filters} channels, got {c}")
        return (t, c)

    def forward(self, x):
        if x.shape[-1] != self.filters:
            raise ValidationError(
                f"{self.name}: expected {self.filters} channels, got {x.shape[-1]}"
            )
        h = self.conv.forward(x)
        self._mask = h > 0
        return x + h * self._mask

    def backward(self, grad):
        self._need_forward(self._mask)
        return grad + self.conv.backward(grad * self._mask)
