"""Minimal NHWC neural-network layers with manual backpropagation.

Convolutions are computed as im2col + matmul against the patch-op kernels;
transposed convolutions are implemented as the exact adjoint of a strided
convolution, so a finite-difference check of the composite is meaningful.

Conventions:
  * tensors are NHWC, network dtype float32 or float64 (uniform per network)
  * all spatial layers use SAME padding with the extra pad on the
    bottom/right, so output size is ceil(in / stride)
  * ``backward`` overwrites each layer's parameter gradients (no
    accumulation) and returns the input gradient; a layer object must
    therefore appear at most once per forward pass
  * activation derivatives are recovered from the layer output, so only
    (input, output) are cached between forward and backward; the im2col
    expansion is recomputed in backward to bound memory
"""

import math

import numpy as np

from maskedvae import kernels


def relu(x):
    return np.maximum(x, 0.0)


def _drelu_from_y(y):
    return (y > 0.0).astype(y.dtype)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dsigmoid_from_y(y):
    return y * (1.0 - y)


def softplus(x):
    return np.logaddexp(np.asarray(0.0, dtype=x.dtype), x)


def _dsoftplus_from_y(y):
    # softplus output y >= 0 and sigmoid(x) = 1 - exp(-y)
    return 1.0 - np.exp(-y)


_EXP_CLIP = 30.0


def exponential(x):
    return np.exp(np.minimum(x, _EXP_CLIP))


def _dexponential_from_y(y):
    return y


def linear(x):
    return x


def _dlinear_from_y(y):
    return np.ones_like(y)


ACTIVATIONS = {
    "relu": (relu, _drelu_from_y),
    "sigmoid": (sigmoid, _dsigmoid_from_y),
    "softplus": (softplus, _dsoftplus_from_y),
    "exponential": (exponential, _dexponential_from_y),
    "linear": (linear, _dlinear_from_y),
}


def same_pads(size: int, k: int, stride: int):
    """(pad_before, pad_after, out_size) for SAME padding."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    before = total // 2
    return before, total - before, out


def _init_uniform(gen, shape, fan_in, dtype):
    limit = 1.0 / math.sqrt(fan_in)
    return gen.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: named parameters plus forward/backward."""

    name: str

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2d(Layer):
    """Strided SAME-padded convolution with a fused activation."""

    def __init__(self, name, in_ch, out_ch, k, stride, activation, gen, dtype):
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.k = k
        self.stride = stride
        self.activation = activation
        self.act, self.dact_from_y = ACTIVATIONS[activation]
        self.W = _init_uniform(gen, (k, k, in_ch, out_ch), k * k * in_ch, dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None
        self._y = None
        self._cols = None
        # set on the first layer of a network, whose input gradient is unused
        self.skip_input_grad = False

    def params(self):
        return {f"{self.name}/W": self.W, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.gW, f"{self.name}/b": self.gb}

    def _pad(self, x):
        n, h, w, _ = x.shape
        pt, pb, oh = same_pads(h, self.k, self.stride)
        pl, pr, ow = same_pads(w, self.k, self.stride)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        return xp, (pt, pb, pl, pr), (oh, ow)

    def forward(self, x):
        if x.shape[-1] != self.in_ch:
            raise ValueError(
                f"{self.name}: expected {self.in_ch} input channels, "
                f"got {x.shape[-1]}"
            )
        xp, _, (oh, ow) = self._pad(x)
        cols = kernels.im2col(xp, self.k, self.stride)
        n = x.shape[0]
        wc = self.W.reshape(-1, self.out_ch)
        pre = cols.reshape(n * oh * ow, -1) @ wc
        pre += self.b
        y = self.act(pre.reshape(n, oh, ow, self.out_ch))
        self._x = x
        self._y = y
        self._cols = cols
        return y

    def backward(self, dy):
        x, y = self._x, self._y
        dpre = dy * self.dact_from_y(y)
        n, oh, ow, _ = dpre.shape
        cols = self._cols
        self._cols = None
        cols2 = cols.reshape(n * oh * ow, -1)
        dpre2 = dpre.reshape(n * oh * ow, self.out_ch)
        self.gW = (cols2.T @ dpre2).reshape(self.W.shape)
        self.gb = dpre2.sum(axis=0)
        if self.skip_input_grad:
            return None
        dcols = (dpre2 @ self.W.reshape(-1, self.out_ch).T).reshape(cols.shape)
        h, w = x.shape[1], x.shape[2]
        pt, pb, _ = same_pads(h, self.k, self.stride)
        pl, pr, _ = same_pads(w, self.k, self.stride)
        dxp = kernels.col2im(
            dcols, pt + h + pb, pl + w + pr, self.in_ch, self.k, self.stride
        )
        return dxp[:, pt : pt + h, pl : pl + w, :]


class ConvTranspose2d(Layer):
    """Stride-s transposed convolution, the exact adjoint of a SAME conv.

    Maps (N, H, W, in_ch) to (N, H*stride, W*stride, out_ch).  The kernel is
    stored as the underlying convolution's (k, k, out_ch, in_ch) tensor.
    """

    def __init__(self, name, in_ch, out_ch, k, stride, activation, gen, dtype):
        self.name = name
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.k = k
        self.stride = stride
        self.activation = activation
        self.act, self.dact_from_y = ACTIVATIONS[activation]
        self.W = _init_uniform(gen, (k, k, out_ch, in_ch), k * k * out_ch, dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None
        self._y = None

    def params(self):
        return {f"{self.name}/W": self.W, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.gW, f"{self.name}/b": self.gb}

    def _geometry(self, h, w):
        oh, ow = h * self.stride, w * self.stride
        pt, pb, ih = same_pads(oh, self.k, self.stride)
        pl, pr, iw = same_pads(ow, self.k, self.stride)
        if (ih, iw) != (h, w):
            raise ValueError(f"{self.name}: geometry mismatch for input {h}x{w}")
        return oh, ow, pt, pb, pl, pr

    def forward(self, x):
        if x.shape[-1] != self.in_ch:
            raise ValueError(
                f"{self.name}: expected {self.in_ch} input channels, "
                f"got {x.shape[-1]}"
            )
        n, h, w, _ = x.shape
        oh, ow, pt, pb, pl, pr = self._geometry(h, w)
        wc = self.W.reshape(-1, self.in_ch)
        cols = (x.reshape(n * h * w, self.in_ch) @ wc.T).reshape(
            n, h, w, self.k * self.k * self.out_ch
        )
        prep = kernels.col2im(
            cols, oh + pt + pb, ow + pl + pr, self.out_ch, self.k, self.stride
        )
        pre = prep[:, pt : pt + oh, pl : pl + ow, :] + self.b
        y = self.act(pre)
        self._x = x
        self._y = y
        return y

    def backward(self, dy):
        x, y = self._x, self._y
        dpre = dy * self.dact_from_y(y)
        n, h, w, _ = x.shape
        oh, ow, pt, pb, pl, pr = self._geometry(h, w)
        dprep = np.pad(dpre, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        dcols = kernels.im2col(dprep, self.k, self.stride)
        dcols2 = dcols.reshape(n * h * w, -1)
        x2 = x.reshape(n * h * w, self.in_ch)
        self.gW = (dcols2.T @ x2).reshape(self.W.shape)
        self.gb = dpre.sum(axis=(0, 1, 2))
        dx = dcols2 @ self.W.reshape(-1, self.in_ch)
        return dx.reshape(x.shape)


class Dense(Layer):
    """Fully connected layer on (N, features) input."""

    def __init__(self, name, in_features, out_features, activation, gen, dtype):
        self.name = name
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self.act, self.dact_from_y = ACTIVATIONS[activation]
        self.W = _init_uniform(gen, (in_features, out_features), in_features, dtype)
        self.b = np.zeros(out_features, dtype=dtype)
        self.gW = np.zeros_like(self.W)
        self.gb = np.zeros_like(self.b)
        self._x = None
        self._y = None

    def params(self):
        return {f"{self.name}/W": self.W, f"{self.name}/b": self.b}

    def grads(self):
        return {f"{self.name}/W": self.gW, f"{self.name}/b": self.gb}

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(
                f"{self.name}: expected (N, {self.in_features}), got {x.shape}"
            )
        y = self.act(x @ self.W + self.b)
        self._x = x
        self._y = y
        return y

    def backward(self, dy):
        dpre = dy * self.dact_from_y(self._y)
        self.gW = self._x.T @ dpre
        self.gb = dpre.sum(axis=0)
        return dpre @ self.W.T


class Flatten(Layer):
    """(N, H, W, C) -> (N, H*W*C)."""

    def __init__(self, name="flatten"):
        self.name = name
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Reshape(Layer):
    """(N, features) -> (N, h, w, c)."""

    def __init__(self, h, w, c, name="reshape"):
        self.name = name
        self.h, self.w, self.c = h, w, c

    def forward(self, x):
        return x.reshape(x.shape[0], self.h, self.w, self.c)

    def backward(self, dy):
        return dy.reshape(dy.shape[0], -1)


class Sequential:
    """Ordered layer stack sharing the forward/backward/params protocol."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.params())
        return out

    def grads(self) -> dict:
        out = {}
        for layer in self.layers:
            out.update(layer.grads())
        return out
