"""Standard network layers with explicit forward/backward passes.

Every layer follows the same protocol: ``forward(x, train)`` caches whatever
the backward pass needs, ``backward(grad_out)`` returns ``grad_x`` and fills
per-parameter gradient buffers, and ``param_items()`` yields
``(name, value, grad)`` triples for the optimizer (values are updated in
place).  All backward passes are exact reverse-mode gradients and are
verified against central finite differences in the test suite.

Defaults the architectures rely on: He fan-in uniform init for conv/linear
weights, PReLU slope 0.25, BatchNorm eps 1e-5 / momentum 0.1, conv layers
without bias, max-pool ties broken toward the first element in row-major
window scan.
"""

from __future__ import annotations

import numpy as np

from .rng import Rng
from .tensor import (
    assert_finite,
    col2im,
    cols_to_nchw,
    conv_out_size,
    im2col,
    nchw_to_cols,
)


class Layer:
    """Base class; stateless layers only override forward/backward."""

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def param_items(self):
        """(name, value, grad) triples; value arrays are mutated by SGD."""
        return []

    def state_items(self):
        """Persistent non-trainable arrays (e.g. BatchNorm running stats)."""
        return []

    def zero_grads(self) -> None:
        for _, _, g in self.param_items():
            g[...] = 0.0


def he_uniform(rng: Rng, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    """He fan-in uniform: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    bound = np.sqrt(6.0 / fan_in)
    n = int(np.prod(shape))
    return rng.uniform_block(n, -bound, bound).astype(dtype).reshape(shape)


class Conv2d(Layer):
    """Grouped 2-D convolution via one shared im2col.

    ``groups=inch`` gives the depthwise-style expansion where each input
    channel is convolved with its own private filter bank.  Bias is off by
    default; none of the architectures here use conv bias.
    """

    def __init__(self, inch, outch, k, stride=1, pad=0, groups=1, rng: Rng | None = None,
                 dtype=np.float64):
        if inch % groups or outch % groups:
            raise ValueError(f"groups={groups} must divide inch={inch} and outch={outch}")
        self.inch, self.outch, self.k = inch, outch, k
        self.stride, self.pad, self.groups = stride, pad, groups
        cg = inch // groups
        fan_in = cg * k * k
        if rng is None:
            self.w = np.zeros((outch, cg, k, k), dtype=dtype)
        else:
            self.w = he_uniform(rng, (outch, cg, k, k), fan_in, dtype)
        self.gw = np.zeros_like(self.w)
        self._cache = None

    @property
    def out_channels(self):
        return self.outch

    def param_items(self):
        return [("w", self.w, self.gw)]

    def forward(self, x, train=True):
        if x.shape[1] != self.inch:
            raise ValueError(f"expected {self.inch} input channels, got {x.shape[1]}")
        n, _, h, w = x.shape
        h_out = conv_out_size(h, self.k, self.stride, self.pad)
        w_out = conv_out_size(w, self.k, self.stride, self.pad)
        cols = im2col(x, self.k, self.stride, self.pad)
        g = self.groups
        cg = self.inch // g
        og = self.outch // g
        rows = cg * self.k * self.k
        out_mat = np.empty((self.outch, cols.shape[1]), dtype=x.dtype)
        wm = self.w.reshape(self.outch, rows)
        for gi in range(g):
            out_mat[gi * og : (gi + 1) * og] = wm[gi * og : (gi + 1) * og] @ cols[
                gi * rows : (gi + 1) * rows
            ]
        self._cache = (x.shape, cols)
        return cols_to_nchw(out_mat, n, h_out, w_out)

    def backward(self, grad_out, input_grad_needed=True):
        x_shape, cols = self._cache
        g = self.groups
        cg = self.inch // g
        og = self.outch // g
        rows = cg * self.k * self.k
        grad_mat = nchw_to_cols(grad_out)
        wm = self.w.reshape(self.outch, rows)
        gw = self.gw.reshape(self.outch, rows)
        grad_cols = np.empty_like(cols) if input_grad_needed else None
        for gi in range(g):
            go = grad_mat[gi * og : (gi + 1) * og]
            gw[gi * og : (gi + 1) * og] += go @ cols[gi * rows : (gi + 1) * rows].T
            if input_grad_needed:
                grad_cols[gi * rows : (gi + 1) * rows] = wm[gi * og : (gi + 1) * og].T @ go
        if not input_grad_needed:
            return None
        return col2im(grad_cols, x_shape, self.k, self.stride, self.pad)


class BatchNorm2d(Layer):
    """Per-channel batch normalization.

    Normalization uses the biased batch variance (so train-mode pre-affine
    activations have variance exactly 1); the running variance is updated
    with the unbiased estimate.  Eval mode uses running statistics only.
    """

    def __init__(self, ch, eps=1e-5, momentum=0.1, dtype=np.float64):
        self.ch = ch
        self.eps = eps
        self.momentum = momentum
        self.gamma = np.ones(ch, dtype=dtype)
        self.beta = np.zeros(ch, dtype=dtype)
        self.ggamma = np.zeros_like(self.gamma)
        self.gbeta = np.zeros_like(self.beta)
        self.running_mean = np.zeros(ch, dtype=dtype)
        self.running_var = np.ones(ch, dtype=dtype)
        self._cache = None

    @property
    def out_channels(self):
        return self.ch

    def param_items(self):
        return [("gamma", self.gamma, self.ggamma), ("beta", self.beta, self.gbeta)]

    def state_items(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def forward(self, x, train=True):
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if train:
            # single-pass sums with float64 accumulation (safe in float32 mode)
            s1 = x.sum(axis=(0, 2, 3), dtype=np.float64)
            s2 = np.einsum("nchw,nchw->c", x, x, dtype=np.float64)
            mean = s1 / m
            var = np.maximum(s2 / m - mean * mean, 0.0)
            unbiased = var * (m / (m - 1)) if m > 1 else var
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
            mean = mean.astype(x.dtype)
            var = var.astype(x.dtype)
        else:
            mean, var = self.running_mean.astype(x.dtype), self.running_var.astype(x.dtype)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = x * inv_std[None, :, None, None]
        xhat -= (mean * inv_std)[None, :, None, None]
        self._cache = (xhat, inv_std, train, m)
        return self.gamma[None, :, None, None] * xhat + self.beta[None, :, None, None]

    def backward(self, grad_out):
        xhat, inv_std, train, m = self._cache
        sum_g = grad_out.sum(axis=(0, 2, 3), dtype=np.float64)
        sum_gx = np.einsum("nchw,nchw->c", grad_out, xhat, dtype=np.float64)
        self.ggamma += sum_gx
        self.gbeta += sum_g
        a = (self.gamma * inv_std).astype(grad_out.dtype)
        if not train:
            return grad_out * a[None, :, None, None]
        # d/dx of (x - mean)/std with mean and var functions of the batch
        gx = grad_out - (sum_g / m).astype(grad_out.dtype)[None, :, None, None]
        gx -= xhat * (sum_gx / m).astype(grad_out.dtype)[None, :, None, None]
        gx *= a[None, :, None, None]
        return gx


class PReLU(Layer):
    """y = x for x > 0 else a * x, with one learnable slope per channel."""

    def __init__(self, ch, init=0.25, dtype=np.float64):
        self.ch = ch
        self.a = np.full(ch, init, dtype=dtype)
        self.ga = np.zeros_like(self.a)
        self._cache = None

    @property
    def out_channels(self):
        return self.ch

    def param_items(self):
        return [("a", self.a, self.ga)]

    def forward(self, x, train=True):
        neg = x < 0
        factor = np.where(neg, self.a.astype(x.dtype)[None, :, None, None],
                          x.dtype.type(1.0))
        self._cache = (x, neg, factor)
        return x * factor

    def backward(self, grad_out):
        x, neg, factor = self._cache
        masked = np.where(neg, x, x.dtype.type(0.0))
        self.ga += np.einsum("nchw,nchw->c", grad_out, masked, dtype=np.float64)
        return grad_out * factor


class SpatialMaxPool(Layer):
    """Non-overlapping spatial max pool (stride == window).

    Output size is floor(h/size); trailing rows/cols that do not fill a
    window are dropped and receive zero gradient.  Ties route the gradient
    to the first maximal element in row-major window order.
    """

    def __init__(self, size):
        self.size = size
        self._cache = None

    def forward(self, x, train=True):
        s = self.size
        n, c, h, w = x.shape
        h2, w2 = h // s, w // s
        if h2 < 1 or w2 < 1:
            raise ValueError(f"input {h}x{w} smaller than pool window {s}")
        xv = x[:, :, : h2 * s, : w2 * s]
        win = xv.reshape(n, c, h2, s, w2, s).transpose(0, 1, 2, 4, 3, 5).reshape(
            n, c, h2, w2, s * s
        )
        arg = win.argmax(axis=-1)
        out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return out

    def backward(self, grad_out):
        x_shape, arg = self._cache
        s = self.size
        n, c, h, w = x_shape
        h2, w2 = h // s, w // s
        win = np.zeros((n, c, h2, w2, s * s), dtype=grad_out.dtype)
        np.put_along_axis(win, arg[..., None], grad_out[..., None], axis=-1)
        gx = np.zeros(x_shape, dtype=grad_out.dtype)
        gx[:, :, : h2 * s, : w2 * s] = (
            win.reshape(n, c, h2, w2, s, s).transpose(0, 1, 2, 4, 3, 5).reshape(
                n, c, h2 * s, w2 * s
            )
        )
        return gx


class GlobalAvgPool(Layer):
    """Mean over the spatial grid; (n, c, h, w) -> (n, c)."""

    def __init__(self):
        self._cache = None

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad_out):
        n, c, h, w = self._cache
        return np.broadcast_to(grad_out[:, :, None, None], (n, c, h, w)) / (h * w)


class Flatten(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, train=True):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._cache)


class Linear(Layer):
    """y = x @ W.T + b on 2-D inputs."""

    def __init__(self, in_features, out_features, bias=True, rng: Rng | None = None,
                 dtype=np.float64):
        self.in_features, self.out_features = in_features, out_features
        if rng is None:
            self.w = np.zeros((out_features, in_features), dtype=dtype)
        else:
            self.w = he_uniform(rng, (out_features, in_features), in_features, dtype)
        self.gw = np.zeros_like(self.w)
        self.b = np.zeros(out_features, dtype=dtype) if bias else None
        self.gb = np.zeros_like(self.b) if bias else None
        self._cache = None

    def param_items(self):
        items = [("w", self.w, self.gw)]
        if self.b is not None:
            items.append(("b", self.b, self.gb))
        return items

    def forward(self, x, train=True):
        self._cache = x
        y = x @ self.w.T
        if self.b is not None:
            y = y + self.b
        return y

    def backward(self, grad_out):
        x = self._cache
        self.gw += grad_out.T @ x
        if self.b is not None:
            self.gb += grad_out.sum(axis=0)
        return grad_out @ self.w


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch and its gradient w.r.t. logits.

    Raises on non-finite logits (divergence is surfaced, not propagated) and
    on out-of-range labels.
    """
    assert_finite(logits, "logits")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels outside [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsumexp
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
