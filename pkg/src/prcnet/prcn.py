"""The permanent-random-connectome layer (PRC-NPTN) and its relatives.

A PRC-NPTN layer composes four stages:

1. an expansion convolution producing many activation maps,
2. a permanent random channel shuffle (the connectome, fixed at init),
3. channel max pooling (CMP) over consecutive blocks of the shuffled order,
4. channel average pooling down to the requested output width (or, as a
   variant, a small 1x1 "pooling network").

Two expansion modes exist because the two constraints in the MNIST
architecture family cannot be met by one wiring:

* ``grouped``: the canonical composition.  Each of the ``inch`` input
  channels gets ``g`` private filters (grouped conv, expansion =
  ``g * inch``), CMP by ``cmp``, then average pooling over
  ``avg = g * inch / (cmp * outch)`` consecutive channels.
* ``full``: a dense convolution to ``g * outch`` maps with ``cmp == g`` and
  no average stage.  This is the reading that keeps the ``(channels, g)``
  family -- (36,1), (18,2), (12,3), (9,4) -- at exactly equal parameter
  count when the first layer has a single input channel, where the grouped
  arithmetic cannot produce those widths.

Channel max pooling runs through the indirect kernel, so the shuffled
expansion tensor is never materialized.  The channel-max gradient follows
the winning channel (ties to the lowest position within the support's
permuted order).

``nptn_reference_forward`` implements the non-random special case where
every (input, output) pair owns a private bank of ``g`` filters and outputs
are summed over inputs after a per-bank max; ``NptnLayer`` is its trainable
form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import connectome as conn
from .layers import Conv2d, Layer
from .poolkernel import PoolPlan, indirect_cmp_backward, indirect_cmp_forward
from .rng import Rng
from .tensor import cols_to_nchw, conv_out_size, im2col

POOL_NET_CHOICES = ("none", "two_1x1", "conv1x1_replace_avg")


@dataclass(frozen=True)
class PrcnConfig:
    """Static shape/wiring description of one PRC-NPTN layer.

    ``g`` is the number of filters per wiring unit (per input channel in
    grouped mode, per output channel in full mode); ``cmp`` is the channel
    max pooling window.
    """

    inch: int
    outch: int
    g: int
    cmp: int
    k: int
    pad: int = 0
    stride: int = 1
    mode: str = "grouped"
    randomized: bool = True
    pool_net: str = "none"

    def __post_init__(self):
        if self.mode not in ("grouped", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.pool_net not in POOL_NET_CHOICES:
            raise ValueError(f"unknown pool_net {self.pool_net!r}")
        if min(self.inch, self.outch, self.g, self.cmp, self.k) < 1:
            raise ValueError("inch, outch, g, cmp, k must all be >= 1")
        e = self.expansion
        if self.cmp > e or e % self.cmp:
            raise ValueError(f"cmp={self.cmp} must divide expansion={e}")
        if self.mode == "grouped":
            if e % (self.cmp * self.outch):
                raise ValueError(
                    f"average pool size (g*inch)/(cmp*outch) = {e}/{self.cmp * self.outch} is not a positive integer"
                )
        else:
            if self.cmp != self.g:
                raise ValueError("full mode requires cmp == g")
            if self.pool_net == "conv1x1_replace_avg":
                raise ValueError("conv1x1_replace_avg only applies to grouped mode (it replaces the average stage)")

    @property
    def expansion(self) -> int:
        return self.g * (self.inch if self.mode == "grouped" else self.outch)

    @property
    def avg_size(self) -> int:
        if self.mode == "full" or self.pool_net == "conv1x1_replace_avg":
            return 1
        return self.expansion // (self.cmp * self.outch)


class PrcnLayer(Layer):
    """Expansion conv -> permanent shuffle -> CMP -> channel average/pool net."""

    def __init__(self, config: PrcnConfig, rng: Rng, dtype=np.float64):
        self.config = config
        c = config
        if c.mode == "grouped":
            self.conv = Conv2d(c.inch, c.expansion, c.k, c.stride, c.pad,
                               groups=c.inch, rng=rng.spawn(1), dtype=dtype)
        else:
            self.conv = Conv2d(c.inch, c.expansion, c.k, c.stride, c.pad,
                               groups=1, rng=rng.spawn(1), dtype=dtype)
        self.connectome = conn.build(rng.spawn(2), c.expansion, c.cmp,
                                     randomized=c.randomized)
        self.plan = PoolPlan.from_connectome(self.connectome)
        post_cmp = c.expansion // c.cmp
        self.avg_conv = None
        self.pool_net = []
        if c.pool_net == "conv1x1_replace_avg":
            self.avg_conv = Conv2d(post_cmp, c.outch, 1, rng=rng.spawn(3), dtype=dtype)
        if c.pool_net == "two_1x1":
            self.pool_net = [
                Conv2d(c.outch, c.outch, 1, rng=rng.spawn(4), dtype=dtype),
                Conv2d(c.outch, c.outch, 1, rng=rng.spawn(5), dtype=dtype),
            ]
        self._cache = None

    @property
    def out_channels(self):
        return self.config.outch

    def _sublayers(self):
        named = [("conv", self.conv)]
        if self.avg_conv is not None:
            named.append(("avg_conv", self.avg_conv))
        named.extend((f"pool_net{i}", l) for i, l in enumerate(self.pool_net))
        return named

    def param_items(self):
        return [
            (f"{prefix}.{name}", value, grad)
            for prefix, layer in self._sublayers()
            for name, value, grad in layer.param_items()
        ]

    def forward(self, x, train=True):
        c = self.config
        expanded = self.conv.forward(x, train)
        pooled, argmax = indirect_cmp_forward(expanded, self.plan)
        self._cache = argmax
        if self.avg_conv is not None:
            out = self.avg_conv.forward(pooled, train)
        elif c.avg_size > 1:
            n, _, h, w = pooled.shape
            out = pooled.reshape(n, c.outch, c.avg_size, h, w).mean(axis=2)
        else:
            out = pooled
        for layer in self.pool_net:
            out = layer.forward(out, train)
        return out

    def backward(self, grad_out, input_grad_needed=True):
        c = self.config
        for layer in reversed(self.pool_net):
            grad_out = layer.backward(grad_out)
        if self.avg_conv is not None:
            grad_pooled = self.avg_conv.backward(grad_out)
        elif c.avg_size > 1:
            n, _, h, w = grad_out.shape
            grad_pooled = np.broadcast_to(
                grad_out[:, :, None] / c.avg_size, (n, c.outch, c.avg_size, h, w)
            ).reshape(n, c.outch * c.avg_size, h, w)
        else:
            grad_pooled = grad_out
        argmax = self._cache
        if argmax is None:
            raise RuntimeError("backward called without a cached forward")
        self._cache = None
        grad_expanded = indirect_cmp_backward(grad_pooled, argmax, self.plan)
        return self.conv.backward(grad_expanded, input_grad_needed=input_grad_needed)


class NptnLayer(Layer):
    """Disjoint-bank transformation layer: per (input, output) pair, ``g``
    private filters; output = sum over inputs of the per-bank channel max."""

    def __init__(self, inch, outch, g, k, stride=1, pad=0, rng: Rng | None = None,
                 dtype=np.float64):
        self.inch, self.outch, self.g, self.k = inch, outch, g, k
        # grouped conv with o-major filter order inside each input group:
        # channel e = in*(outch*g) + o*g + gi
        self.conv = Conv2d(inch, inch * outch * g, k, stride, pad, groups=inch,
                           rng=rng.spawn(1) if rng else None, dtype=dtype)
        self.plan = PoolPlan(expansion=inch * outch * g, cmp=g,
                             perm=np.arange(inch * outch * g))
        self._cache = None

    @property
    def out_channels(self):
        return self.outch

    def param_items(self):
        return [(f"conv.{n}", v, g) for n, v, g in self.conv.param_items()]

    def forward(self, x, train=True):
        expanded = self.conv.forward(x, train)
        maxed, argmax = indirect_cmp_forward(expanded, self.plan)
        n, _, h, w = maxed.shape
        self._cache = (argmax, maxed.shape)
        return maxed.reshape(n, self.inch, self.outch, h, w).sum(axis=1)

    def backward(self, grad_out, input_grad_needed=True):
        argmax, maxed_shape = self._cache
        self._cache = None
        n, _, h, w = grad_out.shape
        grad_maxed = np.broadcast_to(
            grad_out[:, None], (n, self.inch, self.outch, h, w)
        ).reshape(maxed_shape)
        grad_expanded = indirect_cmp_backward(
            np.ascontiguousarray(grad_maxed), argmax, self.plan
        )
        return self.conv.backward(grad_expanded, input_grad_needed=input_grad_needed)


def nptn_reference_forward(x: np.ndarray, weights: np.ndarray, stride: int = 1,
                           pad: int = 0) -> np.ndarray:
    """Direct evaluation of the disjoint-bank node.

    ``weights`` has shape (inch, outch, g, k, k); output channel ``o`` is
    ``sum_in max_gi conv(x[:, in], weights[in, o, gi])``.
    """
    inch, outch, g, k, _ = weights.shape
    if x.shape[1] != inch:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {inch}")
    n = x.shape[0]
    h_out = conv_out_size(x.shape[2], k, stride, pad)
    w_out = conv_out_size(x.shape[3], k, stride, pad)
    out = None
    for i in range(inch):
        cols = im2col(x[:, i : i + 1], k, stride, pad)
        resp = weights[i].reshape(outch * g, k * k) @ cols
        maps = cols_to_nchw(resp, n, h_out, w_out).reshape(n, outch, g, h_out, w_out)
        contribution = maps.max(axis=2)
        out = contribution if out is None else out + contribution
    return out
