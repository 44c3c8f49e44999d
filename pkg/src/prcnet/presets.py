"""Declarative architecture catalog.

Every named preset is a small two-part description -- ordered blocks plus a
classifier head -- that compiles to a `Sequential` model with seeded
initialization.  Compilation validates all divisibility constraints and
fails naming the violated block.

The benchmark family (10-class, 28x28 inputs, 5x5 kernels, 3x3 spatial max
pool per block, layer 2 fixed at 16 channels):

* ``convnet36`` / ``convnet512``: plain two-block ConvNets.
* ``convnet36_fc``: same, with a two-layer 1x1 pooling network (36 channels
  per layer) after each block's convolution.
* ``nptn(ch,g)``: disjoint-bank layers, e.g. ``nptn(12,3)``.
* ``prcn(ch,g)``: permanent-random-connectome layers with cmp == g, e.g.
  ``prcn(18,2)``; ``randomized=False`` selects the identity-wiring ablation.

The head is global average pooling plus one linear layer, which keeps the
``(36,1)/(18,2)/(12,3)/(9,4)`` family and ``convnet36`` at matched
parameter budgets.  PRC presets carry no 1x1 pooling network for the same
reason; pass ``pool_net="two_1x1"`` to attach one per layer.

The 8-class, 50x50 object-pose family (3x3 kernels, 2x2 pools except before
global pooling) is expressible for completeness -- ``eth_convnet_b/c``,
``eth_nptn_large_b``, ``eth_nptn_small_b``, ``eth_prcn_b/c`` -- but only
compile-and-forward is exercised here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .layers import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, PReLU, SpatialMaxPool
from .network import Sequential
from .prcn import NptnLayer, PrcnConfig, PrcnLayer
from .rng import Rng


class ArchError(ValueError):
    pass


@dataclass(frozen=True)
class Block:
    """One stage: main layer, optional 1x1 pooling net, then BN/PReLU/pool."""

    kind: str                    # conv | nptn | prcn
    width: int
    g: int = 1
    cmp: int = 1
    mode: str = "full"
    randomized: bool = True
    prcn_pool_net: str = "none"
    pool_net_channels: int = 0   # two-layer 1x1 net after a conv block (0 = none)
    kernel: int = 5
    spatial_pool: int = 3        # 0 = no spatial pooling in this block


@dataclass(frozen=True)
class ArchSpec:
    name: str
    in_channels: int
    blocks: tuple
    classes: int = 10
    fc_widths: tuple = ()        # extra fully connected widths before the classifier


def compile(spec: ArchSpec, seed: int = 0, dtype=np.float64) -> Sequential:
    """Instantiate a spec with seeded init; connectomes are built here, once."""
    rng = Rng(seed)
    layers = []
    ch = spec.in_channels
    for bi, b in enumerate(spec.blocks):
        brng = rng.spawn(100 + bi)
        pad = b.kernel // 2
        try:
            if b.kind == "conv":
                layers.append(Conv2d(ch, b.width, b.kernel, pad=pad,
                                     rng=brng.spawn(1), dtype=dtype))
            elif b.kind == "nptn":
                layers.append(NptnLayer(ch, b.width, b.g, b.kernel, pad=pad,
                                        rng=brng.spawn(1), dtype=dtype))
            elif b.kind == "prcn":
                cfg = PrcnConfig(inch=ch, outch=b.width, g=b.g, cmp=b.cmp,
                                 k=b.kernel, pad=pad, mode=b.mode,
                                 randomized=b.randomized, pool_net=b.prcn_pool_net)
                layers.append(PrcnLayer(cfg, rng=brng.spawn(1), dtype=dtype))
            else:
                raise ArchError(f"unknown block kind {b.kind!r}")
        except ValueError as e:
            raise ArchError(f"{spec.name}: block {bi}: {e}") from e
        ch = b.width
        if b.pool_net_channels:
            layers.append(Conv2d(ch, b.pool_net_channels, 1, rng=brng.spawn(2), dtype=dtype))
            layers.append(Conv2d(b.pool_net_channels, b.pool_net_channels, 1,
                                 rng=brng.spawn(3), dtype=dtype))
            ch = b.pool_net_channels
        layers.append(BatchNorm2d(ch, dtype=dtype))
        layers.append(PReLU(ch, dtype=dtype))
        if b.spatial_pool:
            layers.append(SpatialMaxPool(b.spatial_pool))
    layers.append(GlobalAvgPool())
    hrng = rng.spawn(999)
    for fi, width in enumerate(spec.fc_widths):
        layers.append(Linear(ch, width, rng=hrng.spawn(fi), dtype=dtype))
        ch = width
    layers.append(Linear(ch, spec.classes, rng=hrng.spawn(98), dtype=dtype))
    return Sequential(layers)


# -- the 28x28 benchmark family ---------------------------------------------

_MODEL_RE = re.compile(r"^(nptn|prcn)\((\d+),(\d+)\)$")


def mnist_arch(model: str, randomized: bool = True, cmp: int | None = None,
               pool_net: str = "none") -> ArchSpec:
    """Resolve a model name to its two-block architecture.

    Accepted names: ``convnet36``, ``convnet36_fc``, ``convnet512``,
    ``nptn(ch,g)``, ``prcn(ch,g)``.  ``randomized``, ``cmp`` and
    ``pool_net`` only apply to ``prcn`` models (cmp defaults to g).
    """
    if model == "convnet36":
        blocks = (Block("conv", 36), Block("conv", 16))
    elif model == "convnet36_fc":
        blocks = (Block("conv", 36, pool_net_channels=36),
                  Block("conv", 16, pool_net_channels=36))
    elif model == "convnet512":
        blocks = (Block("conv", 512), Block("conv", 16))
    else:
        m = _MODEL_RE.match(model)
        if not m:
            raise ArchError(f"unknown model name {model!r}")
        kind, ch, g = m.group(1), int(m.group(2)), int(m.group(3))
        if kind == "nptn":
            blocks = (Block("nptn", ch, g=g), Block("nptn", 16, g=g))
        else:
            c = cmp if cmp is not None else g
            blocks = (
                Block("prcn", ch, g=g, cmp=c, mode="full", randomized=randomized,
                      prcn_pool_net=pool_net),
                Block("prcn", 16, g=g, cmp=c, mode="full", randomized=randomized,
                      prcn_pool_net=pool_net),
            )
    return ArchSpec(name=model, in_channels=1, blocks=blocks, classes=10)


MNIST_PRC_FAMILY = ("prcn(36,1)", "prcn(18,2)", "prcn(12,3)", "prcn(9,4)")


# -- the 50x50 object-pose family (expressible, not trained here) ------------

def _eth_blocks(widths, kinds, g=8, cmp=2):
    blocks = []
    last = len(widths) - 1
    for i, (w, kind) in enumerate(zip(widths, kinds)):
        pool = 2 if i < last else 0
        if kind == "conv":
            blocks.append(Block("conv", w, kernel=3, spatial_pool=pool))
        elif kind == "nptn":
            blocks.append(Block("nptn", w, g=3, kernel=3, spatial_pool=pool))
        else:
            blocks.append(Block("prcn", w, g=g, cmp=cmp, mode="grouped",
                                prcn_pool_net="conv1x1_replace_avg", kernel=3,
                                spatial_pool=pool))
    return tuple(blocks)


ETH_ARCHS = {
    "eth_convnet_b": ArchSpec("eth_convnet_b", 3,
                              _eth_blocks([12, 24, 48, 48], ["conv"] * 4),
                              classes=8, fc_widths=(300, 200)),
    "eth_nptn_large_b": ArchSpec("eth_nptn_large_b", 3,
                                 _eth_blocks([12, 24, 48, 48],
                                             ["conv", "nptn", "nptn", "nptn"]),
                                 classes=8, fc_widths=(300, 200)),
    "eth_nptn_small_b": ArchSpec("eth_nptn_small_b", 3,
                                 _eth_blocks([12, 8, 24, 48],
                                             ["conv", "nptn", "nptn", "nptn"]),
                                 classes=8, fc_widths=(300, 200)),
    "eth_prcn_b": ArchSpec("eth_prcn_b", 3,
                           _eth_blocks([12, 24, 48, 48],
                                       ["conv", "prcn", "prcn", "prcn"]),
                           classes=8, fc_widths=(300, 200)),
    "eth_convnet_c": ArchSpec("eth_convnet_c", 3,
                              _eth_blocks([12, 24, 48, 64, 128], ["conv"] * 5),
                              classes=8),
    "eth_prcn_c": ArchSpec("eth_prcn_c", 3,
                           _eth_blocks([12, 24, 48, 64, 128],
                                       ["conv", "prcn", "prcn", "prcn", "prcn"]),
                           classes=8),
}
