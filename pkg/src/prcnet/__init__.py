"""prcnet: permanent-random-connectome convolutional layers, from scratch.

A small numpy engine for networks whose convolution layers expand each input
through a bank of filters, shuffle the resulting channels through a wiring
that is drawn randomly once and then frozen for the life of the network, and
pool across channels (max, then average) to build invariances the data
demands rather than ones hand-crafted into the architecture.

The package also carries the measurement apparatus around that idea: exact
and Monte Carlo order statistics of pooled responses, unitary-ensemble
experiments, a memory-lean indirect channel-pooling kernel with an
allocation-accounting benchmark, an SGD trainer, and a reproducible
experiment grid over augmented digit classification.
"""

from .connectome import Connectome, build as build_connectome, deserialize, serialize
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    PReLU,
    SpatialMaxPool,
    softmax_xent,
)
from .mnist import AugmentSpec, IdxDataset, augment_batch, load_dataset, parse_idx
from .network import Sequential, count_params, load_checkpoint, save_checkpoint
from .poolkernel import (
    PoolPlan,
    bench,
    indirect_cmp_backward,
    indirect_cmp_forward,
    naive_cmp_forward,
)
from .prcn import NptnLayer, PrcnConfig, PrcnLayer, nptn_reference_forward
from .presets import ArchSpec, Block, compile, mnist_arch
from .rng import Rng
from .tensor import alloc, gemm, im2col
from .trainer import OptimState, evaluate, lr_at, sgd_step, train

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec", "ArchSpec", "BatchNorm2d", "Block", "Connectome", "Conv2d",
    "GlobalAvgPool", "IdxDataset", "Linear", "NptnLayer", "OptimState", "PReLU",
    "PoolPlan", "PrcnConfig", "PrcnLayer", "Rng", "Sequential", "SpatialMaxPool",
    "alloc", "augment_batch", "bench", "build_connectome", "compile",
    "count_params", "deserialize", "evaluate", "gemm", "im2col",
    "indirect_cmp_backward", "indirect_cmp_forward", "load_checkpoint",
    "load_dataset", "lr_at", "mnist_arch", "naive_cmp_forward",
    "nptn_reference_forward", "parse_idx", "save_checkpoint", "serialize",
    "sgd_step", "softmax_xent", "train",
]
