"""Central finite-difference verification of every backward pass.

A layer's gradients are checked by projecting its output onto a fixed
random direction (making the composite a scalar function), computing the
analytic gradient via ``backward``, and comparing against central
differences in every coordinate of the input and of every parameter.
64-bit precision and eps=1e-5 put the agreement floor well below the 1e-6
relative tolerance the suite enforces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    PReLU,
    SpatialMaxPool,
    softmax_xent,
)
from .prcn import NptnLayer, PrcnConfig, PrcnLayer
from .rng import Rng


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference over the max magnitude (floored)."""
    denom = max(float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)), 1e-12)
    return float(np.abs(a - b).max(initial=0.0)) / denom


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar-valued ``f`` w.r.t. every entry of x."""
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


@dataclass
class CheckResult:
    name: str
    errors: dict  # "x" and each parameter name -> relative error

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    def passed(self, tol: float = 1e-6) -> bool:
        return self.max_error < tol


def check_layer(layer: Layer, x: np.ndarray, rng: Rng, eps: float = 1e-5,
                train: bool = True, name: str = "") -> CheckResult:
    """Finite-difference check of grad_x and every parameter gradient."""
    y0 = layer.forward(x, train)
    w = rng.normal(y0.size).reshape(y0.shape)

    def loss():
        return float((layer.forward(x, train) * w).sum())

    layer.zero_grads()
    layer.forward(x, train)
    grad_x = layer.backward(w)

    errors = {"x": rel_error(grad_x, numeric_grad(loss, x, eps))}
    for pname, value, grad in layer.param_items():
        errors[pname] = rel_error(grad, numeric_grad(loss, value, eps))
    return CheckResult(name=name or type(layer).__name__, errors=errors)


def check_softmax_xent(rng: Rng, n: int = 5, k: int = 7, eps: float = 1e-6) -> CheckResult:
    logits = rng.normal(n * k).reshape(n, k)
    labels = rng.randint_block(n, 0, k - 1)
    _, analytic = softmax_xent(logits, labels)
    numeric = numeric_grad(lambda: float(softmax_xent(logits, labels)[0]), logits, eps)
    return CheckResult(name="softmax_xent", errors={"logits": rel_error(analytic, numeric)})


def standard_suite(n_random: int = 20, seed: int = 0):
    """Yield CheckResults covering every layer kind on randomized shapes.

    ``n_random`` controls how many randomized configurations are drawn per
    parameterized layer family (conv and the connectome layers).
    """
    rng = Rng(seed)
    cases = []

    def rand_x(r, n, c, h, w):
        return r.normal(n * c * h * w).reshape(n, c, h, w)

    for i in range(n_random):
        r = rng.spawn(1000 + i)
        k = 1 + r.randbelow(3)           # kernel 1..3
        stride = 1 + r.randbelow(2)
        groups_pool = [1, 1, 2]
        inch = (1 + r.randbelow(3)) * 2  # 2, 4, 6
        groups = groups_pool[r.randbelow(3)]
        if groups == 2 and inch % 2:
            groups = 1
        outch = (1 + r.randbelow(3)) * groups
        h = k + stride * (1 + r.randbelow(3))
        pad = r.randbelow(k)
        size = h + 2 * pad - k
        h = h + (stride - size % stride) % stride  # keep output size integral
        conv = Conv2d(inch, outch, k, stride=stride, pad=pad, groups=groups,
                      rng=r.spawn(1))
        x = rand_x(r, 2, inch, h, h)
        cases.append(check_layer(conv, x, r.spawn(2),
                                 name=f"conv k={k} s={stride} p={pad} g={groups}"))

    r = rng.spawn(1)
    cases.append(check_layer(BatchNorm2d(3), rand_x(r, 4, 3, 5, 5), r.spawn(1),
                             name="batchnorm train"))
    cases.append(check_layer(BatchNorm2d(3), rand_x(r, 4, 3, 5, 5), r.spawn(2),
                             train=False, name="batchnorm eval"))
    cases.append(check_layer(PReLU(4), rand_x(r, 3, 4, 6, 6), r.spawn(3), name="prelu"))
    cases.append(check_layer(SpatialMaxPool(3), rand_x(r, 2, 3, 9, 9), r.spawn(4),
                             name="maxpool3x3"))
    cases.append(check_layer(SpatialMaxPool(2), rand_x(r, 2, 3, 7, 7), r.spawn(5),
                             name="maxpool2x2 ragged"))
    cases.append(check_layer(GlobalAvgPool(), rand_x(r, 3, 5, 4, 4), r.spawn(6),
                             name="global_avgpool"))
    lin = Linear(10, 7, rng=r.spawn(7))
    cases.append(check_layer(lin, r.normal(30).reshape(3, 10), r.spawn(8), name="linear"))
    cases.append(check_softmax_xent(r.spawn(9)))

    for i in range(n_random):
        r = rng.spawn(2000 + i)
        mode = "grouped" if i % 2 == 0 else "full"
        if mode == "grouped":
            inch = 2 + r.randbelow(2)            # 2 or 3
            g = 2 * (1 + r.randbelow(2))         # 2 or 4
            outch_opts = [o for o in (1, 2, inch) if (inch * g) % (2 * o) == 0]
            outch = outch_opts[r.randbelow(len(outch_opts))]
            cmp = 2
            pool_net = ("none", "two_1x1", "conv1x1_replace_avg")[r.randbelow(3)]
        else:
            inch = 1 + r.randbelow(3)
            g = 1 + r.randbelow(3)
            outch = 2 + r.randbelow(3)
            cmp = g
            pool_net = ("none", "two_1x1")[r.randbelow(2)]
        cfg = PrcnConfig(inch=inch, outch=outch, g=g, cmp=cmp, k=3, pad=1,
                         mode=mode, randomized=(i % 3 != 0), pool_net=pool_net)
        layer = PrcnLayer(cfg, rng=r.spawn(1))
        x = rand_x(r, 2, inch, 5, 5)
        cases.append(check_layer(layer, x, r.spawn(2),
                                 name=f"prcn {mode} in={inch} out={outch} g={g} "
                                      f"cmp={cmp} net={pool_net}"))

    r = rng.spawn(3)
    nptn = NptnLayer(2, 3, 2, 3, pad=1, rng=r.spawn(1))
    cases.append(check_layer(nptn, rand_x(r, 2, 2, 5, 5), r.spawn(2), name="nptn"))
    return cases
