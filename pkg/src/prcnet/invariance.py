"""Invariance laboratory.

Three views of the same claim -- that max pooling over a set of transformed
filter responses reduces variance under the transformation:

1. Closed form.  If the response is U(0, 1), the max of n iid draws has
   E[max] = n/(n+1), E[max^2] = n/(n+2) and
   Var(max) = n / ((n+2) (n+1)^2), which is 1/12 at n=1 and strictly
   decreasing in n.  This is exact and testable in rational arithmetic.
2. Monte Carlo on the uniform model, with batched standard errors.
3. Monte Carlo on dot-products <x, g w> under ensembles of actual unitary
   operators (Haar-distributed orthogonal matrices, or random plane
   rotations), where the uniform assumption does not hold; here the
   variance reduction is measured, and the unitarity identity
   <x, g w> == <g^-1 x, w> is asserted sample by sample.

`layer_invariance_probe` applies the same measurement to a real network:
per-channel activation variance across an input-transformation sweep,
before and after the channel max pooling stage of a chosen layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .mnist import rotate_batch
from .network import Sequential
from .poolkernel import indirect_cmp_forward
from .prcn import PrcnLayer
from .rng import Rng


class EnsembleError(RuntimeError):
    pass


# -- closed-form order statistics of U(0,1) ----------------------------------

def max_moments(n: int) -> tuple[Fraction, Fraction]:
    """(E[max], E[max^2]) of n iid U(0,1) draws, exactly."""
    if n < 1:
        raise ValueError("pool size must be >= 1")
    return Fraction(n, n + 1), Fraction(n, n + 2)


def var_max_closed_form(n: int) -> float:
    """Var(max of n iid U(0,1)) = n / ((n+2) (n+1)^2)."""
    if n < 1:
        raise ValueError("pool size must be >= 1")
    return n / ((n + 2) * (n + 1) ** 2)


def var_max_exact(n: int) -> Fraction:
    e1, e2 = max_moments(n)
    return e2 - e1 * e1


def mc_var_max_uniform(n: int, samples: int, rng: Rng, batches: int = 50):
    """Sample variance of max(n uniforms) and a batched standard error.

    Returns ``(estimate, stderr)`` where the estimate is the pooled ddof-1
    variance over every sample and the stderr is std over per-batch
    variances divided by sqrt(batches).
    """
    if samples < 10_000:
        raise ValueError("need at least 1e4 samples")
    per_batch = samples // batches
    batch_vars = np.empty(batches)
    total = 0.0
    total_sq = 0.0
    count = 0
    for b in range(batches):
        draws = rng.uniform_block(per_batch * n).reshape(per_batch, n)
        m = draws.max(axis=1)
        batch_vars[b] = m.var(ddof=1)
        total += m.sum()
        total_sq += (m * m).sum()
        count += per_batch
    mean = total / count
    estimate = (total_sq - count * mean * mean) / (count - 1)
    stderr = batch_vars.std(ddof=1) / np.sqrt(batches)
    return float(estimate), float(stderr)


# -- unitary ensembles --------------------------------------------------------

@dataclass(frozen=True)
class UnitaryEnsemble:
    """Distribution over unitary operators on R^d.

    ``orthogonal``: QR of a Gaussian matrix with the R-diagonal sign fixed,
    giving the Haar distribution.  ``plane_rotation``: rotation by a uniform
    angle in a uniformly chosen coordinate 2-plane (exactly norm-preserving,
    the vectorized analogue of rotating a 2-D patch).
    """

    dim: int
    family: str = "orthogonal"

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("ensemble dimension must be >= 2")
        if self.family not in ("orthogonal", "plane_rotation"):
            raise ValueError(f"unknown ensemble family {self.family!r}")

    def sample_matrices(self, rng: Rng, m: int) -> np.ndarray:
        d = self.dim
        if self.family == "orthogonal":
            a = rng.normal(m * d * d).reshape(m, d, d)
            q, r = np.linalg.qr(a)
            diag = np.diagonal(r, axis1=1, axis2=2).copy()
            sign = np.where(diag >= 0, 1.0, -1.0)
            return q * sign[:, None, :]
        axes_i = rng.randint_block(m, 0, d - 2)
        # second axis drawn from the remaining d-1 and shifted past the first
        axes_j = rng.randint_block(m, 0, d - 2)
        axes_j = np.where(axes_j >= axes_i, axes_j + 1, axes_j)
        theta = rng.uniform_block(m, 0.0, 2.0 * np.pi)
        g = np.broadcast_to(np.eye(d), (m, d, d)).copy()
        rows = np.arange(m)
        c, s = np.cos(theta), np.sin(theta)
        g[rows, axes_i, axes_i] = c
        g[rows, axes_j, axes_j] = c
        g[rows, axes_i, axes_j] = -s
        g[rows, axes_j, axes_i] = s
        return g

    def check_unitary(self, gs: np.ndarray, rng: Rng, tol: float = 1e-10) -> float:
        """Max relative norm distortion of the samples on a random vector."""
        v = rng.normal(self.dim)
        nv = np.linalg.norm(v)
        norms = np.linalg.norm(gs @ v, axis=1)
        worst = float(np.abs(norms - nv).max() / nv)
        if worst > tol:
            raise EnsembleError(f"non-unitary sample: norm distortion {worst:.3e}")
        return worst


@dataclass
class InvarianceEstimate:
    var_pooled: float
    stderr_pooled: float
    var_unpooled: float
    stderr_unpooled: float

    @property
    def margin_in_stderr(self) -> float:
        """(unpooled - pooled) in units of the combined standard error."""
        combined = np.hypot(self.stderr_pooled, self.stderr_unpooled)
        return float((self.var_unpooled - self.var_pooled) / combined)


def mc_invariance(x: np.ndarray, w: np.ndarray, ensemble: UnitaryEnsemble,
                  n_pool: int, trials: int, rng: Rng, identity_tol: float = 1e-10,
                  batches: int = 50) -> InvarianceEstimate:
    """Variance of max-pooled vs unpooled dot-products under the ensemble.

    Each trial draws ``n_pool`` independent operators g and pools
    ``max_i <x, g_i w>``; the unpooled estimator uses every individual
    dot-product.  For every sample the identity ``<x, g w> == <g^-1 x, w>``
    is asserted to ``identity_tol`` (orthogonal operators: g^-1 = g^T).
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape != (ensemble.dim,) or w.shape != (ensemble.dim,):
        raise ValueError("x and w must be vectors of the ensemble dimension")
    if n_pool < 1 or trials < batches:
        raise ValueError("need n_pool >= 1 and trials >= batches")
    per_batch = trials // batches
    pooled_vars = np.empty(batches)
    unpooled_vars = np.empty(batches)
    pooled_all = _Welford()
    unpooled_all = _Welford()
    for b in range(batches):
        gs = ensemble.sample_matrices(rng, per_batch * n_pool)
        ensemble.check_unitary(gs, rng)
        gw = gs @ w
        dots = gw @ x
        ginv_x = np.einsum("mji,j->mi", gs, x)  # g^T x
        dots_inv = ginv_x @ w
        err = np.abs(dots - dots_inv)
        scale = max(float(np.abs(dots).max()), 1.0)
        if err.max() > identity_tol * scale:
            raise EnsembleError(
                f"unitarity identity violated: |<x,gw> - <g^-1 x,w>| = {err.max():.3e}"
            )
        dots = dots.reshape(per_batch, n_pool)
        pooled = dots.max(axis=1)
        pooled_vars[b] = pooled.var(ddof=1)
        unpooled_vars[b] = dots.var(ddof=1)
        pooled_all.add(pooled)
        unpooled_all.add(dots.ravel())
    return InvarianceEstimate(
        var_pooled=pooled_all.variance(),
        stderr_pooled=float(pooled_vars.std(ddof=1) / np.sqrt(batches)),
        var_unpooled=unpooled_all.variance(),
        stderr_unpooled=float(unpooled_vars.std(ddof=1) / np.sqrt(batches)),
    )


class _Welford:
    """Streaming ddof-1 variance over chunks."""

    def __init__(self):
        self.n = 0
        self.total = 0.0
        self.total_sq = 0.0

    def add(self, values: np.ndarray):
        self.n += values.size
        self.total += float(values.sum())
        self.total_sq += float((values * values).sum())

    def variance(self) -> float:
        mean = self.total / self.n
        return (self.total_sq - self.n * mean * mean) / (self.n - 1)


# -- probing real layers ------------------------------------------------------

@dataclass
class ProbeReport:
    """Per-channel activation variance across a transformation sweep."""

    angles: np.ndarray
    pre_cmp: np.ndarray   # one variance per expanded channel
    post_cmp: np.ndarray  # one variance per pooled channel

    @property
    def mean_pre(self) -> float:
        return float(self.pre_cmp.mean())

    @property
    def mean_post(self) -> float:
        return float(self.post_cmp.mean())

    def rows(self):
        return (
            [("pre_cmp", i, v) for i, v in enumerate(self.pre_cmp)]
            + [("post_cmp", i, v) for i, v in enumerate(self.post_cmp)]
        )


def layer_invariance_probe(model: Sequential, probe_images: np.ndarray,
                           angles=None, layer_index: int | None = None) -> ProbeReport:
    """Measure variance across a rotation sweep before and after CMP.

    ``probe_images`` is (n, 1, h, w); each image is rotated to every angle
    in the sweep, pushed through the model in eval mode up to the chosen
    permanent-random-connectome layer, and the activation variance across
    the sweep (per input, channel and pixel) is averaged into one number
    per channel for the expanded (pre-CMP) and pooled (post-CMP) maps.
    """
    if angles is None:
        angles = np.arange(-90.0, 91.0, 15.0)
    angles = np.asarray(angles, dtype=np.float64)
    prcn = model.prcn_layers()
    if not prcn:
        raise ValueError("model has no permanent-random-connectome layer to probe")
    if layer_index is None:
        layer_index = prcn[0][0]
    target = model.layers[layer_index]
    if not isinstance(target, PrcnLayer):
        raise ValueError(f"layer {layer_index} is not a PrcnLayer")

    n, c, h, w = probe_images.shape
    pre_stack = []
    post_stack = []
    for angle in angles:
        x = rotate_batch(probe_images.reshape(n * c, h, w),
                         np.full(n * c, angle)).reshape(n, c, h, w)
        for layer in model.layers[:layer_index]:
            x = layer.forward(x, train=False)
        expanded = target.conv.forward(x, train=False)
        pooled, _ = indirect_cmp_forward(expanded, target.plan)
        pre_stack.append(expanded)
        post_stack.append(pooled)
    pre = np.stack(pre_stack)    # (sweep, n, E, h', w')
    post = np.stack(post_stack)  # (sweep, n, J, h', w')
    pre_var = pre.var(axis=0).mean(axis=(0, 2, 3))
    post_var = post.var(axis=0).mean(axis=(0, 2, 3))
    return ProbeReport(angles=angles, pre_cmp=pre_var, post_cmp=post_var)
