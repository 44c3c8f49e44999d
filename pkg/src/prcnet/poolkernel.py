"""Indirect channel max pooling over permuted channel blocks.

Channel max pooling (CMP) after a permanent random shuffle reads
non-contiguous channels: output slot ``j`` is the elementwise max of input
channels ``perm[j*cmp + i]`` for ``i in [0, cmp)``.  The obvious
implementation gathers ``x[:, perm]`` first, materializing a full copy of
the expanded tensor; for the wide expansions these layers use, that copy is
the dominant memory cost of the whole network.

``indirect_cmp_forward`` produces identical output (bitwise, including the
argmax tie-break toward the lowest position within a support) without ever
allocating an expanded-tensor-sized buffer.  It walks the ``cmp`` offsets of
the permutation, gathering each candidate channel set directly into a
reusable scratch tile and folding it into the output with masked updates.
Transient memory is bounded by one scratch tile plus one boolean mask tile;
with the default (untiled) plan that is at most output-size + argmax-size
bytes, and cache tiling shrinks it further.

``bench`` times both paths and reports peak transient allocations measured
with ``tracemalloc`` (numpy's allocator reports into it), so the no-copy
contract is asserted rather than assumed.
"""

from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .connectome import Connectome
from .rng import Rng


@dataclass(frozen=True)
class PoolPlan:
    """Execution plan: wiring plus cache-tiling parameters.

    ``channel_tile`` limits output channels processed per pass,
    ``row_tile`` limits spatial rows; ``None`` means the full extent.
    Results are independent of tiling (each output cell is written by
    exactly one gather/update sequence).
    """

    expansion: int
    cmp: int
    perm: np.ndarray
    channel_tile: int | None = None
    row_tile: int | None = None

    def __post_init__(self):
        perm = np.asarray(self.perm, dtype=np.intp)
        if perm.shape != (self.expansion,):
            raise ValueError("perm length must equal expansion")
        if self.cmp < 1 or self.expansion % self.cmp != 0:
            raise ValueError(f"cmp={self.cmp} must divide expansion={self.expansion}")
        object.__setattr__(self, "perm", perm)
        # contiguous per-offset index arrays, so the hot loop never allocates
        # index buffers; offset i feeds output slot j from perm[j*cmp + i]
        object.__setattr__(
            self, "_offsets",
            tuple(np.ascontiguousarray(perm[i :: self.cmp]) for i in range(self.cmp)),
        )

    @classmethod
    def from_connectome(cls, c: Connectome, channel_tile=None, row_tile=None) -> "PoolPlan":
        return cls(expansion=c.expansion, cmp=c.cmp, perm=c.perm,
                   channel_tile=channel_tile, row_tile=row_tile)

    @property
    def n_out(self) -> int:
        return self.expansion // self.cmp

    def argmax_dtype(self):
        # cmp-local offsets: one byte covers cmp <= 256
        return np.uint8 if self.cmp <= 256 else np.int32


def _offset_index(plan: PoolPlan, i: int) -> np.ndarray:
    """Input channels feeding output slots at within-support offset ``i``."""
    return plan._offsets[i]


def indirect_cmp_forward(x: np.ndarray, plan: PoolPlan):
    """Max over permuted channel blocks without materializing the shuffle.

    Returns ``(out, argmax)`` where ``out[n, j, h, w]`` is the max of
    ``x[n, perm[j*cmp + i], h, w]`` over ``i`` and ``argmax`` holds the
    winning offset ``i`` (lowest wins ties).  ``np.take(..., mode="clip")``
    is used because the default bounds-checking mode buffers the result,
    which would silently break the no-copy contract; indices come from a
    validated permutation so clipping never triggers.
    """
    if x.ndim != 4 or x.shape[1] != plan.expansion:
        raise ValueError(
            f"input has {x.shape[1] if x.ndim == 4 else '?'} channels, plan expects {plan.expansion}"
        )
    n, _, h, w = x.shape
    j_all = plan.n_out
    out = np.empty((n, j_all, h, w), dtype=x.dtype)
    arg = np.zeros((n, j_all, h, w), dtype=plan.argmax_dtype())
    if plan.cmp == 1:
        np.take(x, plan.perm, axis=1, out=out, mode="clip")
        return out, arg

    jt = plan.channel_tile or j_all
    ht = plan.row_tile or h
    scratch = np.empty((n, jt, ht, w), dtype=x.dtype)
    mask = np.empty((n, jt, ht, w), dtype=bool)
    for j0 in range(0, j_all, jt):
        j1 = min(j0 + jt, j_all)
        for h0 in range(0, h, ht):
            h1 = min(h0 + ht, h)
            xv = x[:, :, h0:h1, :]
            out_t = out[:, j0:j1, h0:h1, :]
            arg_t = arg[:, j0:j1, h0:h1, :]
            s_t = scratch[:, : j1 - j0, : h1 - h0, :]
            m_t = mask[:, : j1 - j0, : h1 - h0, :]
            np.take(xv, _offset_index(plan, 0)[j0:j1], axis=1, out=out_t, mode="clip")
            for i in range(1, plan.cmp):
                np.take(xv, _offset_index(plan, i)[j0:j1], axis=1, out=s_t, mode="clip")
                np.greater(s_t, out_t, out=m_t)
                np.copyto(out_t, s_t, where=m_t)
                np.copyto(arg_t, arg.dtype.type(i), where=m_t)
    return out, arg


def indirect_cmp_backward(grad_out: np.ndarray, argmax: np.ndarray, plan: PoolPlan) -> np.ndarray:
    """Route each output gradient to its winning original channel."""
    if grad_out.shape != argmax.shape:
        raise ValueError("grad_out and argmax shapes disagree (stale argmax?)")
    if grad_out.shape[1] != plan.n_out:
        raise ValueError(f"grad_out has {grad_out.shape[1]} channels, plan produces {plan.n_out}")
    n, _, h, w = grad_out.shape
    grad_x = np.empty((n, plan.expansion, h, w), dtype=grad_out.dtype)
    if plan.cmp == 1:
        grad_x[:, plan.perm] = grad_out
        return grad_x
    for i in range(plan.cmp):
        # offsets partition the channels, so plain assignment covers all of grad_x
        grad_x[:, _offset_index(plan, i)] = np.where(argmax == i, grad_out, 0.0)
    return grad_x


def naive_cmp_forward(x: np.ndarray, plan: PoolPlan):
    """Gather-then-pool reference: materializes the shuffled tensor."""
    n, _, h, w = x.shape
    gathered = x[:, plan.perm]  # the expanded-tensor copy the indirect path avoids
    win = gathered.reshape(n, plan.n_out, plan.cmp, h, w)
    arg = win.argmax(axis=2).astype(plan.argmax_dtype())
    out = np.take_along_axis(win, arg[:, :, None].astype(np.intp), axis=2)[:, :, 0]
    return out, arg


def naive_cmp_backward(grad_out: np.ndarray, argmax: np.ndarray, plan: PoolPlan) -> np.ndarray:
    n, _, h, w = grad_out.shape
    win = np.zeros((n, plan.n_out, plan.cmp, h, w), dtype=grad_out.dtype)
    np.put_along_axis(win, argmax[:, :, None].astype(np.intp), grad_out[:, :, None], axis=2)
    grad_x = np.empty((n, plan.expansion, h, w), dtype=grad_out.dtype)
    grad_x[:, plan.perm] = win.reshape(n, plan.expansion, h, w)
    return grad_x


@dataclass
class PathStats:
    path: str
    median_ns: int
    peak_transient_bytes: int


@dataclass
class AllocReport:
    """Timing and transient-allocation accounting for both pooling paths."""

    shape: tuple
    expansion: int
    cmp: int
    elem_bytes: int
    naive: PathStats
    indirect: PathStats

    @property
    def speedup(self) -> float:
        return self.naive.median_ns / self.indirect.median_ns

    @property
    def expanded_bytes(self) -> int:
        n, _, h, w = self.shape
        return n * self.expansion * h * w * self.elem_bytes

    def rows(self):
        config = f"E={self.expansion},cmp={self.cmp},shape={'x'.join(map(str, self.shape))}"
        return [
            (config, "naive", self.naive.median_ns, self.naive.peak_transient_bytes, ""),
            (config, "indirect", self.indirect.median_ns,
             self.indirect.peak_transient_bytes, f"{self.speedup:.3f}"),
        ]


def _measure(fn, reps: int):
    times = []
    started_here = not tracemalloc.is_tracing()
    if started_here:
        tracemalloc.start()
    try:
        peak_transient = 0
        for _ in range(reps):
            baseline = tracemalloc.get_traced_memory()[0]
            tracemalloc.reset_peak()
            t0 = time.perf_counter_ns()
            result = fn()
            times.append(time.perf_counter_ns() - t0)
            peak = tracemalloc.get_traced_memory()[1]
            retained = sum(a.nbytes for a in result)
            # transient = everything above the baseline that was not returned
            peak_transient = max(peak_transient, peak - baseline - retained)
            del result
    finally:
        if started_here:
            tracemalloc.stop()
    return int(np.median(times)), max(peak_transient, 0)


def bench(plan: PoolPlan, shape, reps: int = 10, rng_seed: int = 0, dtype=np.float64) -> AllocReport:
    """Median wall time and peak transient allocation for both paths.

    Timings are host measurements for comparison between the two paths on
    this machine; they are reported, not asserted against any fixed target.
    """
    if reps < 10:
        raise ValueError("need reps >= 10 for a stable median")
    n, c, h, w = shape
    if c != plan.expansion:
        raise ValueError("shape channel count must equal plan expansion")
    x = Rng(rng_seed).normal(n * c * h * w).astype(dtype).reshape(shape)
    naive_ns, naive_bytes = _measure(lambda: naive_cmp_forward(x, plan), reps)
    ind_ns, ind_bytes = _measure(lambda: indirect_cmp_forward(x, plan), reps)
    return AllocReport(
        shape=tuple(shape), expansion=plan.expansion, cmp=plan.cmp,
        elem_bytes=x.itemsize,
        naive=PathStats("naive", naive_ns, naive_bytes),
        indirect=PathStats("indirect", ind_ns, ind_bytes),
    )
