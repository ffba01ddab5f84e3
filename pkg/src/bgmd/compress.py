"""Block coordinate selection and randomized quantization.

Block selection keeps ``k`` columns of a gradient matrix and zeros the
rest.  In ``NORM_SAMPLE`` mode columns are drawn without replacement with
probability proportional to their squared norms, renormalized after every
draw.  That sequential scheme is realized with exponential race keys:
column j gets ``E_j / s_j`` with ``E_j ~ Exp(1)`` and the k smallest keys
win.  The arrival order of independent exponential clocks with rates
``s_j`` is exactly the sequential renormalized draw, and this costs O(d)
instead of O(k d).  Keys are compared as ``log E_j - log s_j`` so tiny
scores cannot overflow.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from ._backend import get_kernels


class SelectMode(str, enum.Enum):
    NORM_SAMPLE = "norm_sample"
    TOP_K = "top_k"


@dataclass(frozen=True)
class BlockSelection:
    indices: np.ndarray  # strictly increasing column indices, length k
    scores: np.ndarray
    mode: SelectMode

    @property
    def k(self) -> int:
        return int(self.indices.size)


def column_norm_scores(G, backend=None) -> np.ndarray:
    """Squared l2 norm of every column of ``G``."""
    return get_kernels(backend).column_sq_norms(G)


def _smallest_k(keys: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest keys, ties broken toward lower index, sorted."""
    d = keys.size
    if k == d:
        return np.arange(d)
    part = np.argpartition(keys, k - 1)
    cut = keys[part[k - 1]]
    below = np.flatnonzero(keys < cut)
    at = np.flatnonzero(keys == cut)
    return np.sort(np.concatenate([below, at[: k - below.size]]))


def select_block(scores, k: int, mode=SelectMode.NORM_SAMPLE, rng: np.random.Generator | None = None) -> BlockSelection:
    """Choose ``k`` of ``d`` columns from their scores.

    If fewer than k scores are positive, every positive column is taken and
    the rest are the lowest-numbered remaining columns.
    """
    scores = np.asarray(scores, dtype=np.float64)
    d = scores.size
    if not 1 <= k <= d:
        raise ValueError(f"block size k={k} must satisfy 1 <= k <= d={d}")
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite and non-negative")
    mode = SelectMode(mode)
    if k == d:
        return BlockSelection(np.arange(d), scores, mode)
    if mode is SelectMode.TOP_K:
        keys = -scores
    else:
        if rng is None:
            raise ValueError("norm sampling needs an rng")
        race = rng.standard_exponential(d)
        with np.errstate(divide="ignore"):
            keys = np.where(scores > 0, np.log(race) - np.log(np.where(scores > 0, scores, 1.0)), np.inf)
    idx = _smallest_k(keys, k)
    return BlockSelection(idx, scores, mode)


def sample_blocks(scores, k: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    """``draws`` independent norm-sampled blocks, one sorted row of k indices each.

    Row i equals the i-th of ``draws`` successive ``select_block`` calls on
    the same generator; only positive scores may be passed.
    """
    scores = np.asarray(scores, dtype=np.float64)
    d = scores.size
    if not 1 <= k <= d:
        raise ValueError(f"block size k={k} must satisfy 1 <= k <= d={d}")
    if not np.all(scores > 0) or not np.all(np.isfinite(scores)):
        raise ValueError("sample_blocks needs finite positive scores")
    if k == d:
        return np.broadcast_to(np.arange(d), (draws, d)).copy()
    with np.errstate(divide="ignore"):
        keys = np.log(rng.standard_exponential((draws, d))) - np.log(scores)
    return np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k], axis=1)


def apply_block(G, sel: BlockSelection) -> np.ndarray:
    """Copy the selected columns of ``G``; every other entry is zero."""
    G = np.asarray(G, dtype=np.float64)
    if sel.indices.size and sel.indices[-1] >= G.shape[1]:
        raise IndexError("selected column index out of range")
    out = np.zeros_like(G)
    out[:, sel.indices] = G[:, sel.indices]
    return out


def relative_residual(G, Delta) -> float:
    """||G - Delta||_F^2 / ||G||_F^2, defined as 0 for a zero matrix."""
    G = np.asarray(G, dtype=np.float64)
    total = float(np.sum(G * G))
    if total == 0.0:
        return 0.0
    R = G - Delta
    return min(1.0, max(0.0, float(np.sum(R * R)) / total))


@dataclass(frozen=True)
class QuantConfig:
    """b-bit quantizer with 2**b levels on the magnitude ratio |x_j| / ||x||."""

    bits: int
    dim: int

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("bits must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def levels(self) -> int:
        return 2 ** self.bits

    @property
    def variance_factor(self) -> float:
        """min(sqrt(d) / 2^b, d / 2^(2b))"""
        s = float(self.levels)
        return min(math.sqrt(self.dim) / s, self.dim / (s * s))

    @property
    def w(self) -> float:
        return 1.0 + self.variance_factor


def _stochastic_levels(x, levels, rng):
    """Row-wise norms (keepdims) and stochastic level counts.

    Uniforms are drawn for nonzero rows only, in row order, so quantizing a
    stack of rows consumes ``rng`` exactly like quantizing them one by one.
    """
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    lv = np.zeros_like(x)
    live = norm[..., 0] > 0
    if np.all(live):
        lv = np.floor(levels * np.abs(x) / norm + rng.random(x.shape))
    elif np.any(live):
        u = rng.random((int(np.count_nonzero(live)), x.shape[-1]))
        lv[live] = np.floor(levels * np.abs(x[live]) / norm[live] + u)
    return norm, lv


def quantize_unbiased(x, cfg: QuantConfig, rng: np.random.Generator) -> np.ndarray:
    """sign(x) ||x|| / 2^b * floor(2^b |x| / ||x|| + u), u ~ U[0, 1)^d.

    Unbiased, with E||Q(x)||^2 <= (1 + min(sqrt(d)/2^b, d/2^2b)) ||x||^2.
    A 2-D input is quantized row by row.
    """
    x = np.asarray(x, dtype=np.float64)
    norm, lv = _stochastic_levels(x, cfg.levels, rng)
    return np.sign(x) * (norm / cfg.levels) * lv


def qsgd(x, cfg: QuantConfig, rng: np.random.Generator) -> np.ndarray:
    """The b-bit qsgd quantizer, i.e. ``quantize_unbiased(x) / w``.

    Every output magnitude is an integer multiple of ||x|| / (2^b w), the
    expectation is x / w, and qsgd(0) == 0 exactly.  A 2-D input is
    quantized row by row.
    """
    x = np.asarray(x, dtype=np.float64)
    norm, lv = _stochastic_levels(x, cfg.levels, rng)
    return np.sign(x) * (norm / (cfg.levels * cfg.w)) * lv


def qsgd_rows(G, cfg: QuantConfig, rng: np.random.Generator, unbiased: bool = False) -> np.ndarray:
    fn = quantize_unbiased if unbiased else qsgd
    return fn(np.atleast_2d(np.asarray(G, dtype=np.float64)), cfg, rng)
