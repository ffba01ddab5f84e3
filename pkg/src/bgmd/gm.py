"""Geometric median solvers and a brute-force grid oracle.

The solver is a smoothed Weiszfeld iteration: distances in the reweighting
step are replaced by ``sqrt(|y - x_i|^2 + nu^2)`` so an iterate landing on
an input point never divides by zero.  It stops when the relative decrease
of the sum of distances falls under ``rel_tol``.  That is a practical
stopping rule, not a certificate: the true minimum is unknown at run time,
and the (1 + eps) accuracy is verified in tests against ``brute_force_gm``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._backend import get_kernels
from .core import ShapeError, grad_matrix


@dataclass(frozen=True)
class GmConfig:
    rel_tol: float = 1e-8
    max_iters: int = 1000
    # None -> 1e-10 * median pairwise distance of the input points
    smoothing: Optional[float] = None

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.smoothing is not None and self.smoothing < 0:
            raise ValueError("smoothing must be non-negative")


@dataclass
class GmResult:
    point: np.ndarray
    objective: float
    iterations: int
    converged: bool


def gm_objective(y, points) -> float:
    """Sum of Euclidean distances from ``y`` to each row of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != points.shape[1]:
        raise ShapeError(f"point has dim {y.shape[0]}, data has dim {points.shape[1]}")
    return float(get_kernels("python").distances(points, y).sum())


def coord_median(points, backend=None) -> np.ndarray:
    """Per-coordinate lower median (order statistic ceil(b/2) from the bottom).

    For odd b this is the usual median.  For even b the lower of the two
    middle values is returned, so every output coordinate is an input value.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] == 1:
        return points[0].copy()
    return np.asarray(get_kernels(backend).column_lower_median(points))


def median_pairwise_distance(points) -> float:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    b = points.shape[0]
    if b < 2:
        return 0.0
    sq = np.einsum("ij,ij->i", points, points)
    gram = points @ points.T
    d2 = sq[:, None] + sq[None, :] - 2.0 * gram
    iu = np.triu_indices(b, k=1)
    return float(np.sqrt(np.median(np.maximum(d2[iu], 0.0))))


def default_smoothing(points) -> float:
    nu = 1e-10 * median_pairwise_distance(points)
    if nu == 0.0:
        # more than half the pairs coincide; fall back to the overall spread
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        nu = 1e-10 * float(np.ptp(points, axis=0).max())
    return nu


def weiszfeld(points, cfg: GmConfig = GmConfig(), *, init=None, backend=None, trace=None) -> GmResult:
    """Approximate geometric median of the rows of ``points``.

    Starts from the coordinate-wise median unless ``init`` is given.  Only
    iterates that do not increase the objective are accepted, so the
    returned point is the best iterate seen.  Pass a list as ``trace`` to
    collect the accepted objective values.
    """
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    if points.shape[0] == 1:
        if trace is not None:
            trace.append(0.0)
        return GmResult(points[0].copy(), 0.0, 0, True)
    y0 = coord_median(points, backend) if init is None else np.asarray(init, dtype=np.float64)
    nu = default_smoothing(points) if cfg.smoothing is None else cfg.smoothing
    y, obj, iters, converged = get_kernels(backend).weiszfeld_solve(
        points, y0, nu, cfg.rel_tol, cfg.max_iters, trace
    )
    return GmResult(np.asarray(y), float(obj), int(iters), bool(converged))


def brute_force_gm(points, grid_step: float, bounds: Optional[Sequence[tuple]] = None,
                   chunk: int = 1 << 18) -> GmResult:
    """Exhaustive grid search for the geometric median, d <= 3.

    ``bounds`` is a sequence of (lo, hi) per dimension and defaults to the
    bounding box of the points (which contains the true median).  A smaller
    box gives the minimum restricted to that box, which is still an upper
    bound on the true minimum objective.
    """
    points = grad_matrix(points)
    b, d = points.shape
    if d > 3:
        raise ValueError(f"brute_force_gm supports d <= 3, got d={d}")
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    if bounds is None:
        bounds = list(zip(points.min(axis=0), points.max(axis=0)))
    if len(bounds) != d:
        raise ShapeError("bounds must give one (lo, hi) pair per dimension")
    axes = []
    for lo, hi in bounds:
        n = int(np.floor((hi - lo) / grid_step + 1e-9)) + 1
        axes.append(lo + grid_step * np.arange(n))
    # the grid is evaluated in chunks of the first axis to bound memory
    best_obj, best_pt = np.inf, None
    rest = [a for a in axes[1:]]
    rest_grid = (np.stack(np.meshgrid(*rest, indexing="ij"), axis=-1).reshape(-1, d - 1)
                 if rest else np.zeros((1, 0)))
    per_chunk = max(1, chunk // max(1, rest_grid.shape[0]))
    for start in range(0, axes[0].size, per_chunk):
        first = axes[0][start:start + per_chunk]
        cand = np.concatenate(
            [np.repeat(first, rest_grid.shape[0])[:, None], np.tile(rest_grid, (first.size, 1))], axis=1
        )
        obj = np.zeros(cand.shape[0])
        for row in points:
            diff = cand - row
            obj += np.sqrt(np.einsum("ij,ij->i", diff, diff))
        i = int(np.argmin(obj))
        if obj[i] < best_obj:
            best_obj, best_pt = float(obj[i]), cand[i].copy()
    n_points = int(np.prod([a.size for a in axes]))
    return GmResult(best_pt, best_obj, n_points, True)


def fermat_residual(y, points) -> np.ndarray:
    """Sum of unit vectors from the points to ``y``; ~0 at an interior median."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    diff = np.asarray(y, dtype=np.float64) - points
    norms = np.linalg.norm(diff, axis=1)
    keep = norms > 0
    return (diff[keep] / norms[keep, None]).sum(axis=0)


__all__ = [
    "GmConfig",
    "GmResult",
    "brute_force_gm",
    "coord_median",
    "default_smoothing",
    "fermat_residual",
    "gm_objective",
    "weiszfeld",
]
