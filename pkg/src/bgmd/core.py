"""Shared numeric containers, named RNG streams and per-iteration metric rows.

Gradient matrices and parameter vectors are plain float64 numpy arrays that
have been validated and frozen (``writeable=False``).  Every transformation
returns a new array, so they are safe to share between threads.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np


class ShapeError(ValueError):
    """Raised when array shapes or dimensions do not line up."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def grad_matrix(data) -> np.ndarray:
    """Validate ``data`` as a b x d gradient matrix (one row per worker).

    Returns a frozen C-contiguous float64 copy.  1-D input is treated as a
    single row.
    """
    arr = np.array(data, dtype=np.float64, order="C", copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"gradient matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"gradient matrix needs b >= 1 and d >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("gradient matrix contains NaN or Inf")
    return _freeze(arr)


def param_vector(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, copy=True).reshape(-1)
    if arr.size < 1:
        raise ShapeError("parameter vector must have dim >= 1")
    if not np.all(np.isfinite(arr)):
        raise ValueError("parameter vector contains NaN or Inf")
    return _freeze(arr)


def frobenius_norm_sq(G: np.ndarray) -> float:
    """Sum of squared entries, reduced in row-major pairwise order."""
    flat = np.ascontiguousarray(G, dtype=np.float64).reshape(-1)
    # np.add.reduce on a contiguous 1-D buffer is numpy's pairwise summation
    return float(np.add.reduce(flat * flat))


def row_mean(G: np.ndarray) -> np.ndarray:
    """Column-wise mean over the rows of ``G``."""
    G = np.asarray(G, dtype=np.float64)
    return G.sum(axis=0) / G.shape[0]


def _label_key(label: str) -> int:
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(seed: int, label: str, *sub: int) -> np.random.Generator:
    """Independent generator for one named consumer of an experiment seed.

    ``label`` names the consumer ("sampler", "adversary", "worker", ...) and
    ``sub`` carries integer indices such as a worker id.  The same
    ``(seed, label, *sub)`` always yields the same draw sequence; PCG64 and
    SeedSequence are platform independent.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(_label_key(label), *map(int, sub)))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class RunRecord:
    """One row of per-iteration training metrics."""

    iter: int
    loss: float
    grad_norm_sq: float
    dist_sq: Optional[float]
    residual_ratio: float
    agg_ns: int
    total_ns: int
    corrupt: int
    diverged: bool = False

    def __post_init__(self):
        if not 0.0 <= self.residual_ratio <= 1.0:
            raise ValueError(f"residual_ratio {self.residual_ratio} outside [0, 1]")
        if self.agg_ns < 0 or self.total_ns < 0:
            raise ValueError("timings must be non-negative")

    def to_json(self) -> str:
        row = asdict(self)
        # fixed wire schema; the divergence flag is appended only on the halting row
        if not row.pop("diverged"):
            return json.dumps(row)
        for key in ("loss", "grad_norm_sq", "dist_sq"):
            if row[key] is not None and not np.isfinite(row[key]):
                row[key] = None
        row["diverged"] = True
        return json.dumps(row)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        row = json.loads(line)
        for key in ("loss", "grad_norm_sq"):
            if row.get(key) is None:
                row[key] = float("nan")
        return cls(**row)
