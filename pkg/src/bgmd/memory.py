"""Server-side error feedback for block-coordinate aggregation.

NOTE: the step size is applied inside :func:`augment` (``gamma * G + m``),
and the aggregated result is subtracted from the model as-is.  Scaling the
update by gamma a second time is a bug.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ShapeError


@dataclass
class MemoryState:
    """Accumulated compression residual, starts at zero."""

    m_hat: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> "MemoryState":
        return cls(np.zeros(dim, dtype=np.float64))

    @property
    def dim(self) -> int:
        return int(self.m_hat.size)


def augment(G, mem: MemoryState, gamma: float) -> np.ndarray:
    """Return ``gamma * G[i] + m_hat`` for every row i."""
    G = np.asarray(G, dtype=np.float64)
    if G.shape[1] != mem.dim:
        raise ShapeError(f"gradient dim {G.shape[1]} != memory dim {mem.dim}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return gamma * G + mem.m_hat


def update(P, Delta):
    """Residual ``M = P - Delta`` and the new memory, its row mean.

    Returns ``(MemoryState, M)``.
    """
    P = np.asarray(P, dtype=np.float64)
    Delta = np.asarray(Delta, dtype=np.float64)
    if P.shape != Delta.shape:
        raise ShapeError(f"shape mismatch {P.shape} vs {Delta.shape}")
    M = P - Delta
    return MemoryState(M.sum(axis=0) / M.shape[0]), M


@dataclass
class ConservationCheck:
    """Tracks row-mean(Delta) + m_next == gamma * row-mean(G) + m_prev per step.

    Also accumulates the telescoped sums so the cumulative form can be
    checked at any time.
    """

    rtol: float = 1e-12
    worst: float = 0.0
    applied: np.ndarray | None = field(default=None, repr=False)
    injected: np.ndarray | None = field(default=None, repr=False)

    def step(self, G, gamma, m_prev, Delta, m_next) -> float:
        lhs = np.asarray(Delta).sum(axis=0) / len(Delta) + m_next
        g_mean = np.asarray(G).sum(axis=0) / len(G)
        rhs = gamma * g_mean + m_prev
        scale = max(float(np.max(np.abs(rhs), initial=0.0)),
                    float(np.max(np.abs(gamma * np.asarray(G)), initial=0.0)),
                    float(np.max(np.abs(m_prev), initial=0.0)), 1e-300)
        err = float(np.max(np.abs(lhs - rhs))) / scale
        self.worst = max(self.worst, err)
        d_mean = np.asarray(Delta).sum(axis=0) / len(Delta)
        if self.applied is None:
            self.applied = np.zeros_like(d_mean)
            self.injected = np.zeros_like(d_mean)
        self.applied = self.applied + d_mean
        self.injected = self.injected + gamma * g_mean
        if err > self.rtol:
            raise AssertionError(f"memory conservation violated: relative error {err:.3e}")
        return err
