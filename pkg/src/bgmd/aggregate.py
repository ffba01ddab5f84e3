"""One interface over the four aggregation rules.

Every kind returns an update that is subtracted from the model directly:

* ``MEAN``          gamma * row mean            (plain SGD)
* ``COORD_MEDIAN``  gamma * coordinate median   (CmD)
* ``GM``            gamma * geometric median    (GmD)
* ``BGMD``          geometric median of the memory-augmented block
                    (gamma is applied during augmentation)
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import memory as memory_mod
from ._backend import get_kernels
from .compress import SelectMode, apply_block, select_block
from .gm import GmConfig, coord_median, weiszfeld
from .memory import ConservationCheck, MemoryState


class AggregatorKind(str, enum.Enum):
    MEAN = "mean"
    COORD_MEDIAN = "coord_median"
    GM = "gm"
    BGMD = "bgmd"


@dataclass
class StepDiagnostics:
    residual_ratio: float = 0.0
    agg_ns: int = 0
    gm_iterations: int = 0
    selected: Optional[np.ndarray] = None
    block_rows: Optional[np.ndarray] = None  # Delta restricted to the block, b x k


@dataclass
class Aggregator:
    """Stateful aggregator; BGMD keeps its memory between calls.

    ``k`` is the block size for BGMD.  ``use_memory=False`` turns the error
    feedback off (block descent without memory), which exists only for
    ablation.  ``check_conservation`` asserts the per-step memory identity
    and defaults to on unless Python runs with ``-O``.
    """

    kind: AggregatorKind
    gm_cfg: GmConfig = field(default_factory=GmConfig)
    k: Optional[int] = None
    mode: SelectMode = SelectMode.NORM_SAMPLE
    use_memory: bool = True
    backend: Optional[str] = None
    check_conservation: bool = __debug__
    mem: Optional[MemoryState] = None
    conservation: ConservationCheck = field(default_factory=ConservationCheck)

    def __post_init__(self):
        self.kind = AggregatorKind(self.kind)
        self.mode = SelectMode(self.mode)
        if self.kind is AggregatorKind.BGMD:
            if self.k is None or self.k < 1:
                raise ValueError("BGMD needs a block size k >= 1")

    def reset(self):
        self.mem = None
        self.conservation = ConservationCheck()

    def __call__(self, G, gamma: float, rng: Optional[np.random.Generator] = None):
        return aggregate(self, G, gamma, rng)


def aggregate(state: Aggregator, G, gamma: float, rng: Optional[np.random.Generator] = None):
    """Aggregate the b x d matrix ``G`` into one update vector.

    Returns ``(update, StepDiagnostics)``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    G = np.ascontiguousarray(G, dtype=np.float64)
    t0 = time.perf_counter_ns()
    diag = StepDiagnostics()
    kind = state.kind
    if kind is AggregatorKind.MEAN:
        update = gamma * (G.sum(axis=0) / G.shape[0])
    elif kind is AggregatorKind.COORD_MEDIAN:
        update = gamma * coord_median(G, state.backend)
    elif kind is AggregatorKind.GM:
        res = weiszfeld(G, state.gm_cfg, backend=state.backend)
        update = gamma * res.point
        diag.gm_iterations = res.iterations
    else:
        update = _bgmd_step(state, G, gamma, rng, diag)
    diag.agg_ns = time.perf_counter_ns() - t0
    return update, diag


def _bgmd_step(state: Aggregator, G, gamma, rng, diag: StepDiagnostics):
    b, d = G.shape
    if state.k > d:
        raise ValueError(f"block size k={state.k} exceeds dimension d={d}")
    if state.mem is None or not state.use_memory:
        state.mem = MemoryState.zeros(d)
    m_prev = state.mem
    if state.k == d:
        # every column is kept: no residual, memory empties
        sel = select_block(np.zeros(d), d, state.mode, rng)
        idx = sel.indices
        block = gamma * G
        if m_prev.m_hat.any():
            block += m_prev.m_hat
        m_next = np.zeros(d)
        diag.residual_ratio = 0.0
    else:
        kern = get_kernels(state.backend)
        # one pass over G gives the scores and column sums of P = gamma * G + m
        scores, col_sums = kern.augmented_column_stats(G, m_prev.m_hat, gamma)
        sel = select_block(scores, state.k, state.mode, rng)
        idx = sel.indices
        block = np.take(G, idx, axis=1)
        block *= gamma
        block += m_prev.m_hat[idx]
        # new memory: row mean of P with the selected columns zeroed,
        # i.e. memory.update(P, apply_block(P, sel)) without b x d temporaries
        m_next = col_sums / b
        m_next[idx] = 0.0
        total = float(np.sum(scores))
        kept = float(np.sum(scores[idx]))
        diag.residual_ratio = 0.0 if total == 0.0 else min(1.0, max(0.0, (total - kept) / total))
    if state.check_conservation:
        P = memory_mod.augment(G, m_prev, gamma)
        state.conservation.step(G, gamma, m_prev.m_hat, apply_block(P, sel), m_next)
    state.mem = MemoryState(m_next) if state.use_memory else MemoryState.zeros(d)
    res = weiszfeld(block, state.gm_cfg, backend=state.backend)
    if state.k == d:
        update = res.point
    else:
        update = np.zeros(d)
        update[idx] = res.point
    diag.gm_iterations = res.iterations
    diag.selected = idx
    diag.block_rows = block
    return update
