"""Gross-contamination adversaries acting on the per-round gradient matrix."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .tasks import LeastSquares, Logistic, Oracle, Quadratic, Task, TinyMlp


class AttackKind(str, enum.Enum):
    NONE = "none"
    ADDITIVE_GAUSSIAN = "additive_gaussian"
    SCALED_BIT_FLIP = "scaled_bit_flip"
    NEG_SUM = "neg_sum"
    FEATURE_NOISE = "feature_noise"
    LABEL_FLIP = "label_flip"


DATA_ATTACKS = (AttackKind.FEATURE_NOISE, AttackKind.LABEL_FLIP)


@dataclass(frozen=True)
class CorruptionSpec:
    """Fraction ``psi`` of rows replaced each round by ``attack``.

    ``std`` is the per-coordinate noise std of the additive attack (default
    10, i.e. variance 100) and ``scale`` the multiplier of the bit flip
    (default -100).  ``dynamic`` resamples the corrupt set every round.
    The data attacks (``feature_noise``, ``label_flip``) act on the samples
    a corrupt worker draws rather than on its gradient row.
    """

    psi: float = 0.0
    attack: AttackKind = AttackKind.NONE
    std: float = 10.0
    scale: float = -100.0
    dynamic: bool = True

    def __post_init__(self):
        object.__setattr__(self, "attack", AttackKind(self.attack))
        if not 0.0 <= self.psi < 0.5:
            raise ValueError(f"psi must be in [0, 0.5), got {self.psi}")
        if not self.std > 0:
            raise ValueError("std must be positive")
        if not np.isfinite(self.scale):
            raise ValueError("scale must be finite")

    @property
    def on_data(self) -> bool:
        return self.attack in DATA_ATTACKS

    def n_corrupt(self, b: int) -> int:
        # floor(psi * b) computed on the decimal value to avoid 0.3 * 10 = 2.999...
        return int(Fraction(str(self.psi)) * b)

    def alpha(self, b: int) -> Fraction:
        nb = self.n_corrupt(b)
        return Fraction(nb, b - nb)


@dataclass(frozen=True)
class CorruptionOutcome:
    corrupt: np.ndarray
    clean: np.ndarray

    @property
    def alpha(self) -> Fraction:
        return Fraction(len(self.corrupt), len(self.clean))


class Adversary:
    """Chooses victims each round and rewrites their rows.

    With ``dynamic=False`` the victim set is drawn on the first call and
    reused.
    """

    def __init__(self, spec: CorruptionSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self._fixed: Optional[np.ndarray] = None

    def choose_victims(self, b: int, t: int = 0) -> CorruptionOutcome:
        return choose_victims(self.spec, b, t, self.rng, self)

    def attack(self, G, outcome: CorruptionOutcome) -> np.ndarray:
        return apply_gradient_attack(G, outcome, self.spec, self.rng)

    def __call__(self, G, t: int = 0):
        outcome = self.choose_victims(len(G), t)
        return self.attack(G, outcome), outcome


def choose_victims(spec: CorruptionSpec, b: int, t: int, rng: np.random.Generator,
                   adversary: Optional[Adversary] = None) -> CorruptionOutcome:
    if b < 1:
        raise ValueError("b must be >= 1")
    nb = spec.n_corrupt(b)
    if nb == 0:
        bad = np.array([], dtype=np.int64)
    elif spec.dynamic or adversary is None:
        bad = np.sort(rng.choice(b, size=nb, replace=False))
    else:
        if adversary._fixed is None or len(adversary._fixed) != nb:
            adversary._fixed = np.sort(rng.choice(b, size=nb, replace=False))
        bad = adversary._fixed
    clean = np.setdiff1d(np.arange(b), bad)
    return CorruptionOutcome(bad, clean)


def apply_gradient_attack(G, outcome: CorruptionOutcome, spec: CorruptionSpec,
                          rng: np.random.Generator) -> np.ndarray:
    """Rewrite the corrupt rows of ``G``; clean rows are copied bit for bit."""
    G = np.asarray(G, dtype=np.float64)
    out = G.copy()
    bad = outcome.corrupt
    if spec.attack is AttackKind.NONE or bad.size == 0:
        return out
    if spec.on_data:
        raise ValueError(f"{spec.attack.value} corrupts samples; use poison_task and apply_data_attack")
    if spec.attack is AttackKind.ADDITIVE_GAUSSIAN:
        out[bad] = G[bad] + spec.std * rng.standard_normal((bad.size, G.shape[1]))
    elif spec.attack is AttackKind.SCALED_BIT_FLIP:
        out[bad] = spec.scale * G[bad]
    elif spec.attack is AttackKind.NEG_SUM:
        # the corrupt rows sum to minus the clean sum, so the row mean is zero
        clean_sum = G[outcome.clean].sum(axis=0)
        out[bad] = -clean_sum / bad.size
    return out


def poison_task(task: Task, spec: CorruptionSpec, rng: np.random.Generator) -> Task:
    """Copy of ``task`` whose samples corrupt workers draw from.

    ``feature_noise`` adds N(0, std^2) to every input feature (or to the
    centers of a quadratic); ``label_flip`` negates logistic labels.
    """
    if spec.attack is AttackKind.FEATURE_NOISE:
        if isinstance(task, Quadratic):
            return Quadratic(task.centers + spec.std * rng.standard_normal(task.centers.shape))
        if isinstance(task, LeastSquares):
            return LeastSquares(task.A + spec.std * rng.standard_normal(task.A.shape), task.y)
        if isinstance(task, Logistic):
            return Logistic(task.A + spec.std * rng.standard_normal(task.A.shape), task.labels, task.reg)
        if isinstance(task, TinyMlp):
            return TinyMlp(task.inputs + spec.std * rng.standard_normal(task.inputs.shape),
                           task.targets, task.hidden)
    elif spec.attack is AttackKind.LABEL_FLIP:
        if isinstance(task, Logistic):
            return Logistic(task.A, -task.labels, task.reg)
        raise ValueError("label_flip needs a logistic task")
    else:
        raise ValueError(f"{spec.attack.value} is not a data attack")
    raise ValueError(f"feature_noise is not defined for {task.kind}")


def apply_data_attack(G, outcome: CorruptionOutcome, poisoned: Task, oracle: Oracle, x,
                      rng: np.random.Generator) -> np.ndarray:
    """Replace each corrupt row by that worker's gradient on the poisoned samples."""
    out = np.array(G, dtype=np.float64, copy=True)
    for i in outcome.corrupt:
        out[i] = oracle.worker_grad(poisoned, x, int(i), rng)
    return out
