"""Desk-scale objectives with analytic gradients and known constants.

Each task is a finite sum ``f(x) = (1/n) sum_i f_i(x)``.  Stochastic
gradients come from an :class:`Oracle` that averages per-sample gradients
over a random minibatch and may add isotropic Gaussian noise.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import ShapeError


class Task:
    """Base class: subclasses provide ``loss``, ``grad`` and ``sample_grads_at``."""

    kind: str = "task"
    dim: int
    n: int
    L: float
    mu: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ShapeError(f"expected a vector of dim {self.dim}, got shape {x.shape}")
        return x

    def loss(self, x) -> float:
        raise NotImplementedError

    def grad(self, x) -> np.ndarray:
        raise NotImplementedError

    def sample_grads_at(self, x, idx) -> np.ndarray:
        """Mean per-sample gradient over each row of the index array ``idx`` (b x m)."""
        raise NotImplementedError

    def per_sample_grads(self, x) -> np.ndarray:
        """n x d matrix of every per-sample gradient at ``x``."""
        return self.sample_grads_at(x, np.arange(self.n).reshape(-1, 1))

    def dist_sq(self, x) -> Optional[float]:
        if self.x_star is None:
            return None
        diff = np.asarray(x) - self.x_star
        return float(diff @ diff)

    def default_x0(self, rng: np.random.Generator, radius: float = 10.0) -> np.ndarray:
        base = self.x_star if self.x_star is not None else np.zeros(self.dim)
        direction = rng.standard_normal(self.dim)
        return base + radius * direction / np.linalg.norm(direction)

    def shards(self, parts: int) -> list[np.ndarray]:
        """Contiguous label-sorted index shards, one per worker."""
        order = np.argsort(self._labels(), kind="stable")
        return [np.sort(s) for s in np.array_split(order, parts)]

    def _labels(self) -> np.ndarray:
        return np.zeros(self.n)


@dataclass
class Quadratic(Task):
    """f_i(x) = 0.5 ||x - c_i||^2; the mean objective has mu = L = 1."""

    centers: np.ndarray
    kind: str = field(default="quadratic", init=False)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.n, self.dim = self.centers.shape
        c_bar = self.centers.mean(axis=0)
        self.L = 1.0
        self.mu = 1.0
        self.x_star = c_bar
        self.f_star = 0.5 * float(np.mean(np.sum((self.centers - c_bar) ** 2, axis=1)))

    @classmethod
    def make(cls, dim: int, n: int = 1, spread: float = 0.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        c = rng.standard_normal(dim)
        return cls(c + spread * rng.standard_normal((n, dim)))

    def loss(self, x):
        x = self._check(x)
        return 0.5 * float(np.mean(np.sum((x - self.centers) ** 2, axis=1)))

    def grad(self, x):
        return self._check(x) - self.x_star

    def sample_grads_at(self, x, idx):
        return self._check(x) - self.centers[idx].mean(axis=1)


@dataclass
class LeastSquares(Task):
    """f(x) = (1/2n) ||A x - y||^2, mu and L from the spectrum of A^T A / n."""

    A: np.ndarray
    y: np.ndarray
    kind: str = field(default="least_squares", init=False)

    def __post_init__(self):
        self.A = np.ascontiguousarray(self.A, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        self.n, self.dim = self.A.shape
        if self.y.shape[0] != self.n:
            raise ShapeError("A and y disagree on the number of samples")
        H = self.A.T @ self.A / self.n
        eig = np.linalg.eigvalsh(H)
        self.L = float(eig[-1])
        self.mu = float(eig[0]) if eig[0] > 1e-12 * eig[-1] else None
        self.x_star = np.linalg.lstsq(self.A, self.y, rcond=None)[0]
        self.f_star = self.loss(self.x_star)

    @classmethod
    def make(cls, n: int, dim: int, noise: float = 0.1, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        A = rng.standard_normal((n, dim))
        x_true = rng.standard_normal(dim)
        return cls(A, A @ x_true + noise * rng.standard_normal(n))

    @classmethod
    def from_csv(cls, path):
        """Regression data with a header row; the last column is the target."""
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.asarray(rows)
        return cls(data[:, :-1], data[:, -1])

    def loss(self, x):
        r = self.A @ self._check(x) - self.y
        return 0.5 * float(r @ r) / self.n

    def grad(self, x):
        r = self.A @ self._check(x) - self.y
        return self.A.T @ r / self.n

    def sample_grads_at(self, x, idx):
        x = self._check(x)
        Ai = self.A[idx]
        r = Ai @ x - self.y[idx]
        return np.einsum("bmd,bm->bd", Ai, r) / idx.shape[1]

    def _labels(self):
        return self.y


def _log1pexp(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


@dataclass
class Logistic(Task):
    """l2-regularized logistic regression with labels in {-1, +1}.

    Strongly convex with mu = reg; L = reg + lambda_max(A^T A) / (4 n).
    """

    A: np.ndarray
    labels: np.ndarray
    reg: float = 1e-2
    kind: str = field(default="logistic", init=False)

    def __post_init__(self):
        self.A = np.ascontiguousarray(self.A, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        self.n, self.dim = self.A.shape
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        lam_max = float(np.linalg.eigvalsh(self.A.T @ self.A / self.n)[-1])
        self.L = self.reg + lam_max / 4.0
        self.mu = self.reg if self.reg > 0 else None
        self.x_star = self._newton() if self.reg > 0 else None
        self.f_star = self.loss(self.x_star) if self.x_star is not None else None

    @classmethod
    def make(cls, n: int, dim: int, reg: float = 1e-2, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        A = rng.standard_normal((n, dim))
        w = rng.standard_normal(dim)
        p = _sigmoid(A @ w)
        labels = np.where(rng.random(n) < p, 1.0, -1.0)
        return cls(A, labels, reg)

    def _newton(self, iters: int = 100):
        x = np.zeros(self.dim)
        for _ in range(iters):
            g = self.grad(x)
            if np.linalg.norm(g) < 1e-14:
                break
            z = self.labels * (self.A @ x)
            s = _sigmoid(z) * _sigmoid(-z)
            H = (self.A.T * s) @ self.A / self.n + self.reg * np.eye(self.dim)
            x = x - np.linalg.solve(H, g)
        return x

    def loss(self, x):
        x = self._check(x)
        z = self.labels * (self.A @ x)
        return float(np.mean(_log1pexp(-z))) + 0.5 * self.reg * float(x @ x)

    def grad(self, x):
        x = self._check(x)
        z = self.labels * (self.A @ x)
        coef = -self.labels * _sigmoid(-z)
        return self.A.T @ coef / self.n + self.reg * x

    def sample_grads_at(self, x, idx):
        x = self._check(x)
        Ai = self.A[idx]
        yi = self.labels[idx]
        coef = -yi * _sigmoid(-yi * (Ai @ x))
        return np.einsum("bmd,bm->bd", Ai, coef) / idx.shape[1] + self.reg * x

    def _labels(self):
        return self.labels


@dataclass
class TinyMlp(Task):
    """One tanh hidden layer regression net, f_i = 0.5 (net(a_i) - y_i)^2.

    Parameters are packed as [W (h x p), c (h), v (h), e].  Non-convex; no
    optimum or PL constant is claimed.  ``L`` is a rough curvature scale used
    only to pick step sizes.
    """

    inputs: np.ndarray
    targets: np.ndarray
    hidden: int = 8
    kind: str = field(default="tiny_mlp", init=False)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        self.n, self.p = self.inputs.shape
        h = self.hidden
        self.dim = h * self.p + 2 * h + 1
        self.L = float(1.0 + np.mean(np.sum(self.inputs ** 2, axis=1))) * h
        self.mu = None
        self.x_star = None
        self.f_star = None

    @classmethod
    def make(cls, n: int, p: int, hidden: int = 8, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        X = rng.standard_normal((n, p))
        y = np.sin(X @ rng.standard_normal(p))
        return cls(X, y, hidden)

    def init_params(self, rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
        return scale * rng.standard_normal(self.dim)

    def _unpack(self, x):
        h, p = self.hidden, self.p
        W = x[: h * p].reshape(h, p)
        c = x[h * p: h * p + h]
        v = x[h * p + h: h * p + 2 * h]
        e = x[-1]
        return W, c, v, e

    def _forward(self, x, X):
        W, c, v, e = self._unpack(x)
        hid = np.tanh(X @ W.T + c)
        return hid, hid @ v + e

    def loss(self, x):
        x = self._check(x)
        _, out = self._forward(x, self.inputs)
        r = out - self.targets
        return 0.5 * float(r @ r) / self.n

    def _grads(self, x, X, y):
        """Per-sample gradients, one row per sample."""
        W, c, v, e = self._unpack(x)
        hid, out = self._forward(x, X)
        r = out - y
        dpre = (r[:, None] * v[None, :]) * (1.0 - hid ** 2)
        gW = dpre[:, :, None] * X[:, None, :]
        return np.concatenate(
            [gW.reshape(len(X), -1), dpre, r[:, None] * hid, r[:, None]], axis=1
        )

    def grad(self, x):
        x = self._check(x)
        return self._grads(x, self.inputs, self.targets).mean(axis=0)

    def sample_grads_at(self, x, idx):
        x = self._check(x)
        b, m = idx.shape
        flat = idx.reshape(-1)
        g = self._grads(x, self.inputs[flat], self.targets[flat])
        return g.reshape(b, m, -1).mean(axis=1)

    def _labels(self):
        return self.targets


@dataclass
class Oracle:
    """Stochastic first-order oracle handing out one gradient row per worker.

    Each row averages ``minibatch`` per-sample gradients drawn uniformly
    with replacement (from the worker's shard when ``shards`` is set) and
    adds N(0, noise_var / d) per coordinate.  ``minibatch=None`` uses the
    exact full gradient.
    """

    batch_size: int
    minibatch: Optional[int] = 1
    noise_var: float = 0.0
    shards: Optional[Sequence[np.ndarray]] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.minibatch is not None and self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.noise_var < 0:
            raise ValueError("noise_var must be non-negative")
        if self.shards is not None and len(self.shards) != self.batch_size:
            raise ValueError("need one shard per worker")

    def worker_grad(self, task: Task, x, worker: int, rng: np.random.Generator) -> np.ndarray:
        """One stochastic gradient for ``worker`` drawn from its own stream."""
        if self.minibatch is None:
            g = task.grad(x) if self.shards is None else task.sample_grads_at(
                x, np.asarray(self.shards[worker]).reshape(1, -1))[0]
        else:
            pool = None if self.shards is None else self.shards[worker]
            if pool is None:
                idx = rng.integers(0, task.n, size=self.minibatch)
            else:
                idx = np.asarray(pool)[rng.integers(0, len(pool), size=self.minibatch)]
            g = task.sample_grads_at(x, idx.reshape(1, -1))[0]
        if self.noise_var > 0:
            g = g + np.sqrt(self.noise_var / task.dim) * rng.standard_normal(task.dim)
        return g

    def variance_at(self, task: Task, x) -> float:
        """Exact E||g - grad f(x)||^2 of one i.i.d. row at ``x``."""
        var = self.noise_var
        if self.minibatch is not None and self.shards is None:
            per = task.per_sample_grads(x)
            centered = per - per.mean(axis=0)
            var += float(np.mean(np.sum(centered ** 2, axis=1))) / self.minibatch
        return var

    def sigma2(self, task: Task) -> Optional[float]:
        """Declared variance bound, taken at the optimum when it is known."""
        if task.x_star is None:
            return None
        return self.variance_at(task, task.x_star)


def worker_streams(seed: int, b: int) -> list:
    from .core import rng_stream

    return [rng_stream(seed, "worker", i) for i in range(b)]


def sample_grads(task: Task, oracle: Oracle, x, rngs) -> np.ndarray:
    """b x d matrix; row i comes from worker i's stream ``rngs[i]``."""
    x = task._check(x)
    if len(rngs) != oracle.batch_size:
        raise ValueError("need one rng stream per worker")
    return np.stack([oracle.worker_grad(task, x, i, rngs[i]) for i in range(oracle.batch_size)])


def finite_diff_check(task: Task, x, h: float = 1e-5) -> float:
    """Max |central difference - analytic gradient| over coordinates."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = task._check(x).copy()
    g = task.grad(x)
    worst = 0.0
    for j in range(task.dim):
        e = np.zeros(task.dim)
        e[j] = h
        fd = (task.loss(x + e) - task.loss(x - e)) / (2 * h)
        worst = max(worst, abs(fd - g[j]))
    return worst


def make_task(kind: str, dim: int, n: int, rng: np.random.Generator, **kw) -> Task:
    kind = kind.lower()
    if kind == "quadratic":
        return Quadratic.make(dim, n=n, spread=kw.get("spread", 0.0), rng=rng)
    if kind == "least_squares":
        return LeastSquares.make(n, dim, noise=kw.get("noise", 0.1), rng=rng)
    if kind == "logistic":
        return Logistic.make(n, dim, reg=kw.get("reg", 1e-2), rng=rng)
    if kind == "tiny_mlp":
        return TinyMlp.make(n, kw.get("inputs", 3), hidden=kw.get("hidden", 8), rng=rng)
    raise ValueError(f"unknown task kind {kind!r}")
