"""Training loops: bulk-synchronous robust SGD and the federated variant.

Each synchronous round computes all worker gradients at x_t, lets the
adversary rewrite its rows, aggregates, and steps.  The federated loop runs
H local SGD steps per client between communication rounds and aggregates
the quantized model deltas with the BGMD pipeline on the server.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

import numpy as np

from .aggregate import Aggregator, AggregatorKind
from .compress import QuantConfig, qsgd, quantize_unbiased
from .core import RunRecord, rng_stream
from .corrupt import Adversary, CorruptionSpec, apply_data_attack, poison_task
from .gm import GmConfig
from .tasks import Oracle, Task, sample_grads, worker_streams

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


def resolve_step(step: Union[float, str], L: float) -> float:
    """Numeric step size, or a preset "1/2L" / "1/4L" resolved against ``L``."""
    if isinstance(step, str):
        presets = {"1/2l": 0.5, "1/4l": 0.25}
        key = step.replace(" ", "").lower()
        if key in presets:
            return presets[key] / L
        step = float(step)
    if not step > 0:
        raise ValueError("step size must be positive")
    return float(step)


@dataclass
class SyncRunConfig:
    task: Task
    oracle: Oracle
    aggregator: Aggregator
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    iterations: int = 100
    step: Union[float, str] = "1/2L"
    seed: int = 0
    x0: Optional[np.ndarray] = None
    keep_trajectory: bool = False
    observer: Optional[Callable[["StepEvent"], None]] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class StepEvent:
    """Everything one synchronous round saw, handed to ``SyncRunConfig.observer``."""

    t: int
    x: np.ndarray
    gamma: float
    G: np.ndarray
    outcome: object
    update: np.ndarray
    diag: object


@dataclass
class RunResult:
    records: list
    x: np.ndarray
    diverged: bool = False
    trajectory: Optional[list] = None
    conservation_error: float = 0.0
    messages: Optional[list] = None

    def final(self) -> RunRecord:
        return self.records[-1]


def _initial_point(task: Task, x0, seed: int) -> np.ndarray:
    if x0 is not None:
        return np.array(x0, dtype=np.float64)
    return task.default_x0(rng_stream(seed, "init"))


def _metrics(task: Task, x):
    loss = task.loss(x)
    g = task.grad(x)
    return loss, float(g @ g), task.dist_sq(x)


def _is_diverged(loss: float, loss0: float) -> bool:
    return not np.isfinite(loss) or abs(loss) > DIVERGENCE_FACTOR * max(abs(loss0), 1e-300)


def _n_corrupt(spec: CorruptionSpec, outcome) -> int:
    # victims of a no-op attack are not corrupted
    return 0 if spec.attack.value == "none" else len(outcome.corrupt)


def _diverged_record(t, loss, gsq, dist, corrupt) -> RunRecord:
    return RunRecord(t, loss, gsq, dist, 0.0, 0, 0, corrupt, diverged=True)


def iter_sync(cfg: SyncRunConfig) -> Iterator[tuple]:
    """Yield ``(RunRecord, x_t)`` for t = 0..T-1 (metrics at x_t, before its step)."""
    task, oracle, agg = cfg.task, cfg.oracle, cfg.aggregator
    gamma = resolve_step(cfg.step, task.L)
    x = _initial_point(task, cfg.x0, cfg.seed)
    workers = worker_streams(cfg.seed, oracle.batch_size)
    sampler = rng_stream(cfg.seed, "sampler")
    adversary = Adversary(cfg.corruption, rng_stream(cfg.seed, "adversary"))
    poisoned = poison_task(task, cfg.corruption, rng_stream(cfg.seed, "poison")) if cfg.corruption.on_data else None
    loss0 = None
    for t in range(cfg.iterations):
        t0 = time.perf_counter_ns()
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gsq, dist = _metrics(task, x)
        if loss0 is None:
            loss0 = loss
        if _is_diverged(loss, loss0):
            yield _diverged_record(t, loss, gsq, dist, 0), x
            return
        G = sample_grads(task, oracle, x, workers)
        if poisoned is None:
            G, outcome = adversary(G, t)
        else:
            outcome = adversary.choose_victims(len(G), t)
            G = apply_data_attack(G, outcome, poisoned, oracle, x, adversary.rng)
        if not np.all(np.isfinite(G)):
            yield _diverged_record(t, loss, gsq, dist, len(outcome.corrupt)), x
            return
        update, diag = agg(G, gamma, sampler)
        if cfg.observer is not None:
            cfg.observer(StepEvent(t, x, gamma, G, outcome, update, diag))
        rec = RunRecord(t, loss, gsq, dist, diag.residual_ratio, diag.agg_ns,
                        time.perf_counter_ns() - t0, _n_corrupt(cfg.corruption, outcome))
        yield rec, x
        x = x - update


def _collect(gen, cfg_keep, agg: Optional[Aggregator]) -> RunResult:
    records, traj = [], [] if cfg_keep else None
    x = None
    for rec, x_t in gen:
        records.append(rec)
        if traj is not None:
            traj.append(x_t)
        x = x_t
    diverged = bool(records and records[-1].diverged)
    worst = agg.conservation.worst if agg is not None else 0.0
    return RunResult(records, x, diverged, traj, worst)


def run_sync(cfg: SyncRunConfig, sink: Optional[Callable[[RunRecord], None]] = None) -> RunResult:
    """Run the synchronous loop; ``sink`` receives every record as it is produced.

    ``RunResult.x`` is the last iterate that was measured (x_{T-1}, or the
    point where divergence was detected).
    """
    def gen():
        for rec, x in iter_sync(cfg):
            if sink is not None:
                sink(rec)
            yield rec, x

    return _collect(gen(), cfg.keep_trajectory, cfg.aggregator)


@dataclass
class FedRunConfig:
    """Federated BGMD.  ``bits=None`` bypasses quantization.

    ``client_scale`` multiplies each client message before quantization is
    applied (default 1).  Local steps use ``step`` directly; the server
    aggregates the deltas ``x_t - y_i`` which already carry the step size.
    """

    task: Task
    oracle: Oracle
    k: int
    iterations: int = 100
    period: int = 1
    step: Union[float, str] = "1/2L"
    bits: Optional[int] = 2
    unbiased: bool = False
    client_scale: float = 1.0
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    gm_cfg: GmConfig = field(default_factory=GmConfig)
    use_memory: bool = True
    mode: str = "norm_sample"
    seed: int = 0
    x0: Optional[np.ndarray] = None
    keep_trajectory: bool = False
    keep_messages: bool = False
    backend: Optional[str] = None

    def __post_init__(self):
        if self.period < 1:
            raise ValueError("period H must be >= 1")
        if self.bits is not None and self.bits < 1:
            raise ValueError("quantizer bits must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.corruption.on_data:
            raise ValueError("data attacks are supported by the synchronous loop only")


def comm_schedule(iterations: int, period: int) -> list:
    """Communication happens after every ``period`` local steps."""
    return [t for t in range(iterations) if (t + 1) % period == 0]


@dataclass
class FedState:
    x: np.ndarray
    local: list
    steps_since_sync: list
    aggregator: Aggregator
    messages: list = field(default_factory=list)


def iter_fed(cfg: FedRunConfig, holder: Optional[dict] = None) -> Iterator[tuple]:
    """Yield ``(RunRecord, x_t)`` once per communication round.

    If ``holder`` is given, the live :class:`FedState` is stored under "state".
    """
    task, oracle = cfg.task, cfg.oracle
    gamma = resolve_step(cfg.step, task.L)
    b = oracle.batch_size
    x = _initial_point(task, cfg.x0, cfg.seed)
    workers = worker_streams(cfg.seed, b)
    sampler = rng_stream(cfg.seed, "sampler")
    quant_rng = rng_stream(cfg.seed, "quantizer")
    adversary = Adversary(cfg.corruption, rng_stream(cfg.seed, "adversary"))
    agg = Aggregator(AggregatorKind.BGMD, gm_cfg=cfg.gm_cfg, k=cfg.k, mode=cfg.mode,
                     use_memory=cfg.use_memory, backend=cfg.backend)
    state = FedState(x, [x.copy() for _ in range(b)], [0] * b, agg)
    if holder is not None:
        holder["state"] = state
    qcfg = QuantConfig(cfg.bits, task.dim) if cfg.bits is not None else None
    quantize = quantize_unbiased if cfg.unbiased else qsgd
    rounds = set(comm_schedule(cfg.iterations, cfg.period))
    loss0 = None
    t_round = time.perf_counter_ns()
    for t in range(cfg.iterations):
        if (t % cfg.period) == 0:
            with np.errstate(over="ignore", invalid="ignore"):
                loss, gsq, dist = _metrics(task, state.x)
            if loss0 is None:
                loss0 = loss
            if _is_diverged(loss, loss0):
                yield _diverged_record(t, loss, gsq, dist, 0), state.x
                return
            t_round = time.perf_counter_ns()
        for i in range(b):
            g = oracle.worker_grad(task, state.local[i], i, workers[i])
            state.local[i] = state.local[i] - gamma * g
            state.steps_since_sync[i] += 1
        if t not in rounds:
            continue
        msgs = np.stack([state.x - y for y in state.local])
        if cfg.client_scale != 1.0:
            msgs = cfg.client_scale * msgs
        if qcfg is not None:
            msgs = quantize(msgs, qcfg, quant_rng)
        msgs, outcome = adversary(msgs, t)
        if cfg.keep_messages:
            state.messages.append(msgs)
        if not np.all(np.isfinite(msgs)):
            yield _diverged_record(t, loss, gsq, dist, len(outcome.corrupt)), state.x
            return
        # gamma is already inside the deltas, so augmentation uses a unit step
        update, diag = agg(msgs, 1.0, sampler)
        rec = RunRecord(t, loss, gsq, dist, diag.residual_ratio, diag.agg_ns,
                        time.perf_counter_ns() - t_round, _n_corrupt(cfg.corruption, outcome))
        yield rec, state.x
        state.x = state.x - update
        state.local = [state.x.copy() for _ in range(b)]
        state.steps_since_sync = [0] * b


def run_fed(cfg: FedRunConfig, sink: Optional[Callable[[RunRecord], None]] = None) -> RunResult:
    holder: dict = {}

    def gen():
        for rec, x in iter_fed(cfg, holder):
            if sink is not None:
                sink(rec)
            yield rec, x

    res = _collect(gen(), cfg.keep_trajectory, None)
    state = holder["state"]
    res.conservation_error = state.aggregator.conservation.worst
    if cfg.keep_messages:
        res.messages = state.messages
    return res


class JsonlSink:
    """Writes one RunRecord per line.  ``timings=False`` zeroes the clock fields
    so identical runs produce byte-identical files."""

    def __init__(self, path, timings: bool = False):
        self.path = path
        self.timings = timings
        self._fh = open(path, "w", encoding="utf-8")

    def __call__(self, rec: RunRecord):
        if not self.timings:
            rec = RunRecord(rec.iter, rec.loss, rec.grad_norm_sq, rec.dist_sq, rec.residual_ratio,
                            0, 0, rec.corrupt, rec.diverged)
        self._fh.write(rec.to_json() + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]


def bench_aggregation(d: int, b: int, ks, trials: int = 5, seed: int = 0,
                      gm_cfg: GmConfig = GmConfig(), backend: Optional[str] = None) -> list:
    """Median wall time of GM vs BGMD aggregation on a synthetic b x d matrix.

    Returns one dict per k with the median seconds of both and their ratio.
    GM is timed once per trial and shared across every k.
    """
    if d < 1 or b < 1:
        raise ValueError("d and b must be >= 1")
    rng = rng_stream(seed, "bench")
    # heterogeneous column scales, like real gradients
    scales = np.exp(rng.standard_normal(d))
    gm_times = {}
    bgmd_times = {int(k): [] for k in ks}
    # untimed warm-up so first-call allocation does not land in trial 0
    W = rng_stream(seed, "bench-warmup").standard_normal((b, d))
    Aggregator(AggregatorKind.GM, gm_cfg=gm_cfg, backend=backend)(W, 1.0)
    Aggregator(AggregatorKind.BGMD, gm_cfg=gm_cfg, k=min(d, max(1, d // 100)), backend=backend,
               check_conservation=False)(W, 1.0, rng_stream(seed, "bench-warmup-sampler"))
    for trial in range(trials):
        G = rng.standard_normal((b, d)) * scales
        gm = Aggregator(AggregatorKind.GM, gm_cfg=gm_cfg, backend=backend)
        _, diag = gm(G, 1.0)
        gm_times.setdefault("gm", []).append(diag.agg_ns)
        for k in bgmd_times:
            agg = Aggregator(AggregatorKind.BGMD, gm_cfg=gm_cfg, k=k, backend=backend,
                             check_conservation=False)
            _, diag = agg(G, 1.0, rng_stream(seed, "bench-sampler", trial, k))
            bgmd_times[k].append(diag.agg_ns)
    gm_med = float(np.median(gm_times["gm"])) / 1e9
    rows = []
    for k, times in bgmd_times.items():
        med = float(np.median(times)) / 1e9
        rows.append({"d": d, "b": b, "k": k, "gm_s": gm_med, "bgmd_s": med, "speedup": gm_med / med})
    return rows


def bench_to_csv(rows) -> str:
    header = "d,b,k,gm_s,bgmd_s,speedup"
    lines = [header] + [
        f"{r['d']},{r['b']},{r['k']},{r['gm_s']:.6g},{r['bgmd_s']:.6g},{r['speedup']:.4f}" for r in rows
    ]
    return "\n".join(lines) + "\n"


def summarize(records) -> dict:
    last = records[-1]
    return {
        "final_loss": last.loss,
        "final_dist_sq": last.dist_sq,
        "final_residual": last.residual_ratio,
        "diverged": last.diverged,
        "steps": len(records),
    }


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True)
