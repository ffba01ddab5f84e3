"""Command line: ``bgmd run | gm | bench | sweep``."""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .aggregate import Aggregator, AggregatorKind
from .core import rng_stream
from .corrupt import CorruptionSpec
from .engine import (FedRunConfig, JsonlSink, SyncRunConfig, bench_aggregation, bench_to_csv,
                     run_fed, run_sync, summarize)
from .gm import GmConfig, weiszfeld
from .tasks import LeastSquares, Oracle, TinyMlp, make_task

log = logging.getLogger("bgmd")


def build_task(tc: cfgmod.TaskSection):
    if tc.csv:
        return LeastSquares.from_csv(tc.csv)
    return make_task(tc.kind, tc.dim, tc.n, rng_stream(tc.data_seed, "data"),
                     noise=tc.noise, spread=tc.spread, reg=tc.reg,
                     inputs=tc.inputs, hidden=tc.hidden)


def build_run(cfg: cfgmod.ExperimentConfig):
    """Turn a resolved config into ``("sync" | "fed", run config)``."""
    task = build_task(cfg.task)
    oc, ac, cc, ec = cfg.oracle, cfg.aggregator, cfg.corruption, cfg.engine
    shards = task.shards(oc.batch_size) if oc.sharded else None
    oracle = Oracle(oc.batch_size, oc.minibatch, oc.noise_var, shards)
    gm_cfg = GmConfig(rel_tol=ac.rel_tol, max_iters=ac.max_iters, smoothing=ac.smoothing)
    backend = None if ac.backend == "auto" else ac.backend
    spec = CorruptionSpec(cc.psi, cc.attack, cc.std, cc.scale, cc.dynamic)
    if ac.kind == "bgmd" and ac.k > task.dim:
        raise cfgmod.ConfigError(f"[aggregator] k={ac.k} exceeds the task dimension {task.dim}")
    x0 = task.init_params(rng_stream(ec.seed, "init")) if isinstance(task, TinyMlp) else None
    if ec.mode == "fed":
        return "fed", FedRunConfig(
            task, oracle, ac.k, iterations=ec.iterations, period=ec.period, step=ec.step,
            bits=ec.bits, unbiased=ec.unbiased, client_scale=ec.client_scale,
            corruption=spec, gm_cfg=gm_cfg, use_memory=ac.memory, mode=ac.mode,
            seed=ec.seed, x0=x0, backend=backend)
    agg = Aggregator(AggregatorKind(ac.kind), gm_cfg=gm_cfg,
                     k=ac.k if ac.kind == "bgmd" else None, mode=ac.mode,
                     use_memory=ac.memory, backend=backend)
    return "sync", SyncRunConfig(task, oracle, agg, spec, ec.iterations, ec.step, ec.seed, x0)


def execute(cfg: cfgmod.ExperimentConfig, out_dir: Path) -> dict:
    """Run one experiment, writing metrics and the resolved config to ``out_dir``."""
    kind, run_cfg = build_run(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / cfg.output.resolved).write_text(cfgmod.dumps(cfg), encoding="utf-8")
    with JsonlSink(out_dir / cfg.output.metrics, timings=cfg.output.timings) as sink:
        res = run_sync(run_cfg, sink) if kind == "sync" else run_fed(run_cfg, sink)
    summary = summarize(res.records)
    if res.diverged:
        log.warning("run diverged at iteration %d", res.records[-1].iter)
    return summary


def _load_config(path, seed):
    cfg = cfgmod.load(path)
    if seed is not None:
        cfg = replace(cfg, engine=replace(cfg.engine, seed=seed))
    return cfg


def cmd_run(args) -> int:
    cfg = _load_config(args.config, args.seed)
    summary = execute(cfg, Path(cfg.out_dir(args.out_dir)))
    print(json.dumps(summary, sort_keys=True))
    return 0


def read_points(path) -> np.ndarray:
    pts = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if pts.size == 0:
        raise ValueError(f"no points in {path}")
    return pts


def cmd_gm(args) -> int:
    pts = read_points(args.points)
    res = weiszfeld(pts, GmConfig(rel_tol=args.tol, max_iters=args.max_iters))
    print(json.dumps({
        "point": [float(v) for v in res.point],
        "objective": float(res.objective),
        "iterations": int(res.iterations),
        "converged": bool(res.converged),
    }))
    return 0


def _int_list(s: str) -> list:
    return [int(float(v)) for v in s.split(",") if v.strip()]


def cmd_bench(args) -> int:
    ks = _int_list(args.k) if args.k else sorted({max(1, args.d // 100), max(1, args.d // 10), args.d})
    rows = bench_aggregation(args.d, args.b, ks, trials=args.trials, seed=args.seed,
                             backend=None if args.backend == "auto" else args.backend)
    sys.stdout.write(bench_to_csv(rows))
    return 0


def _parse_param(spec: str):
    key, sep, values = spec.partition("=")
    if not sep or not values:
        raise cfgmod.ConfigError(f"--param expects section.key=v1,v2,...; got {spec!r}")
    return key.strip(), [v.strip() for v in values.split(",")]


def cmd_sweep(args) -> int:
    base = _load_config(args.config, None)
    grid = [_parse_param(p) for p in args.param]
    keys = [k for k, _ in grid]
    root = Path(base.out_dir(args.out_dir))
    cells = []
    for combo in itertools.product(*[vals for _, vals in grid]):
        cfg = base
        for key, raw in zip(keys, combo):
            cfg = cfg.with_value(key, raw)
        for s in range(args.seeds):
            cells.append((combo, s, replace(cfg, engine=replace(cfg.engine, seed=base.engine.seed + s))))
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for combo, s, cfg in cells:
        name = "__".join(f"{k}={v}" for k, v in zip(keys, combo)) or "base"
        cell_dir = root / f"{name}__seed={cfg.engine.seed}"
        summary = execute(cfg, cell_dir)
        rows.append([cell_dir.name, *combo, cfg.engine.seed, summary["final_loss"],
                     summary["final_dist_sq"], summary["final_residual"],
                     int(summary["diverged"]), summary["steps"]])
    with open(root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", *keys, "seed", "final_loss", "final_dist_sq", "final_residual",
                    "diverged", "steps"])
        w.writerows(rows)
    print(root / "summary.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgmd", description="Robust aggregation experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment from an INI config")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out-dir", default=None,
                   help=f"output directory (default: [output] dir, then ${cfgmod.OUT_DIR_ENV}, then ./runs)")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("gm", help="geometric median of a CSV point file")
    g.add_argument("points")
    g.add_argument("--tol", type=float, default=1e-8)
    g.add_argument("--max-iters", type=int, default=1000)
    g.set_defaults(func=cmd_gm)

    b = sub.add_parser("bench", help="time GM against BGMD aggregation")
    b.add_argument("--d", type=int, default=100_000)
    b.add_argument("--b", type=int, default=32)
    b.add_argument("--k", default=None, help="comma-separated block sizes")
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--backend", choices=["auto", "compiled", "python"], default="auto")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="grid of runs over config values and seeds")
    s.add_argument("config")
    s.add_argument("--param", action="append", default=[], help="section.key=v1,v2,...")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out-dir", default=None)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
