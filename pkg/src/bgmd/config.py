"""INI experiment configs.

Six sections, each mapped onto a dataclass.  Every key has a parser and a
formatter so that ``dumps(loads(text))`` is a fixed point: the echo written
next to the outputs parses back to the same resolved config.
"""
from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

OUT_DIR_ENV = "BGMD_OUT_DIR"


class ConfigError(ValueError):
    pass


# value codecs -----------------------------------------------------------

def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_int(none_word):
    def parse(s):
        return None if s.strip().lower() == none_word else int(s)
    return parse


def _opt_float(none_word):
    def parse(s):
        return None if s.strip().lower() == none_word else float(s)
    return parse


def _fmt(none_word=None):
    def fmt(v):
        if v is None:
            return none_word
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)
    return fmt


def _choice(*allowed):
    def parse(s):
        v = s.strip().lower()
        if v not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}; got {s!r}")
        return v
    return parse


def _step(s: str):
    v = s.strip().replace(" ", "").upper()
    if v in ("1/2L", "1/4L"):
        return v
    x = float(s)
    if not x > 0:
        raise ValueError("step must be positive")
    return x


def _key(parse, fmt=None, **kw):
    return field(metadata={"parse": parse, "fmt": fmt or _fmt()}, **kw)


# sections ---------------------------------------------------------------

@dataclass
class TaskSection:
    kind: str = _key(_choice("quadratic", "least_squares", "logistic", "tiny_mlp"),
                     default="least_squares")
    dim: int = _key(int, default=50)
    n: int = _key(int, default=500)
    noise: float = _key(float, default=0.1)
    spread: float = _key(float, default=0.0)
    reg: float = _key(float, default=1e-2)
    inputs: int = _key(int, default=3)
    hidden: int = _key(int, default=8)
    csv: str = _key(str, default="")
    data_seed: int = _key(int, default=0)


@dataclass
class OracleSection:
    batch_size: int = _key(int, default=15)
    minibatch: Optional[int] = _key(_opt_int("full"), _fmt("full"), default=1)
    noise_var: float = _key(float, default=0.0)
    sharded: bool = _key(_bool, default=False)


@dataclass
class AggregatorSection:
    kind: str = _key(_choice("mean", "coord_median", "gm", "bgmd"), default="bgmd")
    k: int = _key(int, default=5)
    mode: str = _key(_choice("norm_sample", "top_k"), default="norm_sample")
    memory: bool = _key(_bool, default=True)
    rel_tol: float = _key(float, default=1e-8)
    max_iters: int = _key(int, default=1000)
    smoothing: Optional[float] = _key(_opt_float("auto"), _fmt("auto"), default=None)
    backend: str = _key(_choice("auto", "compiled", "python"), default="auto")


@dataclass
class CorruptionSection:
    psi: float = _key(float, default=0.0)
    attack: str = _key(_choice("none", "additive_gaussian", "scaled_bit_flip", "neg_sum",
                                       "feature_noise", "label_flip"),
                       default="none")
    std: float = _key(float, default=10.0)
    scale: float = _key(float, default=-100.0)
    dynamic: bool = _key(_bool, default=True)


@dataclass
class EngineSection:
    mode: str = _key(_choice("sync", "fed"), default="sync")
    iterations: int = _key(int, default=200)
    step: object = _key(_step, default="1/4L")
    seed: int = _key(int, default=0)
    period: int = _key(int, default=1)
    bits: Optional[int] = _key(_opt_int("none"), _fmt("none"), default=2)
    unbiased: bool = _key(_bool, default=False)
    client_scale: float = _key(float, default=1.0)


@dataclass
class OutputSection:
    dir: str = _key(str, default="")
    metrics: str = _key(str, default="metrics.jsonl")
    resolved: str = _key(str, default="resolved.ini")
    timings: bool = _key(_bool, default=False)


SECTIONS = {
    "task": TaskSection,
    "oracle": OracleSection,
    "aggregator": AggregatorSection,
    "corruption": CorruptionSection,
    "engine": EngineSection,
    "output": OutputSection,
}


@dataclass
class ExperimentConfig:
    task: TaskSection = field(default_factory=TaskSection)
    oracle: OracleSection = field(default_factory=OracleSection)
    aggregator: AggregatorSection = field(default_factory=AggregatorSection)
    corruption: CorruptionSection = field(default_factory=CorruptionSection)
    engine: EngineSection = field(default_factory=EngineSection)
    output: OutputSection = field(default_factory=OutputSection)

    def out_dir(self, override: Optional[str] = None) -> str:
        if override:
            return override
        if self.output.dir:
            return self.output.dir
        return os.environ.get(OUT_DIR_ENV, "runs")

    def with_value(self, dotted: str, raw: str) -> "ExperimentConfig":
        """Copy with one ``section.key`` set from its text form."""
        sec, _, key = dotted.partition(".")
        if sec not in SECTIONS or not key:
            raise ConfigError(f"expected section.key, got {dotted!r}")
        current = getattr(self, sec)
        value = _parse_value(sec, key, raw)
        out = replace(self, **{sec: replace(current, **{key: value})})
        validate(out)
        return out


def _field_map(sec: str) -> dict:
    return {f.name: f for f in fields(SECTIONS[sec])}


def _parse_value(sec: str, key: str, raw: str):
    fmap = _field_map(sec)
    if key not in fmap:
        raise ConfigError(f"unknown key {key!r} in section [{sec}]")
    try:
        return fmap[key].metadata["parse"](raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec}] {key}: {exc}") from None


def validate(cfg: ExperimentConfig) -> None:
    errs = []
    t, o, a, c, e = cfg.task, cfg.oracle, cfg.aggregator, cfg.corruption, cfg.engine
    if t.dim < 1 or t.n < 1:
        errs.append("[task] dim and n must be >= 1")
    if t.csv and t.kind != "least_squares":
        errs.append("[task] csv is only supported for least_squares")
    if o.batch_size < 1:
        errs.append("[oracle] batch_size must be >= 1")
    if o.minibatch is not None and o.minibatch < 1:
        errs.append("[oracle] minibatch must be >= 1 or 'full'")
    if o.noise_var < 0:
        errs.append("[oracle] noise_var must be >= 0")
    if a.k < 1:
        errs.append("[aggregator] k must be >= 1")
    if not a.rel_tol > 0 or a.max_iters < 1:
        errs.append("[aggregator] rel_tol must be > 0 and max_iters >= 1")
    if a.smoothing is not None and a.smoothing < 0:
        errs.append("[aggregator] smoothing must be >= 0")
    if not 0.0 <= c.psi < 0.5:
        errs.append("[corruption] psi must be in [0, 0.5)")
    if not c.std > 0:
        errs.append("[corruption] std must be > 0")
    if e.iterations < 1 or e.period < 1:
        errs.append("[engine] iterations and period must be >= 1")
    if e.bits is not None and e.bits < 1:
        errs.append("[engine] bits must be >= 1 or 'none'")
    if e.mode == "fed" and c.attack in ("feature_noise", "label_flip"):
        errs.append("[corruption] data attacks run in mode = sync only")
    if c.attack == "label_flip" and t.kind != "logistic":
        errs.append("[corruption] label_flip needs [task] kind = logistic")
    if e.mode == "fed" and a.kind != "bgmd":
        errs.append("[engine] mode = fed needs [aggregator] kind = bgmd")
    if errs:
        raise ConfigError("; ".join(errs))


def loads(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00none",
                                       inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    cfg = ExperimentConfig()
    for sec in parser.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        values = {key: _parse_value(sec, key, raw) for key, raw in parser.items(sec)}
        setattr(cfg, sec, replace(getattr(cfg, sec), **values))
    validate(cfg)
    return cfg


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def dumps(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        parser[sec] = {f.name: f.metadata["fmt"](getattr(obj, f.name)) for f in fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
