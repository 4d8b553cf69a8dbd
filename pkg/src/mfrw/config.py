"""Flat ``section.key = value`` run configuration."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .errors import InvalidConfigError

SEED_ENV = "MFRW_SEED"


def _number(text: str) -> float:
    return float(Fraction(text.strip()))


def _integer(text: str) -> int:
    value = _number(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


def _list(conv):
    def parse(text: str) -> list:
        text = text.strip()
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(_integer(lo), _integer(hi) + 1))
        return [conv(t) for t in text.split(",") if t.strip()]
    return parse


def _optional(conv):
    def parse(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else conv(text)
    return parse


@dataclass
class RunConfig:
    """Resolved configuration; ``None`` means "use the operation's default"."""

    model: dict = field(default_factory=lambda: {"lambda2": 0.1})
    cascade: dict = field(default_factory=lambda: {
        "T": 1.0, "l": None, "domain_length": 1.0, "n_cells": None})
    process: dict = field(default_factory=lambda: {"H": 0.7, "m_n": 1024, "refine": 8})
    statistics: dict = field(default_factory=lambda: {"p_list": [2.0], "levels": None, "r_max": 8})
    run: dict = field(default_factory=lambda: {
        "seed": 0, "replicas": None, "output_dir": "out", "workers": 1})
    experiment: dict = field(default_factory=lambda: {
        "n_list": None, "q_list": None, "t_list": None, "l_list": None, "m_list": None,
        "path_replicas": None, "paths_per_measure": None, "measure_seed": None,
        "omega_draws": None, "s": None, "t": None})
    seed_source: str = "default"

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}


_PARSERS = {
    "model.lambda2": _number,
    "cascade.T": _number,
    "cascade.l": _optional(_number),
    "cascade.domain_length": _number,
    "cascade.n_cells": _optional(_integer),
    "process.H": _number,
    "process.m_n": _integer,
    "process.refine": _integer,
    "statistics.p_list": _list(_number),
    "statistics.levels": _optional(_list(_integer)),
    "statistics.r_max": _integer,
    "run.seed": _integer,
    "run.replicas": _optional(_integer),
    "run.output_dir": str.strip,
    "run.workers": _integer,
    "experiment.n_list": _optional(_list(_integer)),
    "experiment.q_list": _optional(_list(_number)),
    "experiment.t_list": _optional(_list(_number)),
    "experiment.l_list": _optional(_list(_number)),
    "experiment.m_list": _optional(_list(_integer)),
    "experiment.path_replicas": _optional(_integer),
    "experiment.paths_per_measure": _optional(_integer),
    "experiment.measure_seed": _optional(_integer),
    "experiment.omega_draws": _optional(_integer),
    "experiment.s": _optional(_number),
    "experiment.t": _optional(_number),
}


def _power_of_two(n: int) -> bool:
    return n >= 1 and not n & (n - 1)


def validate(cfg: RunConfig) -> None:
    def need(ok: bool, msg: str):
        if not ok:
            raise InvalidConfigError(msg)

    lam = cfg.model["lambda2"]
    need(math.isfinite(lam) and lam >= 0, "model.lambda2 must be >= 0")
    c = cfg.cascade
    need(c["T"] > 0, "cascade.T must be positive")
    need(c["domain_length"] > 0, "cascade.domain_length must be positive")
    need(c["l"] is None or 0 < c["l"] <= c["T"], "cascade.l must lie in (0, T]")
    need(c["n_cells"] is None or (_power_of_two(c["n_cells"]) and c["n_cells"] >= 2),
         "cascade.n_cells must be a power of two >= 2")
    pr = cfg.process
    need(0 < pr["H"] < 1, "process.H must lie in (0, 1)")
    need(_power_of_two(pr["m_n"]) and pr["m_n"] >= 2, "process.m_n must be a power of two >= 2")
    need(_power_of_two(pr["refine"]), "process.refine must be a power of two")
    st = cfg.statistics
    need(bool(st["p_list"]) and all(p > 0 for p in st["p_list"]), "statistics.p_list must be positive")
    need(st["levels"] is None or (st["levels"] and min(st["levels"]) >= 0),
         "statistics.levels must be non-negative")
    need(st["r_max"] >= 2 and st["r_max"] % 2 == 0, "statistics.r_max must be even >= 2")
    run = cfg.run
    need(run["seed"] >= 0, "run.seed must be non-negative")
    need(run["replicas"] is None or run["replicas"] >= 2, "run.replicas must be >= 2")
    need(run["workers"] >= 1, "run.workers must be >= 1")
    ex = cfg.experiment
    for key in ("path_replicas", "paths_per_measure", "omega_draws"):
        need(ex[key] is None or ex[key] >= 1, f"experiment.{key} must be positive")
    need(ex["l_list"] is None or all(l > 0 for l in ex["l_list"]), "experiment.l_list must be positive")


def parse_config(text: str, env=None) -> RunConfig:
    """Parse configuration text; ``MFRW_SEED`` in ``env`` overrides ``run.seed``."""
    cfg = RunConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"line {lineno}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise InvalidConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise InvalidConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            parsed = _PARSERS[key](value)
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        section, name = key.split(".")
        getattr(cfg, section)[name] = parsed
        if key == "run.seed":
            cfg.seed_source = "config"
    env = os.environ if env is None else env
    if env.get(SEED_ENV, "").strip():
        try:
            cfg.run["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise InvalidConfigError(f"{SEED_ENV} must be an integer") from None
        cfg.seed_source = "environment"
    validate(cfg)
    return cfg


def load_config(path=None, env=None) -> RunConfig:
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, env)
