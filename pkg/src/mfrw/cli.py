"""Command-line front end.

Exit codes: 0 success, 1 a check failed, 2 conditions refused, 3 I/O
failure, 4 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .cascade import synth_measure
from .config import RunConfig, load_config
from .errors import ConditionRefused, DataError, DegenerateDataError, DomainError, NumericalError
from .io import (MEASURE_COLUMNS, PATH_COLUMNS, TABLE_COLUMNS, dumps_json, measure_rows,
                 path_rows, read_series_csv, read_table_csv, table_rows, write_csv, write_json)
from .process import synth_fgn_exact, synth_mfrw, synth_subordinated
from .scaling import CascadeConfig, ScalingModel
from .seeding import mix64
from .variations import estimate_zeta, structure_function

EXIT_OK, EXIT_CHECK, EXIT_REFUSED, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _model(cfg: RunConfig) -> ScalingModel:
    return ScalingModel(cfg.model["lambda2"])


def _cascade(cfg: RunConfig, n_cells: int | None = None) -> CascadeConfig:
    c = cfg.cascade
    n = n_cells or c["n_cells"] or cfg.process["m_n"] * cfg.process["refine"]
    if n_cells and c["n_cells"] and c["n_cells"] != n_cells:
        raise DomainError(f"cascade.n_cells={c['n_cells']} must equal m_n * refine = {n_cells}")
    return CascadeConfig(T=c["T"], domain_length=c["domain_length"], n_cells=n, l=c["l"])


def _levels(text):
    if text is None:
        return None
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t.strip()]


def _p_list(text):
    return None if text is None else [float(t) for t in text.split(",") if t.strip()]


# --------------------------------------------------------------------------
# subcommands

def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out or cfg.run["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.run["seed"]
    model = _model(cfg)
    H, m_n, refine = cfg.process["H"], cfg.process["m_n"], cfg.process["refine"]
    kind = args.kind
    if kind == "measure":
        config = _cascade(cfg)
        measure = synth_measure(model, config, seed)
        write_csv(out / "measure.csv", MEASURE_COLUMNS, measure_rows(measure))
        write_json(out / "measure.json", measure.provenance())
        return EXIT_OK
    if kind == "path":
        config = _cascade(cfg, m_n * refine)
        _, _, paths = synth_mfrw(model, config, H, m_n, refine, seed, 1)
        path = paths[0]
        side = {"model": model.to_dict(), "config": config.to_dict()}
    elif kind == "fgn":
        path = synth_fgn_exact(H, m_n, seed)
        side = {"model": ScalingModel(0.0).to_dict(), "config": None}
    else:
        config = _cascade(cfg, m_n * refine)
        measure = synth_measure(model, config, mix64(seed, 0))
        path = synth_subordinated(measure, H, mix64(seed, 1), m_n=m_n)
        side = {"model": model.to_dict(), "config": config.to_dict()}
    side.update({"kind": kind, "H": H, "m_n": m_n, "refine": refine, "seed": seed})
    write_csv(out / f"{kind}.csv", PATH_COLUMNS, path_rows(path))
    write_json(out / f"{kind}.json", side)
    return EXIT_OK


def cmd_structure(args, cfg: RunConfig) -> int:
    p_list = _p_list(args.p) or cfg.statistics["p_list"]
    levels = _levels(args.levels) if args.levels else cfg.statistics["levels"]
    if args.input:
        paths = read_series_csv(args.input)[None, :]
        inc = np.diff(paths[0])
        if np.all(inc == inc[0]):
            raise DegenerateDataError(f"{args.input}: constant series carries no scaling information")
    else:
        model = _model(cfg)
        m_n, refine = cfg.process["m_n"], cfg.process["refine"]
        n_paths = cfg.run["replicas"] or 1
        _, _, samples = synth_mfrw(model, _cascade(cfg, m_n * refine), cfg.process["H"],
                                   m_n, refine, cfg.run["seed"], n_paths)
        paths = samples
    table = structure_function(paths, p_list, levels)
    if table.degenerate:
        raise DegenerateDataError("all increments are zero at some level: no scaling information")
    out = Path(args.out or Path(cfg.run["output_dir"]) / "structure.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, TABLE_COLUMNS, table_rows(table))
    return EXIT_OK


def cmd_estimate(args, cfg: RunConfig) -> int:
    table = read_table_csv(args.table)
    p = float(args.p) if args.p is not None else cfg.statistics["p_list"][0]
    levels = _levels(args.levels) if args.levels else cfg.statistics["levels"]
    est = estimate_zeta(table, p, levels, method=args.method)
    text = dumps_json(est.to_dict())
    if args.out:
        Path(args.out).write_bytes(text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _pick(value, default):
    return default if value is None else value


def run_experiment(name: str, cfg: RunConfig) -> ex.ExperimentReport:
    model = _model(cfg)
    H = cfg.process["H"]
    seed = cfg.run["seed"]
    reps = cfg.run["replicas"]
    workers = cfg.run["workers"]
    e = cfg.experiment
    p = int(cfg.statistics["p_list"][0])
    refine = cfg.process["refine"]
    kw: dict = {}
    if name == "measure-scaling":
        kw = dict(q_list=_pick(e["q_list"], [1.0, 2.0]), t_list=_pick(e["t_list"], [0.125, 0.25, 0.5]),
                  replicas=_pick(reps, 10_000), seed=seed, workers=workers)
        return ex.exp_measure_scaling(model, _cascade(cfg, cfg.cascade["n_cells"] or 4096), **kw)
    if name == "degenerate-limit":
        return ex.exp_degenerate_limit(model, H, _pick(e["s"], 1.0), _pick(e["t"], 1.0),
                                       e["l_list"], cfg.cascade["T"])
    if name == "conditional-clt":
        return ex.exp_conditional_clt(model, H, p, cfg.process["m_n"],
                                      _pick(e["measure_seed"], mix64(seed, 0)),
                                      _pick(e["path_replicas"], 4000), mix64(seed, 1), refine)
    if name == "bias":
        return ex.exp_bias(model, H, p, _pick(e["n_list"], [8, 9, 10, 11]), _pick(reps, 500),
                           seed, refine, _pick(e["paths_per_measure"], 1), workers)
    if name == "linearization":
        p_list = cfg.statistics["p_list"] if len(cfg.statistics["p_list"]) > 1 else [1, 2, 3, 4]
        return ex.exp_linearization(model, H, p_list, _pick(e["n_list"], list(range(6, 13))),
                                    _pick(reps, 200), seed, refine,
                                    _pick(e["omega_draws"], 10_000), workers)
    if name == "gamma-stabilization":
        return ex.exp_gamma_stabilization(model, H, p, 2, _pick(e["n_list"], [8, 9, 10, 11]),
                                          _pick(reps, 100), seed, min(refine, 4), workers)
    if name == "correlation-envelope":
        return ex.exp_correlation_envelope(model, H, _pick(e["m_list"], [128, 256]),
                                           _pick(reps, 100), seed, refine, workers)
    raise UsageError(f"unknown experiment {name!r}; choose from {', '.join(ex.EXPERIMENTS)}")


def cmd_experiment(args, cfg: RunConfig) -> int:
    if args.name not in ex.EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(ex.EXPERIMENTS)}")
    if args.workers is not None:
        cfg.run["workers"] = args.workers
    report = run_experiment(args.name, cfg)
    resolved = cfg.to_dict()
    resolved["run"] = {k: v for k, v in resolved["run"].items() if k not in ("workers", "output_dir")}
    report.parameters["resolved_config"] = resolved
    ex.write_report(report, args.out or cfg.run["output_dir"])
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {report.name}:{c.name} statistic={c.statistic:.6g}")
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_report(args, cfg: RunConfig) -> int:
    data = json.loads(Path(args.file).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "checks" not in data:
        raise DataError(f"{args.file}: not an experiment report")
    print(f"experiment: {data.get('experiment')}  schema: {data.get('schema')}  "
          f"passed: {data.get('passed')}")
    for c in data["checks"]:
        target = "" if c["target"] is None else f" target={c['target']:.6g}"
        tol = "" if c["tolerance"] is None else f" tol={c['tolerance']:.3g}"
        print(f"  [{'PASS' if c['pass'] else 'FAIL'}] {c['name']}: {c['statistic']:.6g}{target}{tol}"
              + (f"  ({c['detail']})" if c.get("detail") else ""))
    for key, value in sorted(data.get("diagnostics", {}).items()):
        print(f"  {key}: {json.dumps(value)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mfrw", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat section.key = value configuration file")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="synthesise a measure or a path")
    s.add_argument("--kind", choices=("measure", "path", "fgn", "subordinated"), default="path")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("structure", help="structure-function table from a series or synthesis")
    s.add_argument("--input", help="CSV path (j,t,increment,cumulative) or one-column series")
    s.add_argument("--p", help="comma-separated moment orders")
    s.add_argument("--levels", help="levels as 'a..b' or a comma list")
    s.add_argument("--out", help="output CSV")
    s.set_defaults(func=cmd_structure)

    s = sub.add_parser("estimate", help="estimate zeta(p) from a structure-function table")
    s.add_argument("table")
    s.add_argument("--p")
    s.add_argument("--levels")
    s.add_argument("--method", choices=("replication", "ols-residual"))
    s.add_argument("--out")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("experiment", help="run a named experiment")
    s.add_argument("name")
    s.add_argument("--out", help="output directory")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("report", help="pretty-print a JSON report")
    s.add_argument("file")
    s.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConditionRefused as exc:
        print(str(exc), file=sys.stderr)
        print(dumps_json(exc.report.to_dict()), file=sys.stderr, end="")
        return EXIT_REFUSED
    except (DataError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
