"""Command-line experiment runner.

Verbs: ``run`` (multi-seed training campaign), ``sweep`` (layers or steps
ablation), ``reference`` (exhaustive or bundled reference cost) and
``inspect`` (pretty-print an instance).

Settings come from, in increasing priority: built-in defaults, a JSON
file given with ``--config``, command-line flags. The default output
directory is ``$PCEUC_OUT`` or ``./results``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import pce
from .bilevel import TrainConfig, train
from .instances import (
    REFERENCE_COSTS,
    InstanceError,
    UnknownInstanceError,
    count_constraints,
    resolve_instance,
)
from .reference import BudgetExceededError, exhaustive_solve, gap_percent, summarize

log = logging.getLogger("pceuc")

OUT_ENV = "PCEUC_OUT"
DEFAULT_OUT = "results"
EXIT_CONFIG = 2
EXIT_IO = 3

DEFAULTS = {
    "instance": None,
    "ansatz": "brickwork",
    "layers": 6,
    "steps": 200,
    "seeds": "1",
    "k": 2,
    "alpha": None,
    "rho_bal": 1e4,
    "rho_ramp": 1e3,
    "lambda_res": 100.0,
    "lr": 0.05,
    "subset": 16,
    "thresholds": None,
    "out": None,
    "workers": 1,
    "axis": None,
    "values": None,
    "budget": 2 ** 16,
}


class ConfigError(ValueError):
    pass


def fmt(x):
    """Six significant digits for floats, everything else unchanged."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return str(x)
        return format(x, ".6g")
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if x is None:
        return ""
    return str(x)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_ready(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(format(x, ".6g")) if math.isfinite(x) else None
    return obj


def write_json(path: Path, obj, exact=()):
    """Write ``obj`` with floats at six significant digits, except top-level ``exact`` keys."""
    data = {k: (v if k in exact else _json_ready(v)) for k, v in obj.items()}
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def money(x):
    """Costs in reference reports are quoted to the cent."""
    return None if x is None else round(float(x), 2)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# configuration

def _int_list(text, what):
    try:
        vals = [int(v) for v in str(text).replace(" ", "").split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"{what} must be integers, got {text!r}") from None
    return vals


def parse_seeds(value):
    """``"10"`` means seeds 0..9; ``"3,7"`` lists seeds explicitly."""
    if isinstance(value, int):
        value = str(value)
    if isinstance(value, (list, tuple)):
        seeds = [int(s) for s in value]
    elif "," in str(value):
        seeds = _int_list(value, "seeds")
    else:
        n = _int_list(value, "seeds")
        if len(n) != 1 or n[0] < 1:
            raise ConfigError("--seeds must be a positive count or a comma-separated list")
        seeds = list(range(n[0]))
    if not seeds:
        raise ConfigError("seed list is empty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seed list has duplicates")
    return seeds


def parse_thresholds(value):
    if value is None:
        return pce.DEFAULT_THRESHOLDS
    if isinstance(value, (list, tuple)):
        vals = [float(v) for v in value]
    else:
        try:
            vals = [float(v) for v in str(value).split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"bad threshold list {value!r}") from None
    if not vals or any(not 0 < v < 1 for v in vals):
        raise ConfigError("thresholds must be a non-empty list of values in (0, 1)")
    return tuple(vals)


def load_config_file(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise OSError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    out = {}
    for key, val in data.items():
        k = key.replace("-", "_")
        if k not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        out[k] = val
    return out


def merge_settings(args: argparse.Namespace):
    """defaults < config file < command-line flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    if settings["out"] is None:
        settings["out"] = os.environ.get(OUT_ENV) or DEFAULT_OUT
    return settings


def train_config(settings, seed=0, **over) -> TrainConfig:
    try:
        return TrainConfig(
            ansatz=settings["ansatz"], layers=int(settings["layers"]), steps=int(settings["steps"]),
            k=int(settings["k"]),
            alpha=None if settings["alpha"] is None else float(settings["alpha"]),
            rho_bal=float(settings["rho_bal"]), rho_ramp=float(settings["rho_ramp"]),
            lambda_res=float(settings["lambda_res"]), lr=float(settings["lr"]),
            subset=int(settings["subset"]), seed=seed,
            thresholds=parse_thresholds(settings["thresholds"]),
        ).with_(**over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _instance(settings):
    if not settings["instance"]:
        raise ConfigError("--instance is required")
    try:
        return resolve_instance(settings["instance"])
    except UnknownInstanceError as exc:
        raise ConfigError(exc.args[0]) from None
    except InstanceError as exc:
        raise ConfigError(str(exc)) from None


def _summary_reference(inst, budget):
    if inst.name in REFERENCE_COSTS:
        return REFERENCE_COSTS[inst.name], "published"
    try:
        sol = exhaustive_solve(inst, budget)
    except BudgetExceededError:
        return None, "unavailable"
    return (sol.cost, "exhaustive") if sol is not None else (None, "infeasible")


# ---------------------------------------------------------------------------
# execution

def _train_job(job):
    inst, cfg, checkpoints = job
    return train(inst, cfg, checkpoints)


def _run_jobs(jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_job, jobs))
    return [_train_job(j) for j in jobs]


def _record(inst, cfg, res, ref):
    return {
        "instance": inst.name,
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "seed": res.seed,
        "n_qubits": res.n_qubits,
        "feasible": res.feasible,
        "cost": res.cost,
        "gap": gap_percent(res.cost, ref) if (ref and res.feasible) else None,
        "violation_pct": res.violation_pct,
        "threshold": res.tau,
        "theta": res.theta,
        "soft_schedule": res.soft,
        "schedule": res.y,
        "dispatch": res.p,
        "history": [vars(h) for h in res.history],
    }


HISTORY_COLUMNS = ["seed", "step", "objective", "f_part", "reserve", "dispatch_value",
                   "status", "qp_iterations"]
RUN_COLUMNS = ["seed", "feasible", "cost", "gap", "violation_pct", "threshold"]
SUMMARY_COLUMNS = ["instance", "ansatz", "layers", "steps", "n_qubits", "runs",
                   "feasibility_rate", "best_cost", "mean_cost", "std_cost",
                   "reference_cost", "reference_source", "best_gap", "mean_gap"]
SWEEP_COLUMNS = ["axis", "value", "seed", "feasible", "cost", "gap", "violation_pct"]


def cmd_run(settings) -> int:
    inst = _instance(settings)
    seeds = parse_seeds(settings["seeds"])
    cfgs = [train_config(settings, s) for s in seeds]
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    results = _run_jobs([(inst, c, None) for c in cfgs], int(settings["workers"]))
    ref, source = _summary_reference(inst, int(settings["budget"]))
    for cfg, res in zip(cfgs, results):
        write_json(out / f"run_{inst.name}_seed{res.seed}.json", _record(inst, cfg, res, ref))
    write_csv(out / "history.csv", HISTORY_COLUMNS,
              [[r.seed, h.step, h.objective, h.f_part, h.reserve, h.dispatch_value,
                h.status, h.qp_iterations] for r in results for h in r.history])
    write_csv(out / "runs.csv", RUN_COLUMNS,
              [[r.seed, r.feasible, r.cost,
                gap_percent(r.cost, ref) if (ref and r.feasible) else None,
                r.violation_pct, r.tau] for r in results])
    summ = summarize(results, ref)
    d = summ.as_dict()
    cfg0 = cfgs[0]
    row = [inst.name, cfg0.ansatz, cfg0.layers, cfg0.steps, results[0].n_qubits, d["runs"],
           d["feasibility_rate"], d["best_cost"], d["mean_cost"], d["std_cost"],
           ref, source, d["best_gap"], d["mean_gap"]]
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, [row])
    print(",".join(SUMMARY_COLUMNS))
    print(",".join(fmt(v) for v in row))
    return 0


def cmd_sweep(settings) -> int:
    axis = settings["axis"]
    if axis not in ("layers", "steps"):
        raise ConfigError("--axis must be 'layers' or 'steps'")
    if settings["values"] is None:
        raise ConfigError("--values is required")
    values = settings["values"]
    values = [int(v) for v in values] if isinstance(values, list) else _int_list(values, "values")
    if not values:
        raise ConfigError("value list is empty")
    if any(v < 1 for v in values):
        raise ConfigError("sweep values must be >= 1")
    inst = _instance(settings)
    seeds = parse_seeds(settings["seeds"])
    ref, _ = _summary_reference(inst, int(settings["budget"]))
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    workers = int(settings["workers"])
    rows = []

    def gap(feasible, cost):
        return gap_percent(cost, ref) if (ref and feasible) else None

    if axis == "layers":
        jobs = [(inst, train_config(settings, s, layers=v), None) for v in values for s in seeds]
        results = _run_jobs(jobs, workers)
        for (_, cfg, _), r in zip(jobs, results):
            rows.append(["layers", cfg.layers, r.seed, r.feasible, r.cost,
                         gap(r.feasible, r.cost), r.violation_pct])
    else:
        marks = sorted(set(values))
        jobs = [(inst, train_config(settings, s, steps=marks[-1]), marks) for s in seeds]
        results = _run_jobs(jobs, workers)
        for r in results:
            for cp in r.checkpoints:
                rows.append(["steps", cp.step, r.seed, cp.feasible, cp.cost,
                             gap(cp.feasible, cp.cost), cp.violation_pct])
        rows.sort(key=lambda row: (row[1], row[2]))
    write_csv(out / f"sweep_{axis}.csv", SWEEP_COLUMNS, rows)
    print(f"wrote {len(rows)} rows to {out / f'sweep_{axis}.csv'}")
    return 0


def cmd_reference(settings) -> int:
    inst = _instance(settings)
    budget = int(settings["budget"])
    n_bits = inst.n_units * inst.n_periods
    n_sched = 2 ** n_bits
    record = {"instance": inst.name, "binary_variables": n_bits}
    if n_sched <= budget:
        sol = exhaustive_solve(inst, budget, workers=int(settings["workers"]))
        if sol is None:
            record.update(source="exhaustive", cost=None)
            print(f"{inst.name}: no feasible schedule (exhaustive, 2^{n_bits} schedules)")
        else:
            record.update(source="exhaustive", cost=money(sol.cost), schedule=sol.y, dispatch=sol.p,
                          screened=sol.n_screened, dispatched=sol.n_dispatched)
            print(f"{inst.name}: {sol.cost:.2f} (exhaustive, 2^{n_bits} schedules)")
    elif inst.name in REFERENCE_COSTS:
        record.update(source="published", cost=money(REFERENCE_COSTS[inst.name]))
        print(f"{inst.name}: {REFERENCE_COSTS[inst.name]:.2f} (published reference; "
              f"2^{n_bits} schedules exceed budget {budget})")
    else:
        record.update(source="unavailable", cost=None)
        print(f"{inst.name}: no reference (2^{n_bits} schedules exceed budget {budget})")
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / f"reference_{inst.name}.json", record, exact=("cost",))
    return 0


def cmd_inspect(settings) -> int:
    inst = _instance(settings)
    n_vars = inst.n_units * inst.n_periods
    k = int(settings["k"])
    nq = pce.select_qubit_count(n_vars, k)
    print(f"instance {inst.name}: {inst.n_units} units x {inst.n_periods} periods")
    print(f"binary variables {n_vars}, constraints {count_constraints(inst)}, "
          f"qubits {nq} (k={k}, capacity {pce.capacity(nq, k)})")
    if inst.name in REFERENCE_COSTS:
        print(f"published reference cost {REFERENCE_COSTS[inst.name]:.2f}")
    head = ["unit", "a", "b", "c", "pmin", "pmax", "rup", "rdn"]
    rows = [[i, u.a, u.b, u.c, u.p_min, u.p_max, u.r_up, u.r_dn] for i, u in enumerate(inst.units)]
    _table(head, rows)
    _table(["period", "load", "reserve"],
           [[t, l, s] for t, (l, s) in enumerate(zip(inst.loads, inst.reserves))])
    return 0


def _table(head, rows):
    cells = [head] + [[fmt(v) for v in r] for r in rows]
    widths = [max(len(str(r[j])) for r in cells) for j in range(len(head))]
    for r in cells:
        print("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
    print()


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "reference": cmd_reference, "inspect": cmd_inspect}


def build_parser():
    parser = argparse.ArgumentParser(prog="pceuc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with default settings")
        p.add_argument("--instance", help="bundled name (e.g. UC_4b) or instance file path")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--workers", type=int, help="parallel worker processes")

    def training(p):
        p.add_argument("--ansatz", choices=("brickwork", "su2"))
        p.add_argument("--layers", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--seeds", help="seed count N (seeds 0..N-1) or comma list")
        p.add_argument("--k", type=int, help="correlator order")
        p.add_argument("--alpha", type=float, help="decode sharpness (default n_qubits**2)")
        p.add_argument("--rho-bal", dest="rho_bal", type=float)
        p.add_argument("--rho-ramp", dest="rho_ramp", type=float)
        p.add_argument("--lambda-res", dest="lambda_res", type=float)
        p.add_argument("--lr", type=float)
        p.add_argument("--subset", type=int, help="parameters updated per step")
        p.add_argument("--thresholds", help="comma list of hardening thresholds")
        p.add_argument("--budget", type=int, help="enumeration cap for reference costs")

    p = sub.add_parser("run", help="train one or more seeds and summarize")
    common(p)
    training(p)
    p = sub.add_parser("sweep", help="ablation over layers or steps")
    common(p)
    training(p)
    p.add_argument("--axis", choices=("layers", "steps"))
    p.add_argument("--values", help="comma list of axis values")
    p = sub.add_parser("reference", help="reference cost for an instance")
    common(p)
    p.add_argument("--budget", type=int, help="maximum number of schedules to enumerate")
    p = sub.add_parser("inspect", help="pretty-print an instance")
    common(p)
    p.add_argument("--k", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = merge_settings(args)
        return COMMANDS[args.command](settings)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
