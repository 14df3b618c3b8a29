"""Feasibility checking, run metrics and an exhaustive reference solver."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dispatch import DispatchContext, dispatch_cost
from .instances import REFERENCE_COSTS, UcInstance, count_constraints

DEFAULT_TOL = 1e-6


class BudgetExceededError(RuntimeError):
    """The schedule space is larger than the enumeration budget."""


@dataclass(frozen=True)
class Violation:
    tag: str
    index: tuple
    magnitude: float


@dataclass
class FeasibilityReport:
    violations: list
    total: int

    @property
    def passed(self):
        return not self.violations

    @property
    def n_violated(self):
        return len(self.violations)

    def by_tag(self):
        out = {}
        for v in self.violations:
            out[v.tag] = out.get(v.tag, 0) + 1
        return out


def check_feasibility(inst: UcInstance, y, p, tol: float = DEFAULT_TOL) -> FeasibilityReport:
    """Check a binary schedule and dispatch against every UC constraint.

    Each row may be off by ``tol * max(1, scale)``; the scale is the load
    for balance rows, load plus reserve for reserve rows and the unit's
    ``p_max`` for capacity and ramp rows.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    if y.shape != inst.shape or p.shape != inst.shape:
        raise ValueError(f"expected shapes {inst.shape}, got {y.shape} and {p.shape}")
    N, T = inst.shape
    pmin = inst.p_min[:, None]
    pmax = inst.p_max[:, None]
    unit_tol = tol * np.maximum(1.0, pmax)
    out = []

    def collect(tag, excess, allow, index_of):
        for idx in zip(*np.nonzero(excess > allow)):
            out.append(Violation(tag, index_of(idx), float(excess[idx])))

    period = lambda idx: (int(idx[0]),)
    cell = lambda idx: (int(idx[0]), int(idx[1]))

    bal = np.abs(p.sum(axis=0) - inst.load)
    collect("balance", bal, tol * np.maximum(1.0, inst.load), period)
    collect("cap_lo", pmin * y - p, np.broadcast_to(unit_tol, (N, T)), cell)
    collect("cap_hi", p - pmax * y, np.broadcast_to(unit_tol, (N, T)), cell)
    if T > 1:
        y0, y1 = y[:, :-1], y[:, 1:]
        rhs_up = inst.r_up[:, None] * y0 + pmin * (y1 - y0) + pmax * (1 - y1)
        rhs_dn = inst.r_dn[:, None] * y1 + pmin * (y0 - y1) + pmax * (1 - y0)
        ramp_tol = np.broadcast_to(unit_tol, (N, T - 1))
        collect("ramp_up", (p[:, 1:] - p[:, :-1]) - rhs_up, ramp_tol, cell)
        collect("ramp_dn", (p[:, :-1] - p[:, 1:]) - rhs_dn, ramp_tol, cell)
    need = inst.load + inst.reserve
    collect("reserve", need - (pmax * y).sum(axis=0), tol * np.maximum(1.0, need), period)
    return FeasibilityReport(out, count_constraints(inst))


def violation_percentage(report: FeasibilityReport) -> float:
    return 100.0 * report.n_violated / report.total


def gap_percent(cost: float, ref_cost: float) -> float:
    if not ref_cost > 0:
        raise ValueError("reference cost must be positive")
    return 100.0 * (cost - ref_cost) / ref_cost


# ---------------------------------------------------------------------------
# exhaustive reference

@dataclass
class ReferenceSolution:
    y: np.ndarray
    p: np.ndarray
    cost: float
    n_schedules: int
    n_screened: int
    n_dispatched: int


def _period_candidates(inst):
    """Per-period on/off columns that can cover load, reserve and p_min."""
    N = inst.n_units
    cols = np.array(list(itertools.product((0, 1), repeat=N)), dtype=float)
    keep = []
    for t in range(inst.n_periods):
        ok = (cols @ inst.p_max >= inst.load[t] + inst.reserve[t]) & (cols @ inst.p_min <= inst.load[t])
        keep.append(cols[ok])
    return keep


def _solve_chunk(inst, schedules, tol):
    ctx = DispatchContext(inst, slack=False)
    best = None
    n_qp = 0
    for y in schedules:
        n_qp += 1
        sol = ctx.solve(y, warm=False)
        if not sol.solved:
            continue
        if not check_feasibility(inst, y, sol.p, tol).passed:
            continue
        cost = dispatch_cost(inst, y, sol.p)
        if best is None or cost < best[0]:
            best = (cost, y, sol.p.copy())
    return best, n_qp


def exhaustive_solve(inst: UcInstance, budget: int = 2 ** 16, workers: int = 1,
                     tol: float = DEFAULT_TOL):
    """Enumerate every binary schedule and return the cheapest feasible one.

    Schedules failing reserve or per-period capacity are screened out
    before a slack-free dispatch QP is solved for the rest. Returns
    ``None`` when no schedule is feasible. Ties go to the lexicographically
    smallest schedule.
    """
    n_sched = 2 ** (inst.n_units * inst.n_periods)
    if n_sched > budget:
        raise BudgetExceededError(
            f"{inst.name}: {n_sched} schedules exceed the enumeration budget of {budget}"
        )
    per_period = _period_candidates(inst)
    # product in lexicographic order of the flattened (unit-major) schedule is
    # restored by sorting below
    schedules = [np.stack(cols, axis=1) for cols in itertools.product(*per_period)]
    schedules.sort(key=lambda y: tuple(y.ravel()))
    n_screened = n_sched - len(schedules)
    if workers > 1 and len(schedules) > 1:
        chunks = [schedules[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_chunk, [inst] * workers, chunks, [tol] * workers))
    else:
        results = [_solve_chunk(inst, schedules, tol)]
    n_qp = sum(r[1] for r in results)
    bests = [r[0] for r in results if r[0] is not None]
    if not bests:
        return None
    cost, y, p = min(bests, key=lambda b: (b[0], tuple(b[1].ravel())))
    return ReferenceSolution(y.astype(np.int8), p, cost, n_sched, n_screened, n_qp)


def reference_cost(inst: UcInstance, budget: int = 2 ** 16):
    """Best available reference: ``(cost, source)``.

    Enumerates when the instance fits the budget, otherwise falls back to
    the published optimum for bundled instances.
    """
    if 2 ** (inst.n_units * inst.n_periods) <= budget:
        sol = exhaustive_solve(inst, budget)
        return (None, "exhaustive") if sol is None else (sol.cost, "exhaustive")
    if inst.name in REFERENCE_COSTS:
        return REFERENCE_COSTS[inst.name], "published"
    return None, "unavailable"


# ---------------------------------------------------------------------------
# run summaries

@dataclass
class RunSummary:
    feasible: list
    costs: list
    ref_cost: float | None = None
    violation_pct: list = field(default_factory=list)

    @property
    def n_runs(self):
        return len(self.feasible)

    @property
    def feasible_costs(self):
        return [c for f, c in zip(self.feasible, self.costs) if f]

    @property
    def feasibility_rate(self):
        return 100.0 * sum(bool(f) for f in self.feasible) / self.n_runs

    @property
    def best_cost(self):
        fc = self.feasible_costs
        return min(fc) if fc else None

    @property
    def mean_cost(self):
        fc = self.feasible_costs
        return float(np.mean(fc)) if fc else None

    @property
    def std_cost(self):
        # population spread: a single feasible run reports 0
        fc = self.feasible_costs
        return float(np.std(fc)) if fc else None

    @property
    def best_gap(self):
        if self.best_cost is None or self.ref_cost is None:
            return None
        return gap_percent(self.best_cost, self.ref_cost)

    @property
    def mean_gap(self):
        fc = self.feasible_costs
        if not fc or self.ref_cost is None:
            return None
        return float(np.mean([gap_percent(c, self.ref_cost) for c in fc]))

    def as_dict(self):
        return {
            "runs": self.n_runs,
            "feasibility_rate": self.feasibility_rate,
            "best_cost": self.best_cost,
            "mean_cost": self.mean_cost,
            "std_cost": self.std_cost,
            "reference_cost": self.ref_cost,
            "best_gap": self.best_gap,
            "mean_gap": self.mean_gap,
        }


def summarize(runs, ref_cost: float | None = None) -> RunSummary:
    """Aggregate training results (anything with ``feasible`` and ``cost``)."""
    runs = list(runs)
    if not runs:
        raise ValueError("need at least one run")
    return RunSummary(
        feasible=[bool(r.feasible) for r in runs],
        costs=[float(r.cost) if r.cost is not None and math.isfinite(r.cost) else None for r in runs],
        ref_cost=ref_cost,
        violation_pct=[getattr(r, "violation_pct", None) for r in runs],
    )
