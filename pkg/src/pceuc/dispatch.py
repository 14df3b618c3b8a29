"""Lower-level economic dispatch for a given (soft or hard) commitment schedule.

Variables, in order: ``p[i, t]`` (row-major), balance slacks ``s_bal[t]``,
ramp slacks ``s_up[i, t]`` and ``s_dn[i, t]`` for each consecutive pair
``(t, t + 1)``. Constraint rows, in order: ``balance[t]``, ``cap_lo[i, t]``,
``cap_hi[i, t]``, ``ramp_up[i, t]``, ``ramp_dn[i, t]``.

The slack-free variant drops the slack columns and keeps the same rows; it
is what a hard schedule must satisfy exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import qp
from .instances import UcInstance

ROW_FAMILIES = ("balance", "cap_lo", "cap_hi", "ramp_up", "ramp_dn")


class DispatchError(RuntimeError):
    pass


@dataclass
class DispatchProblem:
    """Assembled dispatch QP plus index maps back to named quantities."""

    qp: qp.QpProblem
    shape: tuple
    slack: bool
    var_slices: dict
    row_slices: dict

    @property
    def n_vars(self):
        return self.qp.n

    @property
    def n_rows(self):
        return self.qp.m

    def row_tag(self, row: int):
        """Map a constraint row to ``(family, index tuple)``."""
        n_units, n_periods = self.shape
        for fam, sl in self.row_slices.items():
            if sl.start <= row < sl.stop:
                k = row - sl.start
                if fam == "balance":
                    return fam, (k,)
                width = n_periods if fam.startswith("cap") else n_periods - 1
                return fam, divmod(k, width)
        raise IndexError(row)


@dataclass
class DispatchSolution:
    p: np.ndarray
    s_bal: np.ndarray
    s_up: np.ndarray
    s_dn: np.ndarray
    duals: dict
    value: float
    dispatch_cost: float
    status: str
    qp_solution: qp.QpSolution

    @property
    def solved(self):
        return self.status == qp.SOLVED

    def max_slack(self):
        parts = [np.abs(self.s_bal).ravel(), np.abs(self.s_up).ravel(), np.abs(self.s_dn).ravel()]
        return float(max((v.max() for v in parts if v.size), default=0.0))


def _check_schedule(inst, y):
    y = np.asarray(y, dtype=float)
    if y.shape != inst.shape:
        raise ValueError(f"schedule has shape {y.shape}, expected {inst.shape}")
    return y


def bounds(inst: UcInstance, y):
    """Row bounds ``(l, u)`` of the dispatch QP for schedule ``y``."""
    y = _check_schedule(inst, y)
    n_units, n_periods = inst.shape
    pmin = inst.p_min[:, None]
    pmax = inst.p_max[:, None]
    y0, y1 = y[:, :-1], y[:, 1:]
    rhs_up = inst.r_up[:, None] * y0 + pmin * (y1 - y0) + pmax * (1 - y1)
    rhs_dn = inst.r_dn[:, None] * y1 + pmin * (y0 - y1) + pmax * (1 - y0)
    n_cap = n_units * n_periods
    n_ramp = n_units * (n_periods - 1)
    inf = np.inf
    l = np.concatenate([
        inst.load,
        (pmin * y).ravel(),
        np.full(n_cap, -inf),
        np.full(2 * n_ramp, -inf),
    ])
    u = np.concatenate([
        inst.load,
        np.full(n_cap, inf),
        (pmax * y).ravel(),
        rhs_up.ravel(),
        rhs_dn.ravel(),
    ])
    return l, u


def assemble(inst: UcInstance, y, rho_bal: float = 1e4, rho_ramp: float = 1e3,
             slack: bool = True) -> DispatchProblem:
    """Build the dispatch QP for schedule ``y``.

    With ``slack=True`` the balance and ramp rows carry free slack variables
    penalized by ``rho_bal * s**2`` and ``rho_ramp * s**2``.
    """
    if slack and (rho_bal <= 0 or rho_ramp <= 0):
        raise ValueError("penalty weights must be positive")
    y = _check_schedule(inst, y)
    N, T = inst.shape
    n_p = N * T
    n_r = N * (T - 1)
    n_s = (T + 2 * n_r) if slack else 0
    n = n_p + n_s
    pidx = np.arange(n_p).reshape(N, T)

    var_slices = {"p": slice(0, n_p)}
    if slack:
        var_slices["s_bal"] = slice(n_p, n_p + T)
        var_slices["s_up"] = slice(n_p + T, n_p + T + n_r)
        var_slices["s_dn"] = slice(n_p + T + n_r, n)

    p_diag = np.repeat(2.0 * inst.c, T)
    q = np.concatenate([np.repeat(inst.b, T), np.zeros(n_s)])
    if slack:
        s_diag = np.concatenate([np.full(T, 2.0 * rho_bal), np.full(2 * n_r, 2.0 * rho_ramp)])
        P = sp.diags(np.concatenate([p_diag, s_diag]), format="csc")
    else:
        P = sp.diags(p_diag, format="csc")

    rows, cols, vals = [], [], []
    r = 0
    row_slices = {}

    start = r
    for t in range(T):
        for i in range(N):
            rows.append(r); cols.append(pidx[i, t]); vals.append(1.0)
        if slack:
            rows.append(r); cols.append(var_slices["s_bal"].start + t); vals.append(1.0)
        r += 1
    row_slices["balance"] = slice(start, r)

    for fam in ("cap_lo", "cap_hi"):
        start = r
        for i in range(N):
            for t in range(T):
                rows.append(r); cols.append(pidx[i, t]); vals.append(1.0)
                r += 1
        row_slices[fam] = slice(start, r)

    for fam, sign in (("ramp_up", 1.0), ("ramp_dn", -1.0)):
        start = r
        svar = var_slices.get("s_" + fam[5:])
        for i in range(N):
            for t in range(T - 1):
                rows += [r, r]
                cols += [pidx[i, t + 1], pidx[i, t]]
                vals += [sign, -sign]
                if slack:
                    rows.append(r); cols.append(svar.start + i * (T - 1) + t); vals.append(-1.0)
                r += 1
        row_slices[fam] = slice(start, r)

    A = sp.csc_matrix((vals, (rows, cols)), shape=(r, n))
    l, u = bounds(inst, y)
    return DispatchProblem(qp.QpProblem(P, q, A, l, u), (N, T), slack, var_slices, row_slices)


def dispatch_cost(inst: UcInstance, y, p) -> float:
    """Full UC cost: sum of ``a*y + b*p + c*p**2`` over units and periods."""
    y = _check_schedule(inst, y)
    p = _check_schedule(inst, p)
    return float(np.sum(inst.a[:, None] * y + inst.b[:, None] * p + inst.c[:, None] * p * p))


def generation_cost(inst: UcInstance, p) -> float:
    p = _check_schedule(inst, p)
    return float(np.sum(inst.b[:, None] * p + inst.c[:, None] * p * p))


class DispatchContext:
    """Solver context reusing one factorization across schedules.

    Successive :meth:`solve` calls warm-start from the previous solution
    unless ``warm=False`` is passed.
    """

    def __init__(self, inst: UcInstance, rho_bal: float = 1e4, rho_ramp: float = 1e3,
                 slack: bool = True, settings: qp.QpSettings | None = None):
        self.inst = inst
        self.rho_bal = rho_bal
        self.rho_ramp = rho_ramp
        self.slack = slack
        self.problem = assemble(inst, np.ones(inst.shape), rho_bal, rho_ramp, slack)
        self.solver = qp.AdmmSolver(self.problem.qp, settings)
        self.last = None

    def solve(self, y, warm=True) -> DispatchSolution:
        l, u = bounds(self.inst, y)
        self.solver.update(l=l, u=u)
        start = self.last if (warm and self.last is not None) else None
        res = self.solver.solve(start)
        if res.solved:
            self.last = res
        return self._unpack(res)

    def _unpack(self, res):
        N, T = self.inst.shape
        vs, rs = self.problem.var_slices, self.problem.row_slices
        p = res.x[vs["p"]].reshape(N, T)
        if self.slack:
            s_bal = res.x[vs["s_bal"]].copy()
            s_up = res.x[vs["s_up"]].reshape(N, T - 1)
            s_dn = res.x[vs["s_dn"]].reshape(N, T - 1)
        else:
            s_bal = np.zeros(T)
            s_up = np.zeros((N, T - 1))
            s_dn = np.zeros((N, T - 1))
        duals = {
            "balance": res.y[rs["balance"]].copy(),
            "cap_lo": res.y[rs["cap_lo"]].reshape(N, T),
            "cap_hi": res.y[rs["cap_hi"]].reshape(N, T),
            "ramp_up": res.y[rs["ramp_up"]].reshape(N, T - 1),
            "ramp_dn": res.y[rs["ramp_dn"]].reshape(N, T - 1),
        }
        return DispatchSolution(
            p=p, s_bal=s_bal, s_up=s_up, s_dn=s_dn, duals=duals,
            value=res.objective, dispatch_cost=generation_cost(self.inst, p),
            status=res.status, qp_solution=res,
        )


def solve_dispatch(inst: UcInstance, y, rho_bal: float = 1e4, rho_ramp: float = 1e3,
                   warm: DispatchSolution | None = None, slack: bool = True,
                   settings: qp.QpSettings | None = None) -> DispatchSolution:
    ctx = DispatchContext(inst, rho_bal, rho_ramp, slack, settings)
    if warm is not None:
        ctx.last = warm.qp_solution
    return ctx.solve(y, warm=warm is not None)


def grad_value_wrt_commitments(inst: UcInstance, sol: DispatchSolution) -> np.ndarray:
    """Envelope gradient of the optimal dispatch value w.r.t. the schedule.

    Only row bounds depend on the schedule, so each row contributes
    ``-dual * d(bound)/d(y)``.
    """
    if not sol.solved:
        raise DispatchError(f"dispatch not solved (status={sol.status})")
    d = sol.duals
    pmin = inst.p_min[:, None]
    pmax = inst.p_max[:, None]
    g = -(d["cap_lo"] * pmin + d["cap_hi"] * pmax)
    up, dn = d["ramp_up"], d["ramp_dn"]
    # ramp-up bound: r_up*y_t + pmin*(y_{t+1} - y_t) + pmax*(1 - y_{t+1})
    g[:, :-1] -= up * (inst.r_up[:, None] - pmin)
    g[:, 1:] -= up * (pmin - pmax)
    # ramp-down bound: r_dn*y_{t+1} + pmin*(y_t - y_{t+1}) + pmax*(1 - y_t)
    g[:, :-1] -= dn * (pmin - pmax)
    g[:, 1:] -= dn * (inst.r_dn[:, None] - pmin)
    return g
