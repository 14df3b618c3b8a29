"""Operator-splitting (ADMM) solver for convex QPs.

Solves::

    minimize    0.5 x'Px + q'x
    subject to  l <= Ax <= u

Dual convention: at the optimum ``Px + q + A'y = 0``; ``y_j >= 0`` when the
upper bound of row ``j`` is active and ``y_j <= 0`` when the lower bound is.
Consequently the optimal value moves by ``-y_j`` per unit increase of the
active bound of row ``j``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

SOLVED = "solved"
MAX_ITER = "max_iter"
INFEASIBLE = "infeasible"


class QpError(ValueError):
    pass


@dataclass
class QpSettings:
    rho: float = 0.1
    eq_rho_scale: float = 1e3
    sigma: float = 1e-6
    alpha: float = 1.6
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    eps_pinf: float = 1e-4
    max_iter: int = 4000
    polish: bool = True
    polish_first: int = 25
    polish_delta: float = 1e-9
    polish_refine: int = 5
    polish_passes: int = 30
    check_every: int = 5
    scaling_iters: int = 10
    adaptive_rho: bool = True
    adaptive_rho_every: int = 25


@dataclass
class QpProblem:
    P: sp.csc_matrix
    q: np.ndarray
    A: sp.csc_matrix
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.l = np.asarray(self.l, dtype=float).reshape(-1)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        n, m = self.n, self.m
        if self.P.shape != (n, n):
            raise QpError(f"P has shape {self.P.shape}, expected ({n}, {n})")
        if self.A.shape[1] != n:
            raise QpError(f"A has {self.A.shape[1]} columns, expected {n}")
        if self.l.shape != (m,) or self.u.shape != (m,):
            raise QpError(f"bounds must have length {m}")
        if np.any(self.l > self.u):
            raise QpError("lower bound exceeds upper bound")
        if np.any(self.P.diagonal() < 0):
            raise QpError("P has a negative diagonal entry")
        if abs(self.P - self.P.T).max() > 1e-12 * max(1.0, abs(self.P).max()):
            raise QpError("P is not symmetric")
        self.At = self.A.T.tocsr()

    @property
    def n(self):
        return self.q.shape[0]

    @property
    def m(self):
        return self.A.shape[0]

    def objective(self, x):
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: str
    iterations: int
    objective: float
    z: np.ndarray = field(default=None, repr=False)
    polished: bool = False

    @property
    def solved(self):
        return self.status == SOLVED


def _tolerances(prob, x, z, y, s):
    Ax = prob.A @ x
    Px = prob.P @ x
    Aty = prob.At @ y
    prim_scale = max(_inf(Ax), _inf(z))
    dual_scale = max(_inf(Px), _inf(Aty), _inf(prob.q))
    return s.eps_abs + s.eps_rel * prim_scale, s.eps_abs + s.eps_rel * dual_scale


def _inf(v):
    return float(np.max(np.abs(v))) if v.size else 0.0


def kkt_residuals(prob: QpProblem, sol) -> tuple:
    """(primal, dual, complementarity) residuals of a candidate solution.

    Primal: largest distance of ``Ax`` outside ``[l, u]``. Dual: infinity norm
    of ``Px + q + A'y``. Complementarity: ``max_j min(|y_j|, gap_j)`` where
    ``gap_j`` is the distance of ``A_j x`` to the bound selected by the sign
    of ``y_j``.
    """
    x, y = sol.x, sol.y
    Ax = prob.A @ x
    prim = _inf(Ax - np.clip(Ax, prob.l, prob.u))
    dual = _inf(prob.P @ x + prob.q + prob.At @ y)
    with np.errstate(invalid="ignore"):
        gap = np.where(y > 0, np.abs(prob.u - Ax), np.where(y < 0, np.abs(Ax - prob.l), 0.0))
    comp = np.minimum(np.abs(y), gap)
    return prim, dual, _inf(comp)


def within_tolerance(prob: QpProblem, sol, settings=None) -> bool:
    s = settings or QpSettings()
    prim, dual, _ = kkt_residuals(prob, sol)
    z = np.clip(prob.A @ sol.x, prob.l, prob.u)
    eps_p, eps_d = _tolerances(prob, sol.x, z, sol.y, s)
    return prim <= eps_p and dual <= eps_d


class AdmmSolver:
    """Reusable solver context for a fixed sparsity pattern.

    ``P`` and ``A`` are equilibrated once (Ruiz scaling plus a cost scale).
    The KKT matrix is factorized once and refactored only when the step
    size vector changes: either the equality-row pattern of the bounds
    changes or the adaptive step-size rule fires.
    """

    def __init__(self, problem: QpProblem, settings: QpSettings | None = None):
        self.problem = problem
        self.settings = settings or QpSettings()
        self._factor = None
        self._eq = None
        self._rho_base = self.settings.rho
        self._dup_groups = self._duplicate_rows(problem.A)
        self._equilibrate()
        self._scale_vectors()
        self._refactor_if_needed()

    # -- setup -------------------------------------------------------------

    @staticmethod
    def _duplicate_rows(A):
        A = sp.csr_matrix(A)
        A.sort_indices()
        buckets = {}
        for j in range(A.shape[0]):
            lo, hi = A.indptr[j], A.indptr[j + 1]
            key = (tuple(A.indices[lo:hi]), tuple(A.data[lo:hi]))
            buckets.setdefault(key, []).append(j)
        rep = np.arange(A.shape[0])
        for rows in buckets.values():
            rep[rows] = rows[0]
        return rep

    def _equilibrate(self):
        p, s = self.problem, self.settings
        n, m = p.n, p.m
        P = sp.csc_matrix(p.P)
        A = sp.csc_matrix(p.A)
        D = np.ones(n)
        E = np.ones(m)
        c = 1.0

        def colmax(M, axis):
            if M.shape[0] == 0 or M.shape[1] == 0:
                return np.zeros(M.shape[1 - axis])
            return np.asarray(abs(M).max(axis=axis).todense()).ravel()

        for _ in range(s.scaling_iters):
            cols = np.maximum(colmax(P, 0), colmax(A, 0))
            rows = colmax(A, 1)
            d = 1.0 / np.sqrt(np.clip(cols, 1e-4, 1e4))
            e = 1.0 / np.sqrt(np.clip(rows, 1e-4, 1e4))
            d[cols == 0] = 1.0
            e[rows == 0] = 1.0
            P = sp.diags(d) @ P @ sp.diags(d)
            A = sp.diags(e) @ A @ sp.diags(d)
            D *= d
            E *= e
        if s.scaling_iters:
            q_bar = D * p.q
            mean_col = float(np.mean(colmax(P, 0))) if n else 0.0
            gamma = 1.0 / np.clip(max(mean_col, _inf(q_bar)), 1e-4, 1e4)
            P = gamma * P
            c = gamma
        self._D, self._E, self._c = D, E, c
        self._Pbar = sp.csc_matrix(P)
        self._Abar = sp.csc_matrix(A)
        self._Abar_T = self._Abar.T.tocsr()

    def _scale_vectors(self):
        p = self.problem
        self._qbar = self._c * self._D * p.q
        self._lbar = self._E * p.l
        self._ubar = self._E * p.u

    def _refactor_if_needed(self, force=False):
        p, s = self.problem, self.settings
        with np.errstate(invalid="ignore"):
            eq = np.isfinite(p.l) & (np.abs(p.u - p.l) <= 1e-9 * np.maximum(1.0, np.abs(p.l)))
        if not force and self._eq is not None and np.array_equal(eq, self._eq):
            return
        self._eq = eq
        rho = np.full(p.m, self._rho_base)
        rho[eq] *= s.eq_rho_scale
        # free rows carry no information; keep them loosely coupled
        rho[np.isinf(p.l) & np.isinf(p.u)] = 1e-6
        self._rho = rho
        kkt = sp.bmat(
            [
                [self._Pbar + s.sigma * sp.eye(p.n), self._Abar.T],
                [self._Abar, -sp.diags(1.0 / rho)],
            ],
            format="csc",
        )
        self._factor = spla.splu(kkt)
        logger.debug("factorized KKT system of size %d (rho=%g)", kkt.shape[0], self._rho_base)

    def update(self, q=None, l=None, u=None):
        p = self.problem
        if q is not None:
            p.q = np.asarray(q, dtype=float).reshape(-1)
        if l is not None:
            p.l = np.asarray(l, dtype=float).reshape(-1)
        if u is not None:
            p.u = np.asarray(u, dtype=float).reshape(-1)
        if np.any(p.l > p.u):
            raise QpError("lower bound exceeds upper bound")
        self._scale_vectors()
        self._refactor_if_needed()

    def _unscale(self, xb, zb, yb):
        return self._D * xb, zb / self._E, self._E * yb / self._c

    # -- polishing ---------------------------------------------------------

    def _polish(self, x, z, y):
        """Refine the ADMM iterate by solving KKT systems on a guessed active set.

        The active set starts from the ADMM iterate and is corrected a few
        times: rows with wrong-signed multipliers leave, violated rows join.
        """
        p, s = self.problem, self.settings
        l, u = p.l, p.u
        lower = ((z - l < -y) | self._eq) & np.isfinite(l)
        upper = ((u - z < y) & ~self._eq) & np.isfinite(u)
        # identical rows guessed active at two different bounds: keep the
        # side the summed multiplier points to
        groups = {}
        for j in np.flatnonzero(lower | upper):
            groups.setdefault(self._dup_groups[j], []).append(j)
        for members in groups.values():
            lo = [j for j in members if lower[j]]
            up = [j for j in members if upper[j]]
            if lo and up and max(l[lo]) != min(u[up]):
                if y[members].sum() > 0:
                    lower[lo] = False
                else:
                    upper[up] = False
        for _ in range(s.polish_passes):
            res = self._polish_once(lower, upper)
            if res is None:
                return None
            xp, yp, bad_lo, bad_up = res
            Ax = p.A @ xp
            zp = np.clip(Ax, l, u)
            eps_p, eps_d = _tolerances(p, xp, zp, yp, s)
            if bad_lo.any() or bad_up.any():
                lower &= ~bad_lo
                upper &= ~bad_up
                continue
            with np.errstate(invalid="ignore"):
                excess = np.maximum(np.where(lower, 0.0, l - Ax), np.where(upper, 0.0, Ax - u))
            j = int(np.argmax(excess))
            if excess[j] > eps_p:
                # one row at a time avoids cycling between active sets
                if l[j] - Ax[j] > 0:
                    lower[j] = True
                else:
                    upper[j] = True
                continue
            cand = QpSolution(xp, yp, SOLVED, 0, p.objective(xp), z=zp, polished=True)
            prim, dual, _ = kkt_residuals(p, cand)
            if prim <= eps_p and dual <= eps_d:
                return cand
            return None
        return None

    def _polish_once(self, lower, upper):
        p, s = self.problem, self.settings
        l, u = p.l, p.u
        # identical rows are merged into one constraint
        groups = {}
        for j in np.flatnonzero(lower | upper):
            groups.setdefault(self._dup_groups[j], []).append(j)
        rows, rhs, owners = [], [], []
        for rep, members in groups.items():
            lo_rows = [j for j in members if lower[j]]
            up_rows = [j for j in members if upper[j]]
            lo_row = max(lo_rows, key=lambda j: l[j]) if lo_rows else None
            up_row = min(up_rows, key=lambda j: u[j]) if up_rows else None
            if lo_row is not None and up_row is not None:
                if abs(l[lo_row] - u[up_row]) > 1e-9 * max(1.0, abs(l[lo_row])):
                    return None
                value = l[lo_row]
            else:
                value = l[lo_row] if lo_row is not None else u[up_row]
            rows.append(rep)
            rhs.append(value)
            owners.append((lo_row, up_row))
        n = p.n
        k = len(rows)
        d = s.polish_delta
        if k:
            Ared = p.A[rows, :]
            K = sp.bmat([[p.P, Ared.T], [Ared, None]], format="csc")
        else:
            K = sp.csc_matrix(p.P)
        reg = sp.diags(np.concatenate([np.full(n, d), np.full(k, -d)]))
        try:
            lu = spla.splu(sp.csc_matrix(K + reg))
        except RuntimeError:
            return None
        b = np.concatenate([-p.q, np.asarray(rhs, dtype=float)])
        sol = lu.solve(b)
        for _ in range(s.polish_refine):
            sol = sol + lu.solve(b - K @ sol)
        if not np.all(np.isfinite(sol)):
            return None
        xp = sol[:n]
        yp = np.zeros(p.m)
        bad_lo = np.zeros(p.m, dtype=bool)
        bad_up = np.zeros(p.m, dtype=bool)
        for val, (lo_row, up_row) in zip(sol[n:], owners):
            if val > 0:
                if up_row is not None:
                    yp[up_row] = val
                elif val > s.eps_abs:
                    bad_lo[lo_row] = True
            elif val < 0:
                if lo_row is not None:
                    yp[lo_row] = val
                elif -val > s.eps_abs:
                    bad_up[up_row] = True
        return xp, yp, bad_lo, bad_up

    # -- main loop ---------------------------------------------------------

    def solve(self, warm: QpSolution | None = None) -> QpSolution:
        p, s = self.problem, self.settings
        n, m = p.n, p.m
        if warm is not None:
            x = np.asarray(warm.x, dtype=float).copy()
            y = np.asarray(warm.y, dtype=float).copy()
            if x.shape != (n,) or y.shape != (m,):
                raise QpError("warm start has wrong dimensions")
            z = np.clip(p.A @ x, p.l, p.u)
            # a warm start may already be optimal
            cand = QpSolution(x, y, SOLVED, 0, p.objective(x), z=z)
            prim, dual, _ = kkt_residuals(p, cand)
            eps_p, eps_d = _tolerances(p, x, z, y, s)
            if prim <= eps_p and dual <= eps_d:
                return cand
            xb = x / self._D
            yb = self._c * y / self._E
            zb = self._E * z
        else:
            xb = np.zeros(n)
            yb = np.zeros(m)
            zb = np.clip(np.zeros(m), self._lbar, self._ubar)

        P, A, q = self._Pbar, self._Abar, self._qbar
        lb, ub = self._lbar, self._ubar
        rhs = np.empty(n + m)
        y_prev = yb.copy()
        status = MAX_ITER
        it = 0
        next_polish = s.polish_first
        for it in range(1, s.max_iter + 1):
            rho = self._rho
            rhs[:n] = s.sigma * xb - q
            rhs[n:] = zb - yb / rho
            sol = self._factor.solve(rhs)
            z_t = zb + (sol[n:] - yb) / rho
            xb = s.alpha * sol[:n] + (1 - s.alpha) * xb
            z_relax = s.alpha * z_t + (1 - s.alpha) * zb
            z_new = np.clip(z_relax + yb / rho, lb, ub)
            y_prev = yb
            yb = yb + rho * (z_relax - z_new)
            zb = z_new

            if it % s.check_every and it != s.max_iter:
                continue
            x, z, y = self._unscale(xb, zb, yb)
            r_prim = _inf(p.A @ x - z)
            r_dual = _inf(p.P @ x + p.q + p.At @ y)
            eps_p, eps_d = _tolerances(p, x, z, y, s)
            if r_prim <= eps_p and r_dual <= eps_d:
                status = SOLVED
                break
            if self._primal_infeasible(self._E * (yb - y_prev)):
                status = INFEASIBLE
                break
            if s.polish and it == next_polish:
                # failed attempts back off geometrically
                next_polish *= 2
                polished = self._polish(x, z, y)
                if polished is not None:
                    polished.iterations = it
                    return polished
            if s.adaptive_rho and it % s.adaptive_rho_every == 0:
                self._adapt_rho(xb, zb, yb)

        x, z, y = self._unscale(xb, zb, yb)
        if status != INFEASIBLE and s.polish:
            polished = self._polish(x, z, y)
            if polished is not None:
                polished.iterations = it
                return polished
        if status == MAX_ITER:
            logger.debug("ADMM hit the iteration cap (%d)", s.max_iter)
        return QpSolution(x, y, status, it, p.objective(x), z=z)

    def _adapt_rho(self, xb, zb, yb):
        P, A, q = self._Pbar, self._Abar, self._qbar
        Ax = A @ xb
        Px = P @ xb
        Aty = self._Abar_T @ yb
        prim = _inf(Ax - zb) / max(_inf(Ax), _inf(zb), 1e-10)
        dual = _inf(Px + q + Aty) / max(_inf(Px), _inf(Aty), _inf(q), 1e-10)
        if dual == 0 or prim == 0:
            return
        new = float(np.clip(self._rho_base * np.sqrt(prim / dual), 1e-6, 1e6))
        if new > 5 * self._rho_base or new < self._rho_base / 5:
            self._rho_base = new
            self._refactor_if_needed(force=True)

    def _primal_infeasible(self, dy):
        p, s = self.problem, self.settings
        dy = dy.copy()
        dy[np.isinf(p.u)] = np.minimum(dy[np.isinf(p.u)], 0.0)
        dy[np.isinf(p.l)] = np.maximum(dy[np.isinf(p.l)], 0.0)
        norm = _inf(dy)
        if norm < 1e-12:
            return False
        if _inf(p.At @ dy) > s.eps_pinf * norm:
            return False
        u = np.where(np.isinf(p.u), 0.0, p.u)
        l = np.where(np.isinf(p.l), 0.0, p.l)
        support = u @ np.maximum(dy, 0) + l @ np.minimum(dy, 0)
        return support < -s.eps_pinf * norm


def solve(problem: QpProblem, warm: QpSolution | None = None,
          settings: QpSettings | None = None) -> QpSolution:
    """One-shot solve; see :class:`AdmmSolver` for repeated solves."""
    return AdmmSolver(problem, settings).solve(warm)
