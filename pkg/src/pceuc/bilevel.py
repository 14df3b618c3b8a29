"""Upper-level objective, bilevel gradient, Adam training loop and thresholding.

The upper level sees a soft schedule decoded from circuit correlators; the
lower level is the slackened dispatch QP. Gradients combine the dispatch
duals (envelope theorem) with parameter-shift derivatives of the
correlators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from . import circuit, pce
from .dispatch import (
    DispatchContext,
    DispatchSolution,
    dispatch_cost,
    generation_cost,
    grad_value_wrt_commitments,
)
from .instances import UcInstance
from .qp import SOLVED
from .reference import check_feasibility, violation_percentage


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``alpha=None`` means ``n_qubits ** 2``.
    """

    ansatz: str = "brickwork"
    layers: int = 6
    steps: int = 200
    k: int = 2
    alpha: float | None = None
    rho_bal: float = 1e4
    rho_ramp: float = 1e3
    lambda_res: float = 100.0
    lr: float = 0.05
    subset: int = 16
    seed: int = 0
    thresholds: tuple = pce.DEFAULT_THRESHOLDS
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shots: int | None = None

    def __post_init__(self):
        if self.ansatz not in circuit.ANSATZ_BUILDERS:
            raise ValueError(f"unknown ansatz {self.ansatz!r}")
        if self.layers < 1 or self.steps < 1 or self.subset < 1 or self.k < 1:
            raise ValueError("layers, steps, subset and k must be >= 1")
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (self.rho_bal > 0 and self.rho_ramp > 0 and self.lambda_res > 0):
            raise ValueError("penalty weights must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("bad Adam constants")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")
        ths = tuple(float(t) for t in self.thresholds)
        if not ths or any(not 0 < t < 1 for t in ths):
            raise ValueError("thresholds must be a non-empty set of values in (0, 1)")
        object.__setattr__(self, "thresholds", ths)

    def with_(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# objective pieces

def reserve_penalty(inst: UcInstance, soft):
    """Smooth spinning-reserve shortfall ``sum_t softplus(-h_t)**2``.

    ``h_t = sum_i p_max_i * soft[i, t] - (L_t + S_t)``. Returns the value and
    its gradient with respect to ``soft``.
    """
    soft = np.asarray(soft, dtype=float)
    if soft.shape != inst.shape:
        raise ValueError(f"schedule has shape {soft.shape}, expected {inst.shape}")
    h = inst.p_max @ soft - (inst.load + inst.reserve)
    sp = np.logaddexp(0.0, -h)
    value = float(np.sum(sp * sp))
    dh = 2.0 * sp * expit(-h)  # d value / d(-h)
    grad = -np.outer(inst.p_max, dh)
    return value, grad


def upper_objective(inst: UcInstance, soft, dispatch: DispatchSolution, lambda_res: float) -> float:
    """Soft commitment cost plus dispatch generation cost plus reserve penalty."""
    soft = np.asarray(soft, dtype=float)
    fixed = float(np.sum(inst.a[:, None] * soft))
    res, _ = reserve_penalty(inst, soft)
    return fixed + generation_cost(inst, dispatch.p) + lambda_res * res


def _schedule_grad(inst, soft, dispatch, lambda_res):
    """d(objective)/d(soft) with the envelope gradient of the full lower value."""
    env = grad_value_wrt_commitments(inst, dispatch)
    _, g_res = reserve_penalty(inst, soft)
    return inst.a[:, None] + env + lambda_res * g_res


@dataclass
class Evaluation:
    correlators: np.ndarray
    soft: np.ndarray
    dispatch: DispatchSolution
    objective: float
    f_part: float
    reserve: float


class BilevelProblem:
    """Circuit, correlator map and dispatch context for one instance."""

    def __init__(self, inst: UcInstance, cfg: TrainConfig):
        self.inst = inst
        self.cfg = cfg
        self.cmap = pce.correlator_map_for(inst.n_units, inst.n_periods, cfg.k)
        self.ansatz = circuit.build_ansatz(cfg.ansatz, self.cmap.n_qubits, cfg.layers)
        self.alpha = float(cfg.alpha) if cfg.alpha is not None else float(self.cmap.n_qubits ** 2)
        self.ctx = DispatchContext(inst, cfg.rho_bal, cfg.rho_ramp, slack=True)

    @property
    def n_params(self):
        return self.ansatz.n_params

    def correlators(self, theta, rng=None):
        state = circuit.simulate(self.ansatz, theta)
        return circuit.correlators(state, self.cmap.strings, self.cfg.shots, rng)

    def evaluate(self, theta, rng=None, warm=True) -> Evaluation:
        e = self.correlators(theta, rng)
        soft = self.cmap.to_matrix(pce.decode_soft(e, self.alpha))
        sol = self.ctx.solve(soft, warm=warm)
        res, _ = reserve_penalty(self.inst, soft)
        f_part = float(np.sum(self.inst.a[:, None] * soft)) + generation_cost(self.inst, sol.p)
        return Evaluation(e, soft, sol, f_part + self.cfg.lambda_res * res, f_part, res)

    def gradient(self, theta, subset, ev: Evaluation, rng=None, strict=True):
        """Objective gradient restricted to the parameters in ``subset``."""
        if strict or ev.dispatch.solved:
            dsoft = _schedule_grad(self.inst, ev.soft, ev.dispatch, self.cfg.lambda_res)
        else:
            # unconverged dispatch: use its current duals as an estimate
            dsoft = _schedule_grad(self.inst, ev.soft, replace(ev.dispatch, status=SOLVED),
                                   self.cfg.lambda_res)
        w = self.cmap.to_vector(dsoft) * pce.decode_grad(ev.correlators, self.alpha)
        jac = _shift_jacobian(self, theta, subset, rng)
        return w @ jac


def _shift_jacobian(prob, theta, subset, rng):
    if prob.cfg.shots is None:
        return circuit.param_shift_grad(prob.ansatz, theta, prob.cmap.strings, subset)
    jac = np.empty((prob.cmap.n_vars, len(subset)))
    for col, m in enumerate(subset):
        th = np.array(theta, dtype=float)
        th[m] += math.pi / 2
        plus = prob.correlators(th, rng)
        th[m] -= math.pi
        minus = prob.correlators(th, rng)
        jac[:, col] = 0.5 * (plus - minus)
    return jac


def upper_gradient(inst: UcInstance, ansatz: circuit.Ansatz, theta, cfg: TrainConfig, subset=None):
    """Bilevel gradient of the upper objective over ``subset`` (all if None).

    Raises :class:`~pceuc.dispatch.DispatchError` if the dispatch QP does
    not converge.
    """
    prob = BilevelProblem(inst, cfg)
    if ansatz.n_qubits != prob.cmap.n_qubits:
        raise ValueError(f"ansatz has {ansatz.n_qubits} qubits, instance needs {prob.cmap.n_qubits}")
    prob.ansatz = ansatz
    if subset is None:
        subset = range(ansatz.n_params)
    subset = list(subset)
    ev = prob.evaluate(theta, warm=False)
    return prob.gradient(theta, subset, ev)


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam with lazy per-coordinate updates.

    Only coordinates passed to :meth:`step` have their moments and bias
    counters advanced; the rest stay untouched.
    """

    def __init__(self, n: int, lr=0.05, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = np.zeros(n, dtype=np.int64)

    def step(self, theta, grad, idx=None):
        theta = np.array(theta, dtype=float)
        grad = np.asarray(grad, dtype=float)
        idx = np.arange(theta.size) if idx is None else np.asarray(idx, dtype=int)
        if grad.shape != idx.shape:
            raise ValueError("gradient and index set differ in length")
        self.t[idx] += 1
        self.m[idx] = self.beta1 * self.m[idx] + (1 - self.beta1) * grad
        self.v[idx] = self.beta2 * self.v[idx] + (1 - self.beta2) * grad * grad
        mhat = self.m[idx] / (1 - self.beta1 ** self.t[idx])
        vhat = self.v[idx] / (1 - self.beta2 ** self.t[idx])
        theta[idx] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return theta


# ---------------------------------------------------------------------------
# post-processing

@dataclass
class PostResult:
    y: np.ndarray
    p: np.ndarray
    cost: float
    feasible: bool
    tau: float
    violation_pct: float
    n_violated: int


def _structurally_infeasible(inst, y):
    cap = inst.p_max @ y
    return bool(np.any(cap < inst.load + inst.reserve) or np.any(inst.p_min @ y > inst.load))


def postprocess(inst: UcInstance, soft, thresholds=pce.DEFAULT_THRESHOLDS,
                rho_bal: float = 1e4, rho_ramp: float = 1e3, tol: float = 1e-6) -> PostResult:
    """Harden ``soft`` at every threshold and keep the cheapest feasible result.

    Each candidate is dispatched without slacks and passed through the
    strict checker. If no threshold is feasible, the candidate with the
    fewest violated rows (under its slackened dispatch) is reported with
    ``feasible=False``. Ties go to lower cost, then smaller threshold.
    """
    soft = np.asarray(soft, dtype=float)
    if soft.shape != inst.shape:
        raise ValueError(f"schedule has shape {soft.shape}, expected {inst.shape}")
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("need at least one threshold")
    exact = DispatchContext(inst, rho_bal, rho_ramp, slack=False)
    relaxed = DispatchContext(inst, rho_bal, rho_ramp, slack=True)
    seen = {}
    best = None
    fallback = None
    for tau in thresholds:
        y = pce.harden(soft, tau)
        key = y.tobytes()
        if key in seen:
            continue
        seen[key] = tau
        if not _structurally_infeasible(inst, y):
            sol = exact.solve(y, warm=False)
            if sol.solved and check_feasibility(inst, y, sol.p, tol).passed:
                cost = dispatch_cost(inst, y, sol.p)
                if best is None or cost < best.cost:
                    best = PostResult(y, sol.p.copy(), cost, True, tau, 0.0, 0)
                continue
        if best is not None:
            continue
        sol = relaxed.solve(y, warm=False)
        rep = check_feasibility(inst, y, sol.p, tol)
        cost = dispatch_cost(inst, y, sol.p)
        cand = PostResult(y, sol.p.copy(), cost, False, tau, violation_percentage(rep), rep.n_violated)
        if fallback is None or (cand.n_violated, cand.cost) < (fallback.n_violated, fallback.cost):
            fallback = cand
    return best if best is not None else fallback


# ---------------------------------------------------------------------------
# training

@dataclass
class StepRecord:
    step: int
    objective: float
    f_part: float
    reserve: float
    dispatch_value: float
    status: str
    qp_iterations: int


@dataclass
class TrainState:
    theta: np.ndarray
    optimizer: Adam
    step: int = 0
    history: list = field(default_factory=list)


@dataclass
class Checkpoint:
    step: int
    feasible: bool
    cost: float
    violation_pct: float


@dataclass
class TrainResult:
    theta: np.ndarray
    soft: np.ndarray
    y: np.ndarray
    p: np.ndarray
    feasible: bool
    cost: float
    tau: float
    violation_pct: float
    history: list
    checkpoints: list
    seed: int
    n_qubits: int


def _better(new: PostResult, old: PostResult | None):
    if old is None:
        return True
    if new.feasible != old.feasible:
        return new.feasible
    if new.feasible:
        return new.cost < old.cost
    return (new.n_violated, new.cost) < (old.n_violated, old.cost)


def train(inst: UcInstance, cfg: TrainConfig, checkpoints=None, callback=None) -> TrainResult:
    """Run the bilevel training loop and post-process the final schedule.

    ``checkpoints`` lists step counts at which the current soft schedule is
    also post-processed; each entry records the best result found at or
    before that step. The returned result always describes the final
    schedule.
    """
    prob = BilevelProblem(inst, cfg)
    rng = np.random.default_rng(cfg.seed)
    theta = rng.uniform(-math.pi, math.pi, prob.n_params)
    state = TrainState(theta, Adam(prob.n_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps))
    marks = sorted({int(c) for c in (checkpoints or ()) if 1 <= int(c) <= cfg.steps})
    size = min(prob.n_params, cfg.subset)
    cps = []
    best_seen = None
    for step in range(1, cfg.steps + 1):
        ev = prob.evaluate(state.theta, rng)
        sol = ev.dispatch
        state.history.append(StepRecord(
            step, ev.objective, ev.f_part, ev.reserve, sol.value, sol.status,
            sol.qp_solution.iterations,
        ))
        subset = np.sort(rng.choice(prob.n_params, size=size, replace=False))
        grad = prob.gradient(state.theta, subset, ev, rng, strict=False)
        state.theta = state.optimizer.step(state.theta, grad, subset)
        state.step = step
        if callback is not None:
            callback(state)
        if step in marks or step == cfg.steps:
            soft = prob.cmap.to_matrix(pce.decode_soft(prob.correlators(state.theta, rng), prob.alpha))
            post = postprocess(inst, soft, cfg.thresholds, cfg.rho_bal, cfg.rho_ramp)
            if step in marks:
                if _better(post, best_seen):
                    best_seen = post
                cps.append(Checkpoint(step, best_seen.feasible, best_seen.cost, best_seen.violation_pct))

    return TrainResult(
        theta=state.theta, soft=soft, y=post.y, p=post.p, feasible=post.feasible,
        cost=post.cost, tau=post.tau, violation_pct=post.violation_pct,
        history=state.history, checkpoints=cps, seed=cfg.seed, n_qubits=prob.cmap.n_qubits,
    )
