import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import small_instance, uc4b_campaign, uc4b_reference
from pceuc.bilevel import (
    Adam,
    BilevelProblem,
    TrainConfig,
    _schedule_grad,
    postprocess,
    reserve_penalty,
    train,
    upper_gradient,
    upper_objective,
)
from pceuc.circuit import build_ansatz
from pceuc.dispatch import dispatch_cost, generation_cost, solve_dispatch
from pceuc.instances import GeneratorUnit, UcInstance, builtin
from pceuc.reference import check_feasibility


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda_res=0)
    with pytest.raises(ValueError):
        TrainConfig(rho_bal=-1)
    with pytest.raises(ValueError):
        TrainConfig(steps=0)
    with pytest.raises(ValueError):
        TrainConfig(subset=0)
    with pytest.raises(ValueError):
        TrainConfig(thresholds=(0.5, 1.0))
    with pytest.raises(ValueError):
        TrainConfig(ansatz="qaoa")
    assert TrainConfig().with_(layers=3).layers == 3


def test_reserve_penalty_examples(uc4b):
    val, grad = reserve_penalty(uc4b, np.ones((4, 3)))
    assert val < 1e-40 and np.max(np.abs(grad)) < 1e-40
    # one period with zero headroom
    inst = UcInstance("h", [GeneratorUnit(0, 1, 0, 0, 100, 50, 50)], [90.0], [10.0])
    val, _ = reserve_penalty(inst, [[1.0]])
    assert abs(val - math.log(2) ** 2) < 1e-15


def tiny_units(rng, n_units=3, n_periods=3):
    units = [GeneratorUnit(1, 1, 0, 0, float(rng.uniform(1, 4)), 1, 1) for _ in range(n_units)]
    return UcInstance("r", units, [float(rng.uniform(1, 4)) for _ in range(n_periods)],
                      [float(rng.uniform(0, 2)) for _ in range(n_periods)])


@given(st.integers(0, 10 ** 6))
def test_reserve_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    inst = tiny_units(rng)
    soft = rng.uniform(0, 1, inst.shape)
    _, grad = reserve_penalty(inst, soft)
    h = 1e-6
    for idx in np.ndindex(inst.shape):
        e = np.zeros(inst.shape)
        e[idx] = h
        fd = (reserve_penalty(inst, soft + e)[0] - reserve_penalty(inst, soft - e)[0]) / (2 * h)
        assert abs(fd - grad[idx]) <= 1e-8 * max(1.0, abs(grad[idx]))


def test_upper_objective_examples(uc4b):
    soft = np.full((4, 3), 0.7)
    sol = solve_dispatch(uc4b, soft)
    res, _ = reserve_penalty(uc4b, soft)
    J = upper_objective(uc4b, soft, sol, 100.0)
    base = float(np.sum(uc4b.a[:, None] * soft)) + generation_cost(uc4b, sol.p)
    assert abs(J - (base + 100.0 * res)) < 1e-9 * J

    zero = np.zeros((4, 3))
    sol0 = solve_dispatch(uc4b, zero)
    pen = float(np.sum(np.logaddexp(0, uc4b.load + uc4b.reserve) ** 2))
    J0 = upper_objective(uc4b, zero, sol0, 1.0)
    assert abs((J0 - pen) - generation_cost(uc4b, sol0.p)) < 1e-6
    assert abs(generation_cost(uc4b, sol0.p)) < 1e-4


def test_upper_objective_linear_in_fixed_cost(uc4b):
    y = np.ones((4, 3))
    sol = solve_dispatch(uc4b, y)
    u = list(uc4b.units)
    u[2] = replace(u[2], a=u[2].a + 1)
    bumped = UcInstance("b", u, uc4b.loads, uc4b.reserves)
    diff = upper_objective(bumped, y, sol, 100.0) - upper_objective(uc4b, y, sol, 100.0)
    assert abs(diff - 3) < 1e-9


def test_schedule_grad_vanishes_without_sources():
    inst = UcInstance("z", [GeneratorUnit(0, 1, 0, 0, 100, 50, 50)] * 2, [50.0, 50.0], [0.0, 0.0])
    soft = np.ones((2, 2))
    sol = solve_dispatch(inst, soft)
    zero_duals = replace(sol, duals={k: np.zeros_like(v) for k, v in sol.duals.items()})
    assert np.array_equal(_schedule_grad(inst, soft, zero_duals, 0.0), np.zeros((2, 2)))


def toy_instance(rng):
    """2-unit, 2-period instance with light load so the dispatch rarely needs slack."""
    units = [GeneratorUnit(float(rng.uniform(50, 500)), float(rng.uniform(10, 25)),
                           float(rng.uniform(0.001, 0.02)), 0.0, float(rng.uniform(80, 120)),
                           150.0, 150.0) for _ in range(2)]
    loads = [float(rng.uniform(5, 20)) for _ in range(2)]
    return UcInstance("toy", units, loads, [float(rng.uniform(0, 10)) for _ in range(2)])


def toy_problem(seed, layers=2):
    inst = toy_instance(np.random.default_rng(seed))
    cfg = TrainConfig(k=1, layers=layers, seed=seed)
    return inst, cfg, BilevelProblem(inst, cfg)


def test_toy_uses_two_qubits():
    _, _, prob = toy_problem(0)
    assert prob.cmap.n_qubits == 2 and prob.alpha == 4.0


def active(sol, tol=1e-7):
    return tuple(np.sign(np.where(np.abs(v) > tol, v, 0)).tobytes() for v in sol.duals.values())


def surrogate(prob, ev):
    """Upper objective with the full lower value (slack penalties included)."""
    a = float(np.sum(prob.inst.a[:, None] * ev.soft))
    return a + ev.dispatch.value + prob.cfg.lambda_res * ev.reserve


def probe_gradient(prob, theta, h, objective):
    """Central differences of ``objective``; also reports whether the active set held."""
    base = prob.evaluate(theta, warm=False)
    pattern = active(base.dispatch)
    fd = np.empty(prob.n_params)
    stable = True
    slack = base.dispatch.max_slack()
    for m in range(prob.n_params):
        tp, tm = theta.copy(), theta.copy()
        tp[m] += h
        tm[m] -= h
        ep, em = prob.evaluate(tp, warm=False), prob.evaluate(tm, warm=False)
        stable &= active(ep.dispatch) == pattern == active(em.dispatch)
        slack = max(slack, ep.dispatch.max_slack(), em.dispatch.max_slack())
        fd[m] = (objective(prob, ep) - objective(prob, em)) / (2 * h)
    return fd, stable, slack


@pytest.mark.parametrize("seed", range(5))
def test_end_to_end_gradient_matches_finite_differences(seed):
    # the gradient differentiates the full lower value; it coincides with the
    # derivative of the objective once the balance/ramp slacks are negligible
    inst, cfg, prob = toy_problem(seed)
    rng = np.random.default_rng(seed)
    for _ in range(200):
        theta = rng.uniform(-np.pi, np.pi, prob.n_params)
        fd, stable, slack = probe_gradient(prob, theta, 1e-4, lambda pr, ev: ev.objective)
        if stable and slack < 1e-2:
            break
    assert stable and slack < 1e-2
    g = upper_gradient(inst, prob.ansatz, theta, cfg)
    assert np.linalg.norm(g - fd) <= 5e-2 * np.linalg.norm(fd)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_is_exact_for_full_lower_value(seed):
    inst, cfg, prob = toy_problem(seed)
    rng = np.random.default_rng(100 + seed)
    for _ in range(200):
        theta = rng.uniform(-np.pi, np.pi, prob.n_params)
        fd, stable, _ = probe_gradient(prob, theta, 1e-4, surrogate)
        if stable:
            break
    assert stable
    g = upper_gradient(inst, prob.ansatz, theta, cfg)
    assert np.linalg.norm(g - fd) <= 1e-3 * np.linalg.norm(fd)


def test_gradient_partition_property():
    inst, cfg, prob = toy_problem(3, layers=3)
    theta = np.random.default_rng(0).uniform(-np.pi, np.pi, prob.n_params)
    full = upper_gradient(inst, prob.ansatz, theta, cfg)
    parts = [[0, 4, 5], [1, 2], [3, 6, 7]]
    for idx in parts:
        sub = upper_gradient(inst, prob.ansatz, theta, cfg, idx)
        assert np.allclose(sub, full[idx], rtol=1e-12, atol=1e-9)


def test_saturated_decode_kills_gradient():
    inst = small_instance(np.random.default_rng(7), 2, 2)
    # brickwork states are real, so Y correlators vanish; su2 reaches all axes
    cfg = TrainConfig(ansatz="su2", k=1, layers=2, alpha=1e4)
    prob = BilevelProblem(inst, cfg)
    rng = np.random.default_rng(1)
    for _ in range(1000):
        theta = rng.uniform(-np.pi, np.pi, prob.n_params)
        if np.min(np.abs(prob.correlators(theta))) > 0.01:
            break
    assert np.min(np.abs(prob.correlators(theta))) > 0.01
    g = upper_gradient(inst, prob.ansatz, theta, cfg)
    assert np.max(np.abs(g)) < 1e-10


def test_upper_gradient_rejects_wrong_width():
    inst, cfg, _ = toy_problem(0)
    with pytest.raises(ValueError):
        upper_gradient(inst, build_ansatz("brickwork", 3, 1), np.zeros(6), cfg)


def test_adam_zero_gradient_and_laziness():
    opt = Adam(4)
    theta = np.array([0.1, -0.2, 0.3, 0.4])
    assert np.array_equal(opt.step(theta, np.zeros(4)), theta)
    opt = Adam(4, lr=0.1)
    out = opt.step(theta, np.array([1.0, -1.0]), [0, 2])
    assert np.allclose(out, theta + np.array([-0.1, 0, 0.1, 0]))
    assert opt.t.tolist() == [1, 0, 1, 0]
    with pytest.raises(ValueError):
        opt.step(theta, np.ones(3), [0, 1])


def test_train_deterministic_and_single_step():
    inst = builtin("UC_4b")
    cfg = TrainConfig(steps=3, seed=4)
    a, b = train(inst, cfg), train(inst, cfg)
    assert a.history == b.history
    assert np.array_equal(a.theta, b.theta) and a.cost == b.cost
    one = train(inst, cfg.with_(steps=1))
    assert len(one.history) == 1
    assert one.y.shape == (4, 3) and one.tau in cfg.thresholds


def test_train_checkpoints_track_best():
    inst = builtin("UC_4b")
    res = train(inst, TrainConfig(steps=6, seed=1), checkpoints=[2, 4, 6, 99])
    assert [c.step for c in res.checkpoints] == [2, 4, 6]
    feas = [c.feasible for c in res.checkpoints]
    assert feas == sorted(feas)  # once feasible, stays feasible


def test_postprocess_all_half(uc4b):
    half = np.full((4, 3), 0.5)
    on = postprocess(uc4b, half, (0.5,))
    assert on.y.tolist() == [[1] * 3] * 4 and on.feasible
    off = postprocess(uc4b, half, (0.6,))
    assert not off.y.any() and not off.feasible and off.n_violated > 0


def test_postprocess_binary_unchanged(uc4b):
    ref = uc4b_reference()
    for tau in (0.2, 0.5, 0.9):
        out = postprocess(uc4b, ref.y.astype(float), (tau,))
        assert np.array_equal(out.y, ref.y) and out.feasible
        assert abs(out.cost - ref.cost) < 1e-6 * ref.cost


def test_postprocess_prefers_cheaper_then_smaller_tau(uc4b):
    ref = uc4b_reference()
    soft = ref.y.astype(float)
    soft[1] = 0.5  # unit 1 is off in the optimum
    out = postprocess(uc4b, soft, (0.3, 0.4, 0.6, 0.7))
    assert np.array_equal(out.y, ref.y) and out.tau == 0.6
    same = postprocess(uc4b, ref.y.astype(float), (0.7, 0.3))
    assert same.tau == 0.3


def test_postprocess_feasible_output_is_checked(uc4b):
    rng = np.random.default_rng(2)
    for _ in range(5):
        out = postprocess(uc4b, rng.uniform(0, 1, (4, 3)))
        if out.feasible:
            assert check_feasibility(uc4b, out.y, out.p).passed
            assert out.cost == dispatch_cost(uc4b, out.y, out.p)


def test_objective_trends_downward_on_uc4b():
    runs = uc4b_campaign()
    down = 0
    for r in runs:
        J = np.array([h.objective for h in r.history])
        down += J[-20:].mean() < J[:20].mean()
    assert down >= 8
