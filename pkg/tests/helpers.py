"""Shared oracles and cached experiment runs for the test suite."""

import functools
import itertools
import time

import numpy as np

from pceuc.bilevel import TrainConfig, train
from pceuc.instances import GeneratorUnit, UcInstance, builtin

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def kron_all(mats):
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def dense_pauli(axis, support, n):
    """Dense matrix of a Pauli string; qubit 0 is the leftmost tensor factor."""
    return kron_all([PAULI[axis] if q in support else PAULI["I"] for q in range(n)])


def rot(axis, angle):
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * PAULI[axis]


def dense_unitary(ansatz, theta):
    """Circuit unitary by explicit Kronecker products (independent of the simulator)."""
    from pceuc.circuit import Rotation

    n = ansatz.n_qubits
    U = np.eye(2 ** n, dtype=complex)
    P0 = np.diag([1, 0]).astype(complex)
    P1 = np.diag([0, 1]).astype(complex)
    for g in ansatz.gates:
        if isinstance(g, Rotation):
            mats = [PAULI["I"]] * n
            mats[g.qubit] = rot(g.axis, theta[g.param])
            G = kron_all(mats)
        else:
            a = [PAULI["I"]] * n
            b = [PAULI["I"]] * n
            a[g.control] = P0
            b[g.control] = P1
            b[g.target] = PAULI["Z"] if g.kind == "CZ" else PAULI["X"]
            G = kron_all(a) + kron_all(b)
        U = G @ U
    return U


def small_instance(rng, n_units=2, n_periods=2, name="rand"):
    """Random instance that always admits an all-on feasible schedule."""
    units = []
    for _ in range(n_units):
        pmin = float(rng.uniform(5, 30))
        pmax = pmin + float(rng.uniform(40, 120))
        units.append(GeneratorUnit(
            a=float(rng.uniform(50, 500)), b=float(rng.uniform(10, 25)),
            c=float(rng.uniform(0.001, 0.02)), p_min=pmin, p_max=pmax,
            r_up=float(rng.uniform(10, 60)), r_dn=float(rng.uniform(10, 60)),
        ))
    cap = sum(u.p_max for u in units)
    base = sum(u.p_min for u in units)
    loads = [float(rng.uniform(base + 5, 0.8 * cap)) for _ in range(n_periods)]
    reserves = [float(rng.uniform(0, 0.1 * l)) for l in loads]
    return UcInstance(name, units, loads, reserves)


def all_schedules(n_units, n_periods):
    for bits in itertools.product((0, 1), repeat=n_units * n_periods):
        yield np.array(bits, dtype=float).reshape(n_units, n_periods)


# wall-clock seconds of each cached campaign, keyed like the cache
CAMPAIGN_SECONDS = {}


@functools.lru_cache(maxsize=None)
def uc4b_campaign(seeds=tuple(range(10)), steps=200, layers=6):
    inst = builtin("UC_4b")
    start = time.perf_counter()
    runs = [train(inst, TrainConfig(layers=layers, steps=steps, seed=s)) for s in seeds]
    CAMPAIGN_SECONDS[(seeds, steps, layers)] = time.perf_counter() - start
    return runs


@functools.lru_cache(maxsize=None)
def uc4b_reference():
    from pceuc.reference import exhaustive_solve

    return exhaustive_solve(builtin("UC_4b"))
