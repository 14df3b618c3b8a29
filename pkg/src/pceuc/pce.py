"""Pauli correlation encoding of an N x T binary commitment schedule."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .circuit import PauliString, all_k_body

#: Default candidate thresholds for hardening: 0.05, 0.10, ..., 0.95.
DEFAULT_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 20))


def capacity(n_qubits: int, k: int) -> int:
    return 3 * comb(n_qubits, k)


def select_qubit_count(n_vars: int, k: int = 2) -> int:
    """Smallest qubit count whose k-body X/Y/Z library holds ``n_vars`` strings."""
    if n_vars < 1 or k < 1:
        raise ValueError("n_vars and k must be >= 1")
    n = k
    while capacity(n, k) < n_vars:
        n += 1
    return n


@dataclass(frozen=True)
class CorrelatorMap:
    """Ordered correlator strings and their (unit, period) assignment.

    String ``j`` encodes commitment ``(j // n_periods, j % n_periods)``.
    """

    n_qubits: int
    k: int
    strings: tuple
    n_units: int
    n_periods: int

    def __post_init__(self):
        if len(self.strings) != self.n_units * self.n_periods:
            raise ValueError("need exactly one string per (unit, period)")
        if len(set(self.strings)) != len(self.strings):
            raise ValueError("correlator strings must be distinct")

    @property
    def n_vars(self):
        return len(self.strings)

    def index(self, j: int):
        return divmod(j, self.n_periods)

    def to_matrix(self, values) -> np.ndarray:
        """Place a length-N*T vector on the N x T grid (row-major)."""
        return np.asarray(values, dtype=float).reshape(self.n_units, self.n_periods)

    def to_vector(self, matrix) -> np.ndarray:
        return np.asarray(matrix, dtype=float).reshape(-1)


def build_correlators(n_qubits: int, k: int, n_vars: int, n_periods: int | None = None) -> CorrelatorMap:
    """Take the first ``n_vars`` strings in X, Y, Z / lexicographic-subset order."""
    if capacity(n_qubits, k) < n_vars:
        raise ValueError(
            f"{n_qubits} qubits with k={k} provide only {capacity(n_qubits, k)} "
            f"correlators, {n_vars} needed"
        )
    if n_periods is None:
        n_periods = 1
    if n_vars % n_periods:
        raise ValueError("n_vars must be a multiple of n_periods")
    strings = tuple(all_k_body(n_qubits, k)[:n_vars])
    return CorrelatorMap(n_qubits, k, strings, n_vars // n_periods, n_periods)


def correlator_map_for(n_units: int, n_periods: int, k: int = 2) -> CorrelatorMap:
    n_vars = n_units * n_periods
    return build_correlators(select_qubit_count(n_vars, k), k, n_vars, n_periods)


def decode_soft(e, alpha: float) -> np.ndarray:
    """Squash correlators into (0, 1): ``(1 + tanh(alpha * e)) / 2``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return 0.5 * (1.0 + np.tanh(alpha * np.asarray(e, dtype=float)))


def decode_grad(e, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    th = np.tanh(alpha * np.asarray(e, dtype=float))
    return 0.5 * alpha * (1.0 - th * th)


def harden(soft, tau: float) -> np.ndarray:
    """Binary schedule: 1 where ``soft >= tau``."""
    if not 0 < tau < 1:
        raise ValueError("threshold must lie in (0, 1)")
    return (np.asarray(soft) >= tau).astype(np.int8)


__all__ = [
    "CorrelatorMap",
    "DEFAULT_THRESHOLDS",
    "PauliString",
    "build_correlators",
    "capacity",
    "correlator_map_for",
    "decode_grad",
    "decode_soft",
    "harden",
    "select_qubit_count",
]
