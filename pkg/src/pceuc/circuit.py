"""Dense statevector simulation of rotation/entangler ansatz circuits.

Qubit ``q`` is axis ``q`` of the state reshaped to ``(2,) * n``, i.e. bit
``n - 1 - q`` of the flat basis index.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

AXES = ("X", "Y", "Z")


@dataclass(frozen=True)
class Rotation:
    axis: str
    qubit: int
    param: int


@dataclass(frozen=True)
class Entangler:
    kind: str  # "CZ" or "CX"
    control: int
    target: int


@dataclass(frozen=True)
class Ansatz:
    """Parameterized circuit: an ordered list of rotations and entanglers."""

    n_qubits: int
    layers: int
    gates: tuple
    n_params: int
    kind: str = "custom"

    def __post_init__(self):
        seen = []
        for g in self.gates:
            if isinstance(g, Rotation):
                if g.axis not in AXES:
                    raise ValueError(f"bad rotation axis {g.axis!r}")
                if not 0 <= g.qubit < self.n_qubits:
                    raise ValueError(f"rotation qubit {g.qubit} out of range")
                seen.append(g.param)
            elif isinstance(g, Entangler):
                if g.kind not in ("CZ", "CX"):
                    raise ValueError(f"bad entangler {g.kind!r}")
                for q in (g.control, g.target):
                    if not 0 <= q < self.n_qubits:
                        raise ValueError(f"entangler qubit {q} out of range")
                if g.control == g.target:
                    raise ValueError("entangler must act on two distinct qubits")
            else:
                raise TypeError(f"unknown gate {g!r}")
        if sorted(seen) != list(range(self.n_params)):
            raise ValueError("parameter indices must be 0..n_params-1, each used once")

    @property
    def rotations(self):
        return [g for g in self.gates if isinstance(g, Rotation)]

    @property
    def entanglers(self):
        return [g for g in self.gates if isinstance(g, Entangler)]


def _check_size(n_qubits, layers):
    if n_qubits < 2:
        raise ValueError("ansatz needs n_qubits >= 2")
    if layers < 1:
        raise ValueError("ansatz needs layers >= 1")


def build_brickwork(n_qubits: int, layers: int) -> Ansatz:
    """Y-rotation layers with CZ entanglers alternating even/odd pairs.

    Layers are counted from 1: odd layers couple (0,1),(2,3),...; even
    layers couple (1,2),(3,4),...  A final rotation layer closes the circuit.
    """
    _check_size(n_qubits, layers)
    gates = []
    p = 0
    for layer in range(1, layers + 1):
        for q in range(n_qubits):
            gates.append(Rotation("Y", q, p))
            p += 1
        start = 0 if layer % 2 == 1 else 1
        for q in range(start, n_qubits - 1, 2):
            gates.append(Entangler("CZ", q, q + 1))
    for q in range(n_qubits):
        gates.append(Rotation("Y", q, p))
        p += 1
    return Ansatz(n_qubits, layers, tuple(gates), p, kind="brickwork")


def build_efficient_su2(n_qubits: int, layers: int) -> Ansatz:
    """RY+RZ per qubit, then a linear CX chain; final RY+RZ layer."""
    _check_size(n_qubits, layers)
    gates = []
    p = 0

    def rot_layer():
        nonlocal p
        for axis in ("Y", "Z"):
            for q in range(n_qubits):
                gates.append(Rotation(axis, q, p))
                p += 1

    for _ in range(layers):
        rot_layer()
        for q in range(n_qubits - 1):
            gates.append(Entangler("CX", q, q + 1))
    rot_layer()
    return Ansatz(n_qubits, layers, tuple(gates), p, kind="su2")


ANSATZ_BUILDERS = {"brickwork": build_brickwork, "su2": build_efficient_su2}


def build_ansatz(kind: str, n_qubits: int, layers: int) -> Ansatz:
    try:
        builder = ANSATZ_BUILDERS[kind]
    except KeyError:
        raise ValueError(f"unknown ansatz {kind!r}; choose from {sorted(ANSATZ_BUILDERS)}") from None
    return builder(n_qubits, layers)


# ---------------------------------------------------------------------------
# simulation

def _rotate(psi, axis, qubit, n, angle):
    # psi viewed as (left, 2, right) around the target qubit
    v = psi.reshape(2 ** qubit, 2, 2 ** (n - qubit - 1))
    a, b = v[:, 0, :], v[:, 1, :]
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if axis == "Y":
        a, b = c * a - s * b, s * a + c * b
    elif axis == "X":
        a, b = c * a - 1j * s * b, -1j * s * a + c * b
    else:
        a, b = (c - 1j * s) * a, (c + 1j * s) * b
    out = np.empty_like(v)
    out[:, 0, :] = a
    out[:, 1, :] = b
    return out.reshape(-1)


def _entangle(psi, kind, control, target, n):
    v = psi.reshape((2,) * n)
    idx = [slice(None)] * n
    idx[control] = 1
    if kind == "CZ":
        idx[target] = 1
        v[tuple(idx)] *= -1
    else:
        sub = v[tuple(idx)]
        # target axis shifts down by one once control is fixed
        t_axis = target if target < control else target - 1
        v[tuple(idx)] = np.flip(sub, axis=t_axis).copy()
    return v.reshape(-1)


def simulate(ansatz: Ansatz, theta) -> np.ndarray:
    """Return U(theta)|0...0> as a flat complex vector of length 2**n."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (ansatz.n_params,):
        raise ValueError(f"expected {ansatz.n_params} parameters, got shape {theta.shape}")
    n = ansatz.n_qubits
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1.0
    for g in ansatz.gates:
        if isinstance(g, Rotation):
            psi = _rotate(psi, g.axis, g.qubit, n, theta[g.param])
        else:
            psi = _entangle(psi, g.kind, g.control, g.target, n)
    return psi


# ---------------------------------------------------------------------------
# observables

@dataclass(frozen=True)
class PauliString:
    """Same Pauli operator on every qubit of ``support``, identity elsewhere."""

    axis: str
    support: tuple

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"bad Pauli axis {self.axis!r}")
        support = tuple(int(q) for q in self.support)
        if not support or list(support) != sorted(set(support)) or support[0] < 0:
            raise ValueError("support must be a non-empty strictly increasing index set")
        object.__setattr__(self, "support", support)

    @property
    def k(self):
        return len(self.support)

    def mask(self, n_qubits: int) -> int:
        if self.support[-1] >= n_qubits:
            raise ValueError(f"support {self.support} exceeds {n_qubits} qubits")
        m = 0
        for q in self.support:
            m |= 1 << (n_qubits - 1 - q)
        return m

    def __str__(self):
        return self.axis + "{" + ",".join(map(str, self.support)) + "}"


def _parity(x):
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros_like(x)
    while np.any(x):
        out ^= x & 1
        x = x >> 1
    return out


def expectation(state, o: PauliString) -> float:
    """Exact <psi|O|psi> for a single Pauli string."""
    psi = np.asarray(state)
    n = int(np.log2(psi.size))
    mask = o.mask(n)
    idx = np.arange(psi.size)
    sign = 1.0 - 2.0 * _parity(idx & mask)
    if o.axis == "Z":
        val = np.sum(sign * np.abs(psi) ** 2)
        return float(np.clip(val, -1.0, 1.0))
    flipped = idx ^ mask
    if o.axis == "X":
        amp = psi[flipped]
    else:
        # Y|b> = i(-1)^b |1-b>  per qubit
        amp = np.empty_like(psi)
        amp[flipped] = (1j ** o.k) * sign * psi
    val = np.vdot(psi, amp)
    return float(np.clip(val.real, -1.0, 1.0))


def _fwht(vec):
    """Walsh-Hadamard transform: out[m] = sum_b (-1)^{popcount(b & m)} vec[b]."""
    h = np.array(vec, dtype=float)
    n = h.size
    step = 1
    while step < n:
        h = h.reshape(-1, 2, step)
        a = h[:, 0, :].copy()
        b = h[:, 1, :]
        h[:, 0, :] = a + b
        h[:, 1, :] = a - b
        h = h.reshape(-1)
        step *= 2
    return h


_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.array([[1, 0], [0, -1j]], dtype=complex)
_BASIS_CHANGE = {"X": _H, "Y": _H @ _SDG}


def _apply_all(psi, mat, n):
    v = psi.reshape((2,) * n)
    for q in range(n):
        v = np.moveaxis(np.tensordot(mat, v, axes=([1], [q])), 0, q)
    return v.reshape(-1)


def basis_probabilities(state, axis: str) -> np.ndarray:
    """Outcome distribution of a global measurement in the X, Y, or Z basis."""
    psi = np.asarray(state)
    n = int(np.log2(psi.size))
    if axis != "Z":
        psi = _apply_all(psi, _BASIS_CHANGE[axis], n)
    return np.abs(psi) ** 2


def correlators(state, strings, shots=None, rng=None) -> np.ndarray:
    """Expectations of many Pauli strings, grouped by measurement basis.

    Each axis family is read off a single global-basis distribution. With
    ``shots`` set, that distribution is replaced by the empirical histogram
    of ``shots`` samples drawn from ``rng``.
    """
    psi = np.asarray(state)
    n = int(np.log2(psi.size))
    out = np.empty(len(strings))
    for axis in AXES:
        sel = [j for j, s in enumerate(strings) if s.axis == axis]
        if not sel:
            continue
        probs = basis_probabilities(psi, axis)
        if shots is not None:
            if rng is None:
                raise ValueError("sampling mode needs an rng")
            probs = rng.multinomial(shots, probs / probs.sum()) / shots
        spectrum = _fwht(probs)
        masks = [strings[j].mask(n) for j in sel]
        out[sel] = spectrum[masks]
    return np.clip(out, -1.0, 1.0)


def param_shift_grad(ansatz: Ansatz, theta, observables, indices=None) -> np.ndarray:
    """Parameter-shift Jacobian of the observables w.r.t. selected parameters.

    Returns an array of shape ``(len(observables), len(indices))`` whose
    column ``c`` holds ``d e_j / d theta[indices[c]]``.
    """
    theta = np.asarray(theta, dtype=float)
    if indices is None:
        indices = range(ansatz.n_params)
    indices = list(indices)
    for m in indices:
        if not 0 <= m < ansatz.n_params:
            raise ValueError(f"parameter index {m} out of range")
    jac = np.empty((len(observables), len(indices)))
    for col, m in enumerate(indices):
        plus = theta.copy()
        plus[m] += np.pi / 2
        minus = theta.copy()
        minus[m] -= np.pi / 2
        e_plus = correlators(simulate(ansatz, plus), observables)
        e_minus = correlators(simulate(ansatz, minus), observables)
        jac[:, col] = 0.5 * (e_plus - e_minus)
    return jac


def all_k_body(n_qubits: int, k: int, axes=AXES):
    """All same-axis k-body strings, axis-major then lexicographic subsets."""
    return [PauliString(axis, sub) for axis in axes for sub in combinations(range(n_qubits), k)]
