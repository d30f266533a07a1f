"""Shared fixtures and independent brute-force reference implementations.

The helpers here deliberately avoid the package's propagation machinery:
Pauli words become literal numpy matrices, circuits become explicit
unitaries, and discrete-angle averages are literal sums over all 4^m
assignments. They exist so the fast engines have something slow and
obviously correct to disagree with.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from pathvar.circuit import (
    Circuit,
    FixedParam,
    FreeParam,
    Gate,
    Observable,
    make_observable,
)
from pathvar.pauli import PauliWord

SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

GATES_2X2 = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "S": np.diag([1, 1j]).astype(complex),
    "SDG": np.diag([1, -1j]).astype(complex),
    "X": SINGLE["X"],
    "Y": SINGLE["Y"],
    "Z": SINGLE["Z"],
}

GATES_4X4 = {
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}


def dense_word(word: PauliWord) -> np.ndarray:
    """Literal kron product, most significant qubit first."""
    mat = np.array([[1.0 + 0j]])
    for q in range(word.n - 1, -1, -1):
        mat = np.kron(mat, SINGLE[word.letter(q)])
    return (1j) ** (word.phase_pow % 4) * mat


def dense_gate(gate: Gate, n: int, angle: float | None = None) -> np.ndarray:
    """Full 2^n unitary of one gate (rotations need an explicit angle)."""
    dim = 1 << n
    if gate.kind == "clifford":
        small = GATES_2X2[gate.name] if len(gate.qubits) == 1 else GATES_4X4[gate.name]
        u = np.zeros((dim, dim), dtype=complex)
        for i in range(dim):
            bits = [(i >> q) & 1 for q in range(n)]
            for j in range(dim):
                jbits = [(j >> q) & 1 for q in range(n)]
                if any(
                    bits[q] != jbits[q] for q in range(n) if q not in gate.qubits
                ):
                    continue
                row = 0
                col = 0
                for q in gate.qubits:
                    row = (row << 1) | bits[q]
                    col = (col << 1) | jbits[q]
                u[i, j] = small[row, col]
        return u
    gen = dense_word(PauliWord(n, gate.generator.x, gate.generator.z))
    return math.cos(angle / 2) * np.eye(dim) - 1j * math.sin(angle / 2) * gen


def dense_circuit(c: Circuit, angles) -> np.ndarray:
    """Whole-circuit unitary at explicit angles."""
    dim = 1 << c.n
    u = np.eye(dim, dtype=complex)
    for g in c.gates:
        if g.kind == "clifford":
            u = dense_gate(g, c.n) @ u
        else:
            theta = angles[g.param.index] if isinstance(g.param, FreeParam) else g.param.angle
            u = dense_gate(g, c.n, theta) @ u
    return u


def dense_input(c: Circuit) -> np.ndarray:
    """Density matrix of the product input state."""
    rho = np.array([[1.0 + 0j]])
    for q in range(c.n - 1, -1, -1):
        bx, by, bz = c.bloch(q)
        rq = 0.5 * (SINGLE["I"] + bx * SINGLE["X"] + by * SINGLE["Y"] + bz * SINGLE["Z"])
        rho = np.kron(rho, rq)
    return rho


def brute_loss(c: Circuit, obs: Observable, angles) -> float:
    u = dense_circuit(c, angles)
    rho = u @ dense_input(c) @ u.conj().T
    val = 0.0
    for coeff, word in obs.terms:
        full = PauliWord(c.n, word.x, word.z)
        val += coeff * np.trace(dense_word(full) @ rho).real
    return float(val)


def brute_discrete_variance(c: Circuit, obs: Observable, param: int | None = None) -> float:
    """Literal average over all 4^m discrete assignments (slow, tiny m only).

    param=None gives Var[L]; otherwise Var of the parameter-shift derivative
    with respect to that parameter, evaluated with the same discrete draws.
    """
    m = c.m
    vals = []
    for ks in itertools.product(range(4), repeat=m):
        angles = [k * math.pi / 2 for k in ks]
        if param is None:
            vals.append(brute_loss(c, obs, angles))
        else:
            plus = list(angles)
            plus[param] += math.pi / 2
            minus = list(angles)
            minus[param] -= math.pi / 2
            vals.append(0.5 * (brute_loss(c, obs, plus) - brute_loss(c, obs, minus)))
    arr = np.array(vals)
    return float((arr * arr).mean() - arr.mean() ** 2)


# ---------------------------------------------------------------------------
# random instance generators
# ---------------------------------------------------------------------------

_CLIFFORD_POOL_1 = ["H", "S", "SDG", "X", "Y", "Z"]
_CLIFFORD_POOL_2 = ["CNOT", "CZ", "SWAP"]
_LETTERS = "XYZ"


def random_circuit(
    rng: np.random.Generator,
    n: int,
    n_gates: int,
    n_free: int,
    fixed_discrete: bool = True,
    allow_fixed: bool = False,
) -> Circuit:
    """Random Clifford+rotation circuit with exactly n_free Free rotations."""
    gates: list[Gate] = []
    rot_slots = sorted(rng.choice(n_gates, size=min(n_free, n_gates), replace=False))
    free_iter = iter(range(len(rot_slots)))
    for i in range(n_gates):
        if i in rot_slots:
            weight = 1 if n == 1 else int(rng.integers(1, 3))
            qubits = rng.choice(n, size=weight, replace=False)
            text = " ".join(
                f"{_LETTERS[rng.integers(0, 3)]}{int(q)}" for q in qubits
            )
            gates.append(
                Gate.rotation(
                    PauliWord.from_text(text, n), FreeParam(next(free_iter))
                )
            )
        elif allow_fixed and rng.random() < 0.2:
            weight = 1 if n == 1 else int(rng.integers(1, 3))
            qubits = rng.choice(n, size=weight, replace=False)
            text = " ".join(
                f"{_LETTERS[rng.integers(0, 3)]}{int(q)}" for q in qubits
            )
            if fixed_discrete:
                angle = float(rng.integers(0, 4)) * math.pi / 2
            else:
                angle = float(rng.uniform(0, 2 * math.pi))
            gates.append(
                Gate.rotation(PauliWord.from_text(text, n), FixedParam(angle))
            )
        else:
            if n >= 2 and rng.random() < 0.5:
                name = _CLIFFORD_POOL_2[rng.integers(0, 3)]
                q = rng.choice(n, size=2, replace=False)
                gates.append(Gate.clifford(name, (int(q[0]), int(q[1]))))
            else:
                name = _CLIFFORD_POOL_1[rng.integers(0, 6)]
                gates.append(Gate.clifford(name, (int(rng.integers(0, n)),)))
    return Circuit(n_system=n, gates=tuple(gates))


def random_observable(rng: np.random.Generator, n: int, max_terms: int = 4) -> Observable:
    n_terms = int(rng.integers(1, max_terms + 1))
    n_terms = min(n_terms, 4 ** n - 1)  # only so many distinct words exist
    pairs = []
    seen = set()
    while len(pairs) < n_terms:
        weight = int(rng.integers(1, min(n, 3) + 1))
        qubits = rng.choice(n, size=weight, replace=False)
        text = " ".join(f"{_LETTERS[rng.integers(0, 3)]}{int(q)}" for q in qubits)
        word = PauliWord.from_text(text, n)
        if (word.x, word.z) in seen:
            continue
        seen.add((word.x, word.z))
        coeff = float(rng.uniform(0.25, 2.0)) * (1 if rng.random() < 0.5 else -1)
        pairs.append((coeff, word))
    return make_observable(pairs, n)


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)
