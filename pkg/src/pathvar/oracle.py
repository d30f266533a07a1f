"""Dense-matrix ground truth for small circuits.

Everything here works with explicit state vectors (or mixtures of them),
never with the Pauli-path machinery it is meant to check. Losses are
evaluated at arbitrary continuous angles; gradients use the parameter-shift
rule; the discrete-angle averaging property is checked as a literal matrix
identity.

Mixed product inputs (any Bloch norm < 1) are decomposed into mixtures of
at most two pure states per qubit, which keeps the evolution in the cheap
statevector representation. A direct density-matrix path exists as well and
is used to cross-check the mixture decomposition.
"""

from __future__ import annotations

import math

import numpy as np

from .circuit import Circuit, CircuitError, FreeParam, Observable
from .pauli import PauliWord
from .results import EstimateResult

DEFAULT_QUBIT_CAP = 12

_SQ2 = 1.0 / math.sqrt(2.0)

GATE_MATRICES: dict[str, np.ndarray] = {
    "H": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}


class OracleError(ValueError):
    pass


def pauli_matrix(word: PauliWord) -> np.ndarray:
    """Dense 2^n x 2^n matrix of a Pauli word, including its phase."""
    dim = 1 << word.n
    idx = np.arange(dim)
    perm, phase = _pauli_action(word)
    mat = np.zeros((dim, dim), dtype=complex)
    mat[perm, idx] = phase
    return mat


def _pauli_action(word: PauliWord) -> tuple[np.ndarray, np.ndarray]:
    """Return (perm, phase) with  P|i> = phase[i] |perm[i]>.

    For P = i^p (tensor of letters) with symplectic masks (x, z):
    P|b> = i^(p + |x&z|) (-1)^(popcount(b&z)) |b xor x>.
    """
    dim = 1 << word.n
    idx = np.arange(dim)
    perm = idx ^ word.x
    k = (word.phase_pow + (word.x & word.z).bit_count()) % 4
    base = (1j) ** k
    zpar = np.zeros(dim, dtype=np.int64)
    for q in range(word.n):
        if (word.z >> q) & 1:
            zpar ^= (idx >> q) & 1
    phase = base * np.where(zpar, -1.0, 1.0)
    return perm, phase


def _apply_pauli(states: np.ndarray, word: PauliWord) -> np.ndarray:
    """Apply a Pauli word to a batch of statevectors, shape (B, 2^n)."""
    perm, phase = _pauli_action(word)
    # (P psi)[j] = phase[j ^ x] psi[j ^ x]; perm is an involution up to x
    return phase[perm] * states[:, perm]


def _apply_matrix(states: np.ndarray, mat: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Apply a small unitary on the given qubits to a (B, 2^n) batch."""
    b = states.shape[0]
    k = len(qubits)
    t = states.reshape((b,) + (2,) * n)
    axes = [1 + (n - 1 - q) for q in qubits]
    t = np.moveaxis(t, axes, range(1, 1 + k))
    rest = t.shape[1 + k:]
    flat = t.reshape(b, 1 << k, -1)
    flat = np.einsum("ij,bjk->bik", mat, flat)
    t = flat.reshape((b,) + (2,) * k + rest)
    t = np.moveaxis(t, range(1, 1 + k), axes)
    return t.reshape(b, 1 << n)


def _lift(word: PauliWord, n: int) -> PauliWord:
    return word if word.n == n else PauliWord(n, word.x, word.z, word.phase_pow)


def _angles_for(c: Circuit, angles: np.ndarray) -> np.ndarray:
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    if angles.shape[1] != c.m:
        raise OracleError(f"expected {c.m} angles, got {angles.shape[1]}")
    return angles


def _check_cap(c: Circuit, cap: int) -> None:
    if c.n > cap:
        raise OracleError(f"{c.n} qubits exceeds the dense-simulation cap {cap}")


def _bloch_to_pure(bx: float, by: float, bz: float) -> np.ndarray:
    alpha = math.acos(max(-1.0, min(1.0, bz)))
    phi = math.atan2(by, bx)
    return np.array(
        [math.cos(alpha / 2.0), math.sin(alpha / 2.0) * complex(math.cos(phi), math.sin(phi))],
        dtype=complex,
    )


def input_branches(c: Circuit) -> list[tuple[float, np.ndarray]]:
    """Decompose the product input into weighted pure statevectors.

    A qubit with Bloch norm r < 1 becomes the two-point mixture of the pure
    states along +/- its Bloch axis with weights (1 +/- r)/2. The returned
    branches multiply out across qubits.
    """
    per_qubit: list[list[tuple[float, np.ndarray]]] = []
    n_mixed = 0
    for q in range(c.n):
        bx, by, bz = c.bloch(q)
        r = math.sqrt(bx * bx + by * by + bz * bz)
        if r > 1.0 + 1e-9:
            raise OracleError(f"qubit {q} has Bloch norm > 1")
        if r >= 1.0 - 1e-12:
            per_qubit.append([(1.0, _bloch_to_pure(bx, by, bz))])
            continue
        n_mixed += 1
        if r < 1e-15:
            ux, uy, uz = 0.0, 0.0, 1.0
        else:
            ux, uy, uz = bx / r, by / r, bz / r
        per_qubit.append(
            [
                ((1.0 + r) / 2.0, _bloch_to_pure(ux, uy, uz)),
                ((1.0 - r) / 2.0, _bloch_to_pure(-ux, -uy, -uz)),
            ]
        )
    if n_mixed > 8:
        raise OracleError(f"{n_mixed} mixed input qubits exceed the mixture cap of 8")
    branches: list[tuple[float, np.ndarray]] = [(1.0, np.array([1.0 + 0j]))]
    for q in range(c.n - 1, -1, -1):
        nxt = []
        for w, psi in branches:
            for wq, phi in per_qubit[q]:
                nxt.append((w * wq, np.kron(psi, phi)))
        branches = nxt
    return branches


def _evolve(c: Circuit, psi0: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Evolve one pure input under a batch of angle assignments."""
    b = angles.shape[0]
    states = np.broadcast_to(psi0, (b, psi0.shape[0])).astype(complex)
    for g in c.gates:
        if g.kind == "clifford":
            states = _apply_matrix(states, GATE_MATRICES[g.name], g.qubits, c.n)
        else:
            gen = _lift(g.generator, c.n)
            if isinstance(g.param, FreeParam):
                theta = angles[:, g.param.index]
            else:
                theta = np.full(b, g.param.angle)
            half = theta[:, None] / 2.0
            states = np.cos(half) * states - 1j * np.sin(half) * _apply_pauli(states, gen)
    return states


def loss_batch(
    c: Circuit, obs: Observable, angles: np.ndarray, cap: int = DEFAULT_QUBIT_CAP
) -> np.ndarray:
    """Loss tr(O . state) for each row of ``angles``; shape (B,)."""
    _check_cap(c, cap)
    angles = _angles_for(c, angles)
    total = np.zeros(angles.shape[0])
    for w, psi0 in input_branches(c):
        states = _evolve(c, psi0, angles)
        vals = np.zeros(angles.shape[0])
        for coeff, word in obs.terms:
            ppsi = _apply_pauli(states, _lift(word, c.n))
            vals += coeff * np.einsum("bi,bi->b", states.conj(), ppsi).real
        total += w * vals
    return total


def loss(c: Circuit, obs: Observable, angles, cap: int = DEFAULT_QUBIT_CAP) -> float:
    arr = np.asarray(angles, dtype=float).reshape(1, c.m)
    return float(loss_batch(c, obs, arr, cap=cap)[0])


def grad_loss_batch(
    c: Circuit, obs: Observable, angles: np.ndarray, j: int, cap: int = DEFAULT_QUBIT_CAP
) -> np.ndarray:
    """Parameter-shift gradient dL/dtheta_j for each angle row."""
    if not 0 <= j < c.m:
        raise OracleError(f"parameter {j} out of range for m={c.m}")
    angles = _angles_for(c, angles)
    plus = angles.copy()
    plus[:, j] += math.pi / 2.0
    minus = angles.copy()
    minus[:, j] -= math.pi / 2.0
    return 0.5 * (loss_batch(c, obs, plus, cap=cap) - loss_batch(c, obs, minus, cap=cap))


def reduced_density(
    c: Circuit, angles, keep_system: bool = True, cap: int = DEFAULT_QUBIT_CAP
) -> np.ndarray:
    """Output density matrix on the system register (ancillas traced out)."""
    _check_cap(c, cap)
    angles = np.asarray(angles, dtype=float).reshape(1, c.m)
    ns = c.n_system if keep_system else c.n
    dim_keep = 1 << ns
    dim_rest = 1 << (c.n - ns)
    rho = np.zeros((dim_keep, dim_keep), dtype=complex)
    for w, psi0 in input_branches(c):
        psi = _evolve(c, psi0, angles)[0]
        mat = psi.reshape(dim_rest, dim_keep)  # ancillas are the high bits
        rho += w * (mat.T @ mat.conj())
    return rho


def density_loss(c: Circuit, obs: Observable, angles, cap: int = DEFAULT_QUBIT_CAP) -> float:
    """Loss via an explicit density-matrix evolution (cross-check path)."""
    _check_cap(c, cap)
    angles = np.asarray(angles, dtype=float).reshape(c.m)
    dim = 1 << c.n
    rho = np.zeros((dim, dim), dtype=complex)
    for w, psi0 in input_branches(c):
        rho += w * np.outer(psi0, psi0.conj())
    for g in c.gates:
        if g.kind == "clifford":
            u = _embed(GATE_MATRICES[g.name], g.qubits, c.n)
        else:
            gen = pauli_matrix(_lift(g.generator, c.n))
            if isinstance(g.param, FreeParam):
                theta = angles[g.param.index]
            else:
                theta = g.param.angle
            u = math.cos(theta / 2.0) * np.eye(dim) - 1j * math.sin(theta / 2.0) * gen
        rho = u @ rho @ u.conj().T
    val = 0.0
    for coeff, word in obs.terms:
        val += coeff * np.trace(pauli_matrix(_lift(word, c.n)) @ rho).real
    return float(val)


def _embed(mat: np.ndarray, qubits: tuple[int, ...], n: int) -> np.ndarray:
    """Small-gate unitary embedded into the full 2^n register."""
    dim = 1 << n
    # rows of eye are basis states; row i of the result is U|e_i>, so the
    # embedded unitary is the transpose
    return _apply_matrix(np.eye(dim, dtype=complex), mat, qubits, n).T


def continuous_variance(
    c: Circuit,
    obs: Observable,
    n_samples: int,
    seed: int,
    param: int | None = None,
    cap: int = DEFAULT_QUBIT_CAP,
) -> EstimateResult:
    """Sample variance of the loss (or of dL/dtheta_param) at uniform angles.

    Angles are drawn uniformly from [0, 2pi)^m. The returned stderr is a
    delete-one jackknife error of the sample variance itself.
    """
    _check_cap(c, cap)
    if n_samples < 4:
        raise OracleError("need at least 4 samples")
    rng = np.random.default_rng(seed)
    m = c.m
    vals = np.empty(n_samples)
    chunk = max(1, 1 << max(0, 21 - c.n))
    done = 0
    while done < n_samples:
        take = min(chunk, n_samples - done)
        angles = rng.uniform(0.0, 2.0 * math.pi, size=(take, m))
        if param is None:
            vals[done:done + take] = loss_batch(c, obs, angles, cap=cap)
        else:
            vals[done:done + take] = grad_loss_batch(c, obs, angles, param, cap=cap)
        done += take
    s = float(n_samples)
    total = vals.sum()
    total_sq = (vals * vals).sum()
    var = float(np.var(vals, ddof=1))
    # delete-one variances, vectorized
    mean_i = (total - vals) / (s - 1.0)
    var_i = (total_sq - vals * vals - (s - 1.0) * mean_i * mean_i) / (s - 2.0)
    se = math.sqrt(max(0.0, (s - 1.0) / s * float(((var_i - var_i.mean()) ** 2).sum())))
    return EstimateResult(mean=var, stderr=se, samples=n_samples, seed=seed)


# ---------------------------------------------------------------------------
# discrete-angle averaging identity
# ---------------------------------------------------------------------------


def two_design_check(generator, num_angles: int = 4, quadrature_points: int = 64) -> float:
    """Max absolute deviation between discrete and continuous twirl moments.

    Builds M = avg_theta (R(theta) (x) R(-theta))^(x2) over the discrete
    angle set versus the continuous average over [0, 2pi), where
    R(theta) = exp(-i theta/2 P) for the given generator. The 4-point set
    {0, pi/2, pi, 3pi/2} reproduces the continuous average exactly; the
    3-point control {0, pi/2, pi} (equal weights) does not.
    """
    if isinstance(generator, str):
        generator = PauliWord.from_text(generator)
    if generator.is_identity:
        raise OracleError("generator must be a nonidentity Pauli word")
    p = pauli_matrix(PauliWord(generator.n, generator.x, generator.z))
    dim = p.shape[0]
    eye = np.eye(dim, dtype=complex)

    def moment(theta: float) -> np.ndarray:
        r = math.cos(theta / 2.0) * eye - 1j * math.sin(theta / 2.0) * p
        rm = math.cos(theta / 2.0) * eye + 1j * math.sin(theta / 2.0) * p
        a = np.kron(r, rm)
        return np.kron(a, a)

    if num_angles == 4:
        discrete_angles = [0.0, math.pi / 2.0, math.pi, 1.5 * math.pi]
    elif num_angles == 3:
        discrete_angles = [0.0, math.pi / 2.0, math.pi]
    else:
        raise OracleError("num_angles must be 3 (negative control) or 4")
    m_disc = sum(moment(t) for t in discrete_angles) / len(discrete_angles)
    qs = [2.0 * math.pi * j / quadrature_points for j in range(quadrature_points)]
    m_cont = sum(moment(t) for t in qs) / quadrature_points
    return float(np.abs(m_disc - m_cont).max())


DEFAULT_DESIGN_GENERATORS = ("Z", "X", "X0 X1", "Z0 Z1", "Y0 X1")


def two_design_report(num_angles: int = 4) -> dict[str, float]:
    """Deviation of the discrete average for a standard generator battery."""
    return {g: two_design_check(g, num_angles=num_angles) for g in DEFAULT_DESIGN_GENERATORS}
