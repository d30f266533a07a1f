"""Variance and gradient-variance engines for discrete-angle circuits.

Two complementary engines live here. The Monte Carlo engine draws each
trainable angle uniformly from {0, pi/2, pi, 3pi/2}, backward-propagates
every observable term through the drawn circuit, and averages the squared
input overlaps. The exact engine runs a merging dynamic program over pairs
of Pauli words whose expectation reproduces the full discrete-angle average
without enumerating 4^m assignments. Both accept a Pauli noise model whose
channels attenuate the propagating words, and both share the analytic
lower-bound evaluator `bounds`.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    Circuit,
    CircuitError,
    FixedParam,
    FreeParam,
    LightconeReport,
    Observable,
    full_lightcone,
    split_check,
)
from .mpqc import OpModel
from .pauli import PauliWord
from .results import EstimateResult

CHUNK = 256
TERM_LOOP_MAX = 64
FIXED_SPLIT_CAP = 12
EXACT_PARAM_CAP = 10
_ANGLE_TOL = 1e-9


class EstimatorError(Exception):
    """Estimation could not proceed as requested."""


class UnsupportedAngleError(EstimatorError):
    """A Fixed rotation angle falls outside the quarter-turn set."""


class CapExceededError(EstimatorError):
    """The exact engine was asked for more parameters than its cap allows."""


def _quarter_turns(angle: float) -> int | None:
    """Map an angle to quarter turns mod 4, or None when off-grid."""
    k = round(angle / (math.pi / 2))
    if abs(angle - k * math.pi / 2) > _ANGLE_TOL:
        return None
    return k % 4


# ---------------------------------------------------------------------------
# noise model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Channel:
    """One Pauli channel attached after a gate position.

    Either a uniform depolarizing-style channel over `support` with total
    error probability `gamma` (words=None), or an explicit list of
    (pauli, probability) pairs. The backward action on a Pauli word is a
    scalar attenuation factor 1 - 2 * sum of anticommuting probabilities.
    """

    support: tuple[int, ...]
    gamma: float
    words: tuple[tuple[PauliWord, float], ...] | None = None

    def __post_init__(self):
        if self.words is None:
            if not self.support:
                raise EstimatorError("uniform channel needs a nonempty support")
            total = self.gamma
        else:
            total = 0.0
            for word, p in self.words:
                if p < 0:
                    raise EstimatorError("channel probabilities must be >= 0")
                if word.is_identity:
                    raise EstimatorError("identity has no place in a channel")
                total += p
            object.__setattr__(self, "gamma", total)
        if not 0.0 <= total < 0.5:
            raise EstimatorError(
                f"channel error probability {total} outside [0, 1/2)"
            )
        object.__setattr__(
            self, "mask", sum(1 << q for q in self.support) if self.words is None else 0
        )

    def attenuation(self, x: int, z: int) -> float:
        """Backward factor on the word with symplectic bits (x, z)."""
        if self.words is None:
            if (x | z) & self.mask == 0:
                return 1.0
            q = len(self.support)
            return 1.0 - self.gamma * (4**q) / (4**q - 1)
        hit = 0.0
        for word, p in self.words:
            if ((x & word.z).bit_count() + (z & word.x).bit_count()) & 1:
                hit += p
        return 1.0 - 2.0 * hit


def _uniform_channel(qubits: tuple[int, ...], gamma: float) -> Channel:
    return Channel(support=tuple(sorted(qubits)), gamma=gamma)


@dataclass(frozen=True)
class NoiseModel:
    """Channels keyed by the gate index they follow; -1 is the input cut."""

    sites: tuple[tuple[int, Channel], ...]
    gamma: float = 0.0

    def __post_init__(self):
        seen = set()
        for i, _ in self.sites:
            if i in seen:
                raise EstimatorError(f"duplicate channel site {i}")
            seen.add(i)

    def site_map(self) -> dict[int, Channel]:
        return dict(self.sites)

    @property
    def max_gamma(self) -> float:
        worst = self.gamma
        for _, ch in self.sites:
            worst = max(worst, ch.gamma)
        return worst

    @classmethod
    def uniform_depolarizing(
        cls,
        c: Circuit,
        gamma: float,
        overrides: list[tuple[int, Channel]] | None = None,
    ) -> "NoiseModel":
        """Standard layout: one channel per rotation, one per gadget row.

        Rotations outside the gadget block each get a channel on their own
        support. Inside the block the letter rows get one channel each over
        the union of their wires, and the op preparation gets one cut on the
        ancilla register: after the op rotations when they are gates, at the
        input cut (site -1) when the op is folded into the ancilla state.
        Clifford gates carry no channel.
        """
        if not 0.0 <= gamma < 0.5:
            raise EstimatorError(f"gamma {gamma} outside [0, 1/2)")
        gs = c.marks.get("gadget_start")
        gl = c.marks.get("gadget_layer")
        sites: dict[int, Channel] = {}
        if gs is not None and gl is not None:
            rows: dict[str, list[int]] = {}
            row_wires: dict[str, set[int]] = {}
            op_sites: list[int] = []
            for i in range(gs, gl):
                g = c.gates[i]
                if g.kind != "rotation":
                    continue
                sup = g.generator.support
                if len(sup) == 2:
                    letter = g.generator.letter(max(sup))
                    rows.setdefault(letter, []).append(i)
                    row_wires.setdefault(letter, set()).update(sup)
                else:
                    op_sites.append(i)
            for letter, idxs in rows.items():
                sites[max(idxs)] = _uniform_channel(
                    tuple(row_wires[letter]), gamma
                )
            ancillas = tuple(range(c.n_system, c.n))
            if ancillas:
                cut = max(op_sites) if op_sites else -1
                sites[cut] = _uniform_channel(ancillas, gamma)
        for i, g in enumerate(c.gates):
            if g.kind != "rotation":
                continue
            if gs is not None and gs <= i < gl:
                continue
            sites[i] = _uniform_channel(g.generator.support, gamma)
        for i, ch in overrides or []:
            if not -1 <= i < len(c.gates):
                raise EstimatorError(f"override site {i} outside the circuit")
            sites[i] = ch
        return cls(sites=tuple(sorted(sites.items())), gamma=gamma)

    @classmethod
    def from_json(cls, data: dict, c: Circuit) -> "NoiseModel":
        """Parse {"default_two_qubit_depol": g, "overrides": [...]}.

        Each override is {"after_gate": i, "channel": [{"pauli": "X0",
        "p": 0.001}, ...]} and replaces the default channel at that site.
        """
        gamma = float(data.get("default_two_qubit_depol", 0.0))
        overrides = []
        for entry in data.get("overrides", []):
            words = tuple(
                (PauliWord.from_text(item["pauli"], c.n), float(item["p"]))
                for item in entry["channel"]
            )
            support = tuple(
                sorted(set().union(*(w.support for w, _ in words)))
            )
            overrides.append(
                (int(entry["after_gate"]), Channel(support, 0.0, words))
            )
        return cls.uniform_depolarizing(c, gamma, overrides)


# ---------------------------------------------------------------------------
# compiled backward propagation
# ---------------------------------------------------------------------------


_OP_CLIFF1 = 0
_OP_CLIFF2 = 1
_OP_ROT = 2
_OP_NOISE = 3

_table_cache: dict[tuple[str, int], tuple[int, ...]] = {}


def _clifford_table(name: str, nq: int) -> tuple[int, ...]:
    """Phaseless backward conjugation table on packed local bits."""
    key = (name, nq)
    if key in _table_cache:
        return _table_cache[key]
    out = []
    for idx in range(4**nq):
        x = idx & ((1 << nq) - 1)
        z = idx >> nq
        w = PauliWord(nq, x, z).conjugate_clifford(name, tuple(range(nq)))
        out.append(w.x | (w.z << nq))
    _table_cache[key] = tuple(out)
    return _table_cache[key]


def _compile_program(
    c: Circuit,
    gate_set: frozenset[int],
    noise: NoiseModel | None,
    mask_index: dict[int, int] | None = None,
) -> list[tuple]:
    """Backward op list for one term's cone, channels included.

    ``mask_index`` remaps which anticommute-mask bit (if any) a Free
    parameter sets; None means every parameter records bit ``j``. Remapping
    keeps the mask word small when only a few gradients are requested.
    """
    sites = noise.site_map() if noise else {}
    ops: list[tuple] = []
    for i in range(len(c.gates) - 1, -1, -1):
        if i in sites:
            ops.append((_OP_NOISE, sites[i]))
        if i not in gate_set:
            continue
        g = c.gates[i]
        if g.kind == "clifford":
            table = _clifford_table(g.name, len(g.qubits))
            if len(g.qubits) == 1:
                ops.append((_OP_CLIFF1, g.qubits[0], table))
            else:
                ops.append((_OP_CLIFF2, g.qubits[0], g.qubits[1], table))
        else:
            gen = g.generator
            if isinstance(g.param, FreeParam):
                j = g.param.index
                mj = j if mask_index is None else mask_index.get(j, -1)
                ops.append((_OP_ROT, gen.x, gen.z, j, -1, mj))
            else:
                k = _quarter_turns(g.param.angle)
                if k is None:
                    raise UnsupportedAngleError(
                        f"gate {i} has a fixed angle off the quarter-turn "
                        "grid; use the exact engine for such circuits"
                    )
                ops.append((_OP_ROT, gen.x, gen.z, -1, k, -1))
    if -1 in sites:
        ops.append((_OP_NOISE, sites[-1]))
    return ops


def _run_program(
    ops: list[tuple], x: int, z: int, angles
) -> tuple[int, int, int, float]:
    """Propagate (x, z) through a compiled program.

    Returns the final word bits, the per-parameter anticommute bitmask, and
    the accumulated (linear) attenuation factor.
    """
    mask = 0
    att = 1.0
    for op in ops:
        tag = op[0]
        if tag == _OP_ROT:
            _, gx, gz, j, k, mj = op
            if ((x & gz).bit_count() + (z & gx).bit_count()) & 1:
                if j >= 0:
                    if mj >= 0:
                        mask |= 1 << mj
                    k = angles[j]
                if k & 1:
                    x ^= gx
                    z ^= gz
        elif tag == _OP_CLIFF2:
            _, qa, qb, table = op
            idx = (
                ((x >> qa) & 1)
                | (((x >> qb) & 1) << 1)
                | (((z >> qa) & 1) << 2)
                | (((z >> qb) & 1) << 3)
            )
            o = table[idx]
            clear = ~((1 << qa) | (1 << qb))
            x = (x & clear) | ((o & 1) << qa) | (((o >> 1) & 1) << qb)
            z = (z & clear) | (((o >> 2) & 1) << qa) | (((o >> 3) & 1) << qb)
        elif tag == _OP_CLIFF1:
            _, q, table = op
            o = table[((x >> q) & 1) | (((z >> q) & 1) << 1)]
            x = (x & ~(1 << q)) | ((o & 1) << q)
            z = (z & ~(1 << q)) | (((o >> 1) & 1) << q)
        else:
            att *= op[1].attenuation(x, z)
    return x, z, mask, att


def _input_components(c: Circuit) -> tuple[list, list, list]:
    cx, cy, cz = [], [], []
    for q in range(c.n):
        bx, by, bz = c.bloch(q)
        cx.append(bx)
        cy.append(by)
        cz.append(bz)
    return cx, cy, cz


def _overlap(x: int, z: int, comps) -> float:
    """Product of single-qubit Bloch components for the word (x, z)."""
    cx, cy, cz = comps
    w = 1.0
    s = x | z
    while s:
        low = s & -s
        q = low.bit_length() - 1
        s ^= low
        xb = (x >> q) & 1
        zb = (z >> q) & 1
        if xb and zb:
            w *= cy[q]
        elif xb:
            w *= cx[q]
        else:
            w *= cz[q]
        if w == 0.0:
            return 0.0
    return w


# The Monte Carlo engine runs each 256-sample chunk either one sample at a
# time (_run_program) or as a numpy batch over the whole chunk. The batch
# path packs the symplectic rows into uint64 lanes, so it only applies to
# noiseless circuits on at most 64 wires with the term loop active; both
# paths draw the same per-sample Philox angle streams and accumulate in the
# same order, so switching paths never changes the reported numbers beyond
# the per-term diagnostic's final rounding.
_VECTOR_PATH = True

_U0 = np.uint64(0)
_U1 = np.uint64(1)
_U2 = np.uint64(2)
_U3 = np.uint64(3)


def _vec_program(ops: list[tuple]) -> list[tuple]:
    """Pre-cast a compiled program's fields for the batched walk."""
    out: list[tuple] = []
    for op in ops:
        tag = op[0]
        if tag == _OP_ROT:
            _, gx, gz, j, k, mj = op
            if j < 0 and not (k & 1):
                continue  # even fixed quarter turns never flip anything
            out.append((tag, np.uint64(gx), np.uint64(gz), j, k, mj))
        elif tag == _OP_CLIFF2:
            _, qa, qb, table = op
            out.append(
                (tag, np.uint64(qa), np.uint64(qb), np.asarray(table, dtype=np.uint64))
            )
        else:
            _, q, table = op
            out.append((tag, np.uint64(q), np.asarray(table, dtype=np.uint64)))
    return out


def _run_program_batch(
    ops: list[tuple],
    x0: int,
    z0: int,
    odd: np.ndarray,
    gflags: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Propagate one term through a pre-cast program for a whole chunk.

    ``odd`` holds the angle parity bits, shape (samples, params); ``gflags``
    (samples, tracked) collects anticommute marks for tracked parameters.
    """
    n_samples = odd.shape[0]
    x = np.full(n_samples, np.uint64(x0))
    z = np.full(n_samples, np.uint64(z0))
    for op in ops:
        tag = op[0]
        if tag == _OP_ROT:
            _, gx, gz, j, k, mj = op
            anti = (
                (np.bitwise_count(x & gz) + np.bitwise_count(z & gx)) & _U1
            ).astype(bool)
            if j >= 0:
                if mj >= 0:
                    gflags[:, mj] |= anti
                flip = anti & odd[:, j]
            else:
                flip = anti  # odd fixed turns; even ones were dropped
            f = flip.view(np.uint8).astype(np.uint64)
            x = x ^ (gx * f)
            z = z ^ (gz * f)
        elif tag == _OP_CLIFF2:
            _, qa, qb, table = op
            idx = (
                ((x >> qa) & _U1)
                | (((x >> qb) & _U1) << _U1)
                | (((z >> qa) & _U1) << _U2)
                | (((z >> qb) & _U1) << _U3)
            )
            o = table[idx]
            clear = ~((_U1 << qa) | (_U1 << qb))
            x = (x & clear) | ((o & _U1) << qa) | (((o >> _U1) & _U1) << qb)
            z = (z & clear) | (((o >> _U2) & _U1) << qa) | (((o >> _U3) & _U1) << qb)
        else:
            _, q, table = op
            o = table[((x >> q) & _U1) | (((z >> q) & _U1) << _U1)]
            x = (x & ~(_U1 << q)) | ((o & _U1) << q)
            z = (z & ~(_U1 << q)) | (((o >> _U1) & _U1) << q)
    return x, z


def _overlap_lut(comps) -> np.ndarray:
    """Per-qubit overlap factors indexed by the 2-bit (x, z) letter code."""
    cx, cy, cz = comps
    lut = np.ones((len(cx), 4))
    for q in range(len(cx)):
        lut[q, 1] = cx[q]
        lut[q, 2] = cz[q]
        lut[q, 3] = cy[q]
    return lut


def _overlap_batch(x: np.ndarray, z: np.ndarray, lut: np.ndarray) -> np.ndarray:
    w = np.ones(x.shape[0])
    for q in range(lut.shape[0]):
        qq = np.uint64(q)
        idx = ((x >> qq) & _U1) | (((z >> qq) & _U1) << _U1)
        w *= lut[q][idx]
    return w


@dataclass(frozen=True)
class PathOutcome:
    """One sampled backward path of a single observable term."""

    survival_weight: float
    anticommute_mask: int  # bit j set iff the path anticommuted at param j
    attenuation_sq: float


def path_sample(
    c: Circuit,
    term: PauliWord,
    rng_stream: np.random.Generator,
    noise: NoiseModel | None = None,
) -> PathOutcome:
    """Draw one discrete angle assignment and propagate `term` backward."""
    if term.x >> c.n_system or term.z >> c.n_system:
        raise EstimatorError("term must be supported on system wires")
    report = full_lightcone(c, Observable(((1.0, term),)))
    ops = _compile_program(
        c, frozenset(report.term_gate_sets[0]), noise
    )
    angles = rng_stream.integers(0, 4, size=max(c.m, 1), dtype=np.uint8)
    x, z, mask, att = _run_program(ops, term.x, term.z, angles)
    overlap = _overlap(x, z, _input_components(c))
    return PathOutcome(
        survival_weight=overlap * overlap,
        anticommute_mask=mask,
        attenuation_sq=att * att,
    )


# ---------------------------------------------------------------------------
# Monte Carlo engine
# ---------------------------------------------------------------------------


def _chunk_ranges(n_samples: int):
    return [
        (start, min(start + CHUNK, n_samples))
        for start in range(0, n_samples, CHUNK)
    ]


def _mc_block(payload) -> list[tuple]:
    """Evaluate a block of sample chunks; used by worker processes too."""
    (c, obs, noise, seed, ranges, grads, term_loop_max) = payload
    report = full_lightcone(c, obs)
    mask_index = {j: gi for gi, j in enumerate(grads)}
    programs = [
        _compile_program(c, frozenset(gates), noise, mask_index)
        for gates in report.term_gate_sets
    ]
    comps = _input_components(c)
    coeffs_sq = [coeff * coeff for coeff, _ in obs.terms]
    words = [(word.x, word.z) for _, word in obs.terms]
    hs = obs.hs_norm_sq
    n_grads = len(grads)
    importance = len(obs.terms) > term_loop_max
    if importance:
        cum = []
        acc = 0.0
        for csq in coeffs_sq:
            acc += csq / hs
            cum.append(acc)
        cum[-1] = 1.0
    m = c.m
    if _VECTOR_PATH and noise is None and c.n <= 64 and not importance:
        return _mc_vector_chunks(
            programs, words, coeffs_sq, comps, m, seed, ranges, n_grads
        )
    partials = []
    for start, end in ranges:
        vals = []
        gvals = [[] for _ in range(n_grads)]
        per_term = [0.0] * len(words) if not importance else None
        for idx in range(start, end):
            rng = np.random.Generator(np.random.Philox(key=[seed, idx]))
            if importance:
                t = bisect_left(cum, rng.random())
                picks = [(t, hs)]
            else:
                picks = None
            angles = rng.integers(0, 4, size=max(m, 1), dtype=np.uint8)
            total = 0.0
            masked = [0.0] * n_grads
            for t, scale in picks or zip(range(len(words)), coeffs_sq):
                x0, z0 = words[t]
                x, z, mask, att = _run_program(programs[t], x0, z0, angles)
                ov = _overlap(x, z, comps)
                v = scale * ov * ov * att * att
                if v:
                    total += v
                    while mask:
                        low = mask & -mask
                        masked[low.bit_length() - 1] += v
                        mask ^= low
                    if per_term is not None:
                        per_term[t] += v
            vals.append(total)
            for gi in range(n_grads):
                gvals[gi].append(masked[gi])
        partials.append(
            (
                end - start,
                math.fsum(vals),
                math.fsum(v * v for v in vals),
                tuple(
                    (math.fsum(gv), math.fsum(v * v for v in gv))
                    for gv in gvals
                ),
                tuple(per_term) if per_term is not None else None,
            )
        )
    return partials


def _mc_vector_chunks(
    programs, words, coeffs_sq, comps, m, seed, ranges, n_grads
) -> list[tuple]:
    """Chunk loop of `_mc_block` with every term walked as a numpy batch."""
    vec_programs = [_vec_program(ops) for ops in programs]
    lut = _overlap_lut(comps)
    partials = []
    for start, end in ranges:
        take = end - start
        angles = np.empty((take, max(m, 1)), dtype=np.uint8)
        for i, idx in enumerate(range(start, end)):
            rng = np.random.Generator(np.random.Philox(key=[seed, idx]))
            angles[i] = rng.integers(0, 4, size=max(m, 1), dtype=np.uint8)
        odd = (angles & 1) != 0
        total = np.zeros(take)
        gmat = np.zeros((take, n_grads)) if n_grads else None
        per_term = []
        for t, scale in enumerate(coeffs_sq):
            x0, z0 = words[t]
            gflags = np.zeros((take, n_grads), dtype=bool) if n_grads else None
            x, z = _run_program_batch(vec_programs[t], x0, z0, odd, gflags)
            ov = _overlap_batch(x, z, lut)
            v = scale * ov * ov
            total += v
            if n_grads:
                gmat += v[:, None] * gflags
            per_term.append(math.fsum(v.tolist()))
        partials.append(
            (
                take,
                math.fsum(total.tolist()),
                math.fsum((total * total).tolist()),
                tuple(
                    (
                        math.fsum(gmat[:, gi].tolist()),
                        math.fsum((gmat[:, gi] * gmat[:, gi]).tolist()),
                    )
                    for gi in range(n_grads)
                ),
                tuple(per_term),
            )
        )
    return partials


def _mc_run(
    c: Circuit,
    obs: Observable,
    n_samples: int,
    noise: NoiseModel | None,
    seed: int,
    workers: int,
    grads: tuple[int, ...],
    term_loop_max: int,
):
    if n_samples <= 0:
        raise EstimatorError("need at least one sample")
    ranges = _chunk_ranges(n_samples)
    if workers <= 1 or len(ranges) == 1:
        blocks = [_mc_block((c, obs, noise, seed, ranges, grads, term_loop_max))]
    else:
        step = math.ceil(len(ranges) / workers)
        payloads = [
            (c, obs, noise, seed, ranges[i : i + step], grads, term_loop_max)
            for i in range(0, len(ranges), step)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_mc_block, payloads))
    partials = [p for block in blocks for p in block]
    n = sum(p[0] for p in partials)
    sum_v = math.fsum(p[1] for p in partials)
    sum_v2 = math.fsum(p[2] for p in partials)
    grad_sums = {
        j: (
            math.fsum(p[3][gi][0] for p in partials),
            math.fsum(p[3][gi][1] for p in partials),
        )
        for gi, j in enumerate(grads)
    }
    per_term = None
    if partials[0][4] is not None:
        per_term = tuple(
            math.fsum(p[4][t] for p in partials) / n
            for t in range(len(partials[0][4]))
        )
    return n, sum_v, sum_v2, grad_sums, per_term


def _stderr(n: int, total: float, total_sq: float) -> float:
    if n < 2:
        return 0.0
    mean = total / n
    var = max(0.0, (total_sq - n * mean * mean) / (n - 1))
    return math.sqrt(var / n)


def _split_scale(c: Circuit, obs: Observable, acknowledge: bool) -> float:
    """1.0 when the split condition holds, else the diagnostic multiplier."""
    if split_check(c, obs).splits:
        return 1.0
    if not acknowledge:
        raise EstimatorError(
            "observable terms share a commutation signature, so the sampled "
            "sum is not the variance; pass acknowledge_split_failure=True "
            "for an upper-bound-flavored diagnostic"
        )
    return obs.hs_norm_sq / obs.min_coeff_sq


def variance_mc(
    c: Circuit,
    obs: Observable,
    n_samples: int,
    noise: NoiseModel | None = None,
    seed: int = 0,
    workers: int = 1,
    acknowledge_split_failure: bool = False,
    term_loop_max: int = TERM_LOOP_MAX,
) -> EstimateResult:
    """Monte Carlo estimate of the loss variance over discrete angles."""
    scale = _split_scale(c, obs, acknowledge_split_failure)
    n, sum_v, sum_v2, _, per_term = _mc_run(
        c, obs, n_samples, noise, seed, workers, (), term_loop_max
    )
    mean = sum_v / n
    stderr = _stderr(n, sum_v, sum_v2)
    if scale == 1.0:
        mean = max(0.0, mean - mean_exact(c, obs, noise) ** 2)
    else:
        mean *= scale
        stderr *= scale
        per_term = (
            tuple(v * scale for v in per_term) if per_term is not None else None
        )
    return EstimateResult(
        mean=mean, stderr=stderr, samples=n, seed=seed, per_term=per_term
    )


def grad_variance_mc(
    c: Circuit,
    obs: Observable,
    j: int,
    n_samples: int,
    noise: NoiseModel | None = None,
    seed: int = 0,
    workers: int = 1,
    acknowledge_split_failure: bool = False,
    term_loop_max: int = TERM_LOOP_MAX,
) -> EstimateResult:
    """Monte Carlo estimate of Var of the loss derivative at parameter j."""
    _check_param(c, j)
    scale = _split_scale(c, obs, acknowledge_split_failure)
    n, _, _, grad_sums, _ = _mc_run(
        c, obs, n_samples, noise, seed, workers, (j,), term_loop_max
    )
    total, total_sq = grad_sums[j]
    return EstimateResult(
        mean=total / n * scale,
        stderr=_stderr(n, total, total_sq) * scale,
        samples=n,
        seed=seed,
    )


def variance_and_grads_mc(
    c: Circuit,
    obs: Observable,
    n_samples: int,
    params: tuple[int, ...] | None = None,
    noise: NoiseModel | None = None,
    seed: int = 0,
    workers: int = 1,
    acknowledge_split_failure: bool = False,
    term_loop_max: int = TERM_LOOP_MAX,
) -> tuple[EstimateResult, dict[int, EstimateResult]]:
    """One shared sample batch for the variance and every requested gradient."""
    grads = tuple(params) if params is not None else tuple(range(c.m))
    for j in grads:
        _check_param(c, j)
    scale = _split_scale(c, obs, acknowledge_split_failure)
    n, sum_v, sum_v2, grad_sums, per_term = _mc_run(
        c, obs, n_samples, noise, seed, workers, grads, term_loop_max
    )
    mean = sum_v / n
    stderr = _stderr(n, sum_v, sum_v2)
    if scale == 1.0:
        mean = max(0.0, mean - mean_exact(c, obs, noise) ** 2)
    else:
        mean *= scale
        stderr *= scale
        per_term = (
            tuple(v * scale for v in per_term) if per_term is not None else None
        )
    var = EstimateResult(
        mean=mean, stderr=stderr, samples=n, seed=seed, per_term=per_term
    )
    out = {
        j: EstimateResult(
            mean=grad_sums[j][0] / n * scale,
            stderr=_stderr(n, *grad_sums[j]) * scale,
            samples=n,
            seed=seed,
        )
        for j in grads
    }
    return var, out


def _check_param(c: Circuit, j: int) -> None:
    if not 0 <= j < c.m:
        raise EstimatorError(f"parameter {j} outside range(m={c.m})")


# ---------------------------------------------------------------------------
# exact engine: merging pair dynamic program
# ---------------------------------------------------------------------------


def _anti(x: int, z: int, gx: int, gz: int) -> int:
    return ((x & gz).bit_count() + (z & gx).bit_count()) & 1


def _side_branches(n, x, z, gen, angle_c, angle_s):
    """Linear expansion of one side crossing a rotation backward.

    Returns [(x, z, complex factor), ...]; callers drop zero factors.
    The backward image of an anticommuting word s is
    cos(theta) s - i sin(theta) (s @ P).
    """
    if not _anti(x, z, gen.x, gen.z):
        return [(x, z, 1.0)]
    out = []
    if angle_c:
        out.append((x, z, angle_c))
    if angle_s:
        prod = PauliWord(n, x, z).multiply(gen)
        out.append((prod.x, prod.z, -1j * angle_s * 1j**prod.phase_pow))
    return out


def _count_offgrid_fixed(c: Circuit) -> int:
    return sum(
        1
        for g in c.gates
        if g.kind == "rotation"
        and isinstance(g.param, FixedParam)
        and _quarter_turns(g.param.angle) is None
    )


def _check_exact_caps(c: Circuit, cap: int) -> None:
    if c.m > cap:
        suggestion = max(100_000, 200 * 4 ** min(c.m, 10))
        raise CapExceededError(
            f"m={c.m} exceeds the exact-engine cap ({cap}); use the Monte "
            f"Carlo engine (suggested n_samples >= {suggestion})"
        )
    b = _count_offgrid_fixed(c)
    if b > FIXED_SPLIT_CAP:
        raise UnsupportedAngleError(
            f"{b} fixed rotations sit off the quarter-turn grid; the exact "
            f"bilinear split handles at most {FIXED_SPLIT_CAP}"
        )


_DISCRETE_COS = {0: 1.0, 1: 0.0, 2: -1.0, 3: 0.0}
_DISCRETE_SIN = {0: 0.0, 1: 1.0, 2: 0.0, 3: -1.0}


def _fixed_trig(param: FixedParam) -> tuple[float, float]:
    k = _quarter_turns(param.angle)
    if k is not None:
        return _DISCRETE_COS[k], _DISCRETE_SIN[k]
    return math.cos(param.angle), math.sin(param.angle)


def _mean_dp(c: Circuit, obs: Observable, noise: NoiseModel | None) -> float:
    """Exact E[loss] over discrete angles via single-sided propagation."""
    n = c.n
    sites = noise.site_map() if noise else {}
    states: dict[tuple[int, int], complex] = {}
    for coeff, word in obs.terms:
        key = (word.x, word.z)
        states[key] = states.get(key, 0.0) + coeff * 1j**word.phase_pow
    for i in range(len(c.gates) - 1, -1, -1):
        if i in sites:
            ch = sites[i]
            states = {
                k: w * ch.attenuation(*k) for k, w in states.items()
            }
        g = c.gates[i]
        nxt: dict[tuple[int, int], complex] = {}
        if g.kind == "clifford":
            for (x, z), w in states.items():
                img = PauliWord(n, x, z).conjugate_clifford(g.name, g.qubits)
                key = (img.x, img.z)
                nxt[key] = nxt.get(key, 0.0) + w * 1j**img.phase_pow
        elif isinstance(g.param, FreeParam):
            gen = g.generator
            for (x, z), w in states.items():
                if not _anti(x, z, gen.x, gen.z):
                    nxt[(x, z)] = nxt.get((x, z), 0.0) + w
        else:
            gen = g.generator
            cos_t, sin_t = _fixed_trig(g.param)
            for (x, z), w in states.items():
                for bx, bz, f in _side_branches(n, x, z, gen, cos_t, sin_t):
                    key = (bx, bz)
                    nxt[key] = nxt.get(key, 0.0) + w * f
        states = {k: w for k, w in nxt.items() if w != 0}
    if -1 in sites:
        ch = sites[-1]
        states = {k: w * ch.attenuation(*k) for k, w in states.items()}
    comps = _input_components(c)
    total = sum(w * _overlap(x, z, comps) for (x, z), w in states.items())
    return float(total.real) if isinstance(total, complex) else float(total)


def _pair_dp(
    c: Circuit,
    obs: Observable,
    noise: NoiseModel | None,
    grad_j: int | None,
) -> float:
    """Exact E[loss^2] (or E[derivative^2] at grad_j) over discrete angles.

    The state is a weighted set of word pairs (a, b), both phase-normalized.
    Averaging over a shared uniform quarter-turn angle kills pairs where
    exactly one side anticommutes and splits both-anticommuting pairs into
    an equal-weight pair of branches; Fixed angles expand bilinearly with
    their actual trig values, which keeps cross-branch interference exact.
    """
    n = c.n
    sites = noise.site_map() if noise else {}
    states: dict[tuple[int, int, int, int], complex] = {}
    for ca, wa in obs.terms:
        for cb, wb in obs.terms:
            key = (wa.x, wa.z, wb.x, wb.z)
            weight = ca * cb * 1j ** ((wa.phase_pow + wb.phase_pow) % 4)
            states[key] = states.get(key, 0.0) + weight
    for i in range(len(c.gates) - 1, -1, -1):
        if i in sites:
            ch = sites[i]
            states = {
                k: w * ch.attenuation(k[0], k[1]) * ch.attenuation(k[2], k[3])
                for k, w in states.items()
            }
        g = c.gates[i]
        nxt: dict[tuple[int, int, int, int], complex] = {}
        if g.kind == "clifford":
            for (ax, az, bx, bz), w in states.items():
                ia = PauliWord(n, ax, az).conjugate_clifford(g.name, g.qubits)
                ib = PauliWord(n, bx, bz).conjugate_clifford(g.name, g.qubits)
                key = (ia.x, ia.z, ib.x, ib.z)
                phase = 1j ** ((ia.phase_pow + ib.phase_pow) % 4)
                nxt[key] = nxt.get(key, 0.0) + w * phase
        elif isinstance(g.param, FreeParam):
            gen = g.generator
            at_grad = grad_j is not None and g.param.index == grad_j
            for (ax, az, bx, bz), w in states.items():
                aa = _anti(ax, az, gen.x, gen.z)
                ab = _anti(bx, bz, gen.x, gen.z)
                if aa != ab:
                    continue
                if not aa:
                    if at_grad:
                        continue  # derivative vanishes on commuting paths
                    key = (ax, az, bx, bz)
                    nxt[key] = nxt.get(key, 0.0) + w
                    continue
                # shared-angle average: half stays, half moves to (aP, bP)
                key = (ax, az, bx, bz)
                nxt[key] = nxt.get(key, 0.0) + w * 0.5
                pa = PauliWord(n, ax, az).multiply(gen)
                pb = PauliWord(n, bx, bz).multiply(gen)
                key = (pa.x, pa.z, pb.x, pb.z)
                phase = 1j ** ((pa.phase_pow + pb.phase_pow) % 4)
                nxt[key] = nxt.get(key, 0.0) - w * 0.5 * phase
        else:
            gen = g.generator
            cos_t, sin_t = _fixed_trig(g.param)
            for (ax, az, bx, bz), w in states.items():
                for nax, naz, fa in _side_branches(n, ax, az, gen, cos_t, sin_t):
                    for nbx, nbz, fb in _side_branches(
                        n, bx, bz, gen, cos_t, sin_t
                    ):
                        key = (nax, naz, nbx, nbz)
                        nxt[key] = nxt.get(key, 0.0) + w * fa * fb
        states = {k: w for k, w in nxt.items() if w != 0}
    if -1 in sites:
        ch = sites[-1]
        states = {
            k: w * ch.attenuation(k[0], k[1]) * ch.attenuation(k[2], k[3])
            for k, w in states.items()
        }
    comps = _input_components(c)
    total = 0.0 + 0.0j
    for (ax, az, bx, bz), w in states.items():
        ova = _overlap(ax, az, comps)
        if ova == 0.0:
            continue
        ovb = _overlap(bx, bz, comps)
        if ovb:
            total += w * ova * ovb
    if abs(total.imag) > 1e-9 * max(1.0, abs(total.real)):
        raise EstimatorError("pair propagation produced a non-real average")
    return float(total.real)


def mean_exact(
    c: Circuit, obs: Observable, noise: NoiseModel | None = None
) -> float:
    """Exact discrete-angle average of the loss."""
    return _mean_dp(c, obs, noise)


def variance_exact(
    c: Circuit,
    obs: Observable,
    noise: NoiseModel | None = None,
    cap: int = EXACT_PARAM_CAP,
) -> float:
    """Exact loss variance over the discrete angle grid."""
    _check_exact_caps(c, cap)
    second = _pair_dp(c, obs, noise, grad_j=None)
    mean = _mean_dp(c, obs, noise)
    return max(0.0, second - mean * mean)


def grad_variance_exact(
    c: Circuit,
    obs: Observable,
    j: int,
    noise: NoiseModel | None = None,
    cap: int = EXACT_PARAM_CAP,
) -> float:
    """Exact variance of the loss derivative at parameter j.

    The derivative has zero mean over the discrete grid, so no mean
    correction is needed.
    """
    _check_param(c, j)
    _check_exact_caps(c, cap)
    return max(0.0, _pair_dp(c, obs, noise, grad_j=j))


# ---------------------------------------------------------------------------
# analytic lower bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    """Closed-form trainability guarantees for a gadget-bearing circuit.

    Noisy entries are the noiseless quantities times the listed attenuation
    factor, so they always sit at or below their noiseless partners and
    coincide with them at gamma = 0. The before-layer entry is a
    multiplicative factor on the original circuit's gradient variance, not
    an absolute bound.

    The per-parameter gradient entries hold for parameters whose gradient
    does not vanish identically: a rotation whose generator commutes with
    every backward image reachable at its position has exactly zero
    gradient, and no positive lower bound can apply to it. The activated
    entry likewise assumes the activation construction succeeded, which
    the activation routines enforce at build time.
    """

    variance_lower: float
    variance_lower_noisy: float
    grad_after_layer_lower: float
    grad_after_layer_lower_noisy: float
    grad_after_layer_per_param: dict[int, float]
    before_layer_factor: float
    activated_lower: float | None
    activated_lower_noisy: float | None
    inputs: dict = field(default_factory=dict)


def bounds(
    c: Circuit,
    obs: Observable,
    analysis: LightconeReport,
    op: OpModel,
    noise: NoiseModel | None = None,
    activation=None,
) -> BoundReport:
    """Evaluate every applicable closed-form lower bound.

    `analysis` must be the backward cone report computed at the circuit's
    gadget_layer mark; `op` supplies the ancilla overlap constant tau.
    """
    mark = c.marks.get("gadget_layer")
    if mark is None:
        raise EstimatorError("circuit is missing a gadget_layer mark")
    if analysis.position != mark:
        raise EstimatorError(
            f"cone analysis was taken at position {analysis.position}, "
            f"not at the gadget_layer mark {mark}"
        )
    gamma = noise.max_gamma if noise is not None else 0.0
    if gamma >= 0.5:
        raise EstimatorError(f"gamma {gamma} outside [0, 1/2)")
    tau = op.tau
    k_cone = analysis.k_max
    f_g = analysis.f_gadget
    hs = obs.hs_norm_sq
    mn = obs.min_coeff_sq
    base = (tau / 4.0) ** k_cone
    fade = 1.0 - 2.0 * gamma
    variance_lower = base * hs
    var_factor = fade ** (2 * (f_g + 4))
    grad_after = 0.5**f_g * base * mn
    after_factor = fade ** (f_g + 4)
    # The absolute per-parameter formula covers after-layer parameters only;
    # parameters with any gate below the mark fall under before_layer_factor.
    positions: dict[int, list[int]] = {}
    for i, g in enumerate(c.gates):
        if g.kind == "rotation" and isinstance(g.param, FreeParam):
            positions.setdefault(g.param.index, []).append(i)
    per_param = {
        j: 0.5**fj * base * mn
        for j, fj in sorted(analysis.f_param.items())
        if j in positions and all(i >= mark for i in positions[j])
    }
    before_factor = 0.25**k_cone * (mn / hs)
    record = activation if activation is not None else c.activation
    activated = None
    activated_noisy = None
    if record is not None:
        if record.kind == "single":
            activated = 0.5 ** (f_g + 8) * (tau / 4.0) ** (k_cone + 1) * mn
        else:
            activated = (
                0.5 ** (f_g + record.f_act + 8 * record.s)
                * (tau / 4.0) ** (k_cone + record.k_act)
                * mn
            )
        activated_noisy = activated * fade ** (f_g + 12)
    return BoundReport(
        variance_lower=variance_lower,
        variance_lower_noisy=variance_lower * var_factor,
        grad_after_layer_lower=grad_after,
        grad_after_layer_lower_noisy=grad_after * after_factor,
        grad_after_layer_per_param=per_param,
        before_layer_factor=before_factor,
        activated_lower=activated,
        activated_lower_noisy=activated_noisy,
        inputs={
            "tau": tau,
            "K": k_cone,
            "f_gadget": f_g,
            "f_act": getattr(record, "f_act", None),
            "s": getattr(record, "s", None),
            "k_act": getattr(record, "k_act", None),
            "gamma": gamma,
            "hs_norm_sq": hs,
            "min_coeff_sq": mn,
        },
    )
