"""Circuit intermediate representation, serialization, and static analysis.

A circuit is a flat, ordered list of gates over ``n_system + n_ancilla``
qubits. Gates are either named Clifford gates or Pauli rotations
``exp(-i*theta/2 * G)`` whose angle is a Free trainable parameter (dense
slot index) or a Fixed constant. Input states are per-qubit Bloch vectors
(product states only); the computational zero state is ``(0, 0, 1)``.

Analyses here are purely structural: backward light cones grown by
gate-support adjacency (a sound over-approximation of which qubits can
influence an observable term), the feedforward parameter counts derived
from those cones, the path-splitting check on conjugated generators, and
a closed-form gadget placement advisor for lattice circuits.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .pauli import CLIFFORD_ARITY, CLIFFORD_NAMES, PauliWord, inverse_gate_name

ZERO_BLOCH = (0.0, 0.0, 1.0)


class CircuitError(ValueError):
    """Raised on malformed circuits, observables, or analysis misuse."""


@dataclass(frozen=True)
class FreeParam:
    index: int


@dataclass(frozen=True)
class FixedParam:
    angle: float


@dataclass(frozen=True)
class Gate:
    """One gate: ``kind`` is "clifford" or "rotation".

    Clifford gates carry ``name`` and ``qubits``; rotations carry a
    ``generator`` Pauli word (its support is the gate's qubit set) and a
    ``param`` reference.
    """

    kind: str
    qubits: tuple[int, ...] = ()
    name: str | None = None
    generator: PauliWord | None = None
    param: FreeParam | FixedParam | None = None

    @staticmethod
    def clifford(name: str, qubits: tuple[int, ...]) -> "Gate":
        return Gate(kind="clifford", name=name.upper(), qubits=tuple(qubits))

    @staticmethod
    def rotation(generator: PauliWord, param: FreeParam | FixedParam) -> "Gate":
        return Gate(
            kind="rotation",
            qubits=generator.support,
            generator=generator,
            param=param,
        )

    @property
    def is_free_rotation(self) -> bool:
        return self.kind == "rotation" and isinstance(self.param, FreeParam)


@dataclass(frozen=True)
class ActivationRecord:
    """Metadata recorded by activation transforms for the bounds module."""

    kind: str  # "single" or "zone"
    s: int  # number of enlarged gadgets
    k_act: int  # fresh gadget count (zone support size; 1 for single)
    f_act: int  # Free rotations of the original circuit inside the zone
    target_params: tuple[int, ...]  # activated parameter indices
    new_params: tuple[int, ...]  # parameter indices introduced by the transform


@dataclass(frozen=True)
class Circuit:
    n_system: int
    n_ancilla: int = 0
    gates: tuple[Gate, ...] = ()
    input_state: tuple[tuple[float, float, float], ...] = ()
    marks: dict[str, int] = field(default_factory=dict)
    activation: ActivationRecord | None = None

    @property
    def n(self) -> int:
        return self.n_system + self.n_ancilla

    @property
    def m(self) -> int:
        """Number of Free parameters."""
        best = -1
        for g in self.gates:
            if g.is_free_rotation:
                best = max(best, g.param.index)
        return best + 1

    def bloch(self, q: int) -> tuple[float, float, float]:
        if q < len(self.input_state):
            return self.input_state[q]
        return ZERO_BLOCH

    def full_input(self) -> tuple[tuple[float, float, float], ...]:
        return tuple(self.bloch(q) for q in range(self.n))


@dataclass(frozen=True)
class Observable:
    """Weighted sum of Pauli words over the system register."""

    terms: tuple[tuple[float, PauliWord], ...]

    @property
    def hs_norm_sq(self) -> float:
        return sum(c * c for c, _ in self.terms)

    @property
    def min_abs_coeff(self) -> float:
        return min(abs(c) for c, _ in self.terms)

    @property
    def min_coeff_sq(self) -> float:
        m = self.min_abs_coeff
        return m * m


DEFAULT_TERM_CAP_FACTOR = 10  # cap = factor * n^2


def make_observable(
    terms, n: int, term_cap: int | None = None
) -> Observable:
    """Build an observable from ``(coeff, pauli)`` pairs.

    Duplicate Pauli words are merged, zero coefficients rejected, and the
    term count checked against the polynomial budget (default ``10*n^2``).
    ``pauli`` entries may be PauliWord objects or text.
    """
    merged: dict[tuple[int, int], float] = {}
    order: list[tuple[int, int]] = []
    for coeff, word in terms:
        if isinstance(word, str):
            word = PauliWord.from_text(word, n)
        if word.n != n:
            word = PauliWord(n, word.x, word.z)
        if (word.x | word.z) >> n:
            raise CircuitError(f"observable term {word.to_text()} exceeds {n} qubits")
        if coeff == 0:
            raise CircuitError("observable coefficients must be nonzero")
        key = (word.x, word.z)
        if key not in merged:
            order.append(key)
            merged[key] = 0.0
        merged[key] += float(coeff)
    out = []
    for key in order:
        c = merged[key]
        if c != 0.0:
            out.append((c, PauliWord(n, key[0], key[1])))
    if not out:
        raise CircuitError("observable is empty after merging")
    cap = DEFAULT_TERM_CAP_FACTOR * n * n if term_cap is None else term_cap
    if len(out) > cap:
        raise CircuitError(
            f"observable has {len(out)} terms, exceeding the cap {cap}; "
            "raise term_cap explicitly if intended"
        )
    return Observable(tuple(out))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def validate_circuit(c: Circuit) -> None:
    """Raise CircuitError (with gate index and reason) on any violation."""
    problems: list[str] = []
    if c.n_system < 1:
        problems.append("n_system must be at least 1")
    if c.n_ancilla < 0:
        problems.append("n_ancilla must be nonnegative")
    n = c.n
    seen: dict[int, int] = {}
    for i, g in enumerate(c.gates):
        if g.kind == "clifford":
            if g.name not in CLIFFORD_NAMES:
                problems.append(f"gate {i}: unknown Clifford name {g.name!r}")
                continue
            if len(g.qubits) != CLIFFORD_ARITY[g.name]:
                problems.append(f"gate {i}: {g.name} takes {CLIFFORD_ARITY[g.name]} qubits")
            if len(set(g.qubits)) != len(g.qubits):
                problems.append(f"gate {i}: repeated qubit in {g.qubits}")
            for q in g.qubits:
                if not 0 <= q < n:
                    problems.append(f"gate {i}: qubit {q} out of range for n={n}")
        elif g.kind == "rotation":
            if g.generator is None or g.generator.is_identity:
                problems.append(f"gate {i}: rotation generator must be nonidentity")
                continue
            if (g.generator.x | g.generator.z) >> n:
                problems.append(f"gate {i}: generator exceeds n={n} qubits")
            if g.generator.phase_pow % 4 != 0:
                problems.append(f"gate {i}: generator must be a plain Hermitian word")
            if isinstance(g.param, FreeParam):
                if g.param.index < 0:
                    problems.append(f"gate {i}: negative parameter index")
                elif g.param.index in seen:
                    problems.append(
                        f"gate {i}: Free index {g.param.index} already used by gate "
                        f"{seen[g.param.index]}"
                    )
                else:
                    seen[g.param.index] = i
            elif not isinstance(g.param, FixedParam):
                problems.append(f"gate {i}: rotation needs a Free or Fixed param")
        else:
            problems.append(f"gate {i}: unknown gate kind {g.kind!r}")
    if seen:
        missing = sorted(set(range(max(seen) + 1)) - set(seen))
        if missing:
            problems.append(f"Free indices have gaps: missing {missing}")
    if len(c.input_state) > n:
        problems.append("input_state longer than qubit count")
    for q, r in enumerate(c.input_state):
        if len(r) != 3:
            problems.append(f"input_state[{q}] must be a Bloch triple")
        elif r[0] * r[0] + r[1] * r[1] + r[2] * r[2] > 1.0 + 1e-9:
            problems.append(f"input_state[{q}] has Bloch norm > 1")
    for name, pos in c.marks.items():
        if not 0 <= pos <= len(c.gates):
            problems.append(f"mark {name!r} = {pos} outside the gate list")
    if problems:
        raise CircuitError("; ".join(problems))


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def canonical_input(
    rows: tuple[tuple[float, float, float], ...]
) -> tuple[tuple[float, float, float], ...]:
    """Strip trailing zero-state triples so round trips are structural."""
    out = list(rows)
    while out and tuple(out[-1]) == ZERO_BLOCH:
        out.pop()
    return tuple(tuple(r) for r in out)


def circuit_to_dict(c: Circuit) -> dict:
    gates = []
    for g in c.gates:
        if g.kind == "clifford":
            gates.append({"type": "clifford", "name": g.name, "qubits": list(g.qubits)})
        else:
            if isinstance(g.param, FreeParam):
                param = {"free": g.param.index}
            else:
                param = {"fixed": g.param.angle}
            gates.append(
                {"type": "rotation", "generator": g.generator.to_text(), "param": param}
            )
    doc = {
        "n_system": c.n_system,
        "n_ancilla": c.n_ancilla,
        "input_state": [list(r) for r in canonical_input(c.input_state)],
        "gates": gates,
        "marks": dict(c.marks),
    }
    if c.activation is not None:
        a = c.activation
        doc["activation"] = {
            "kind": a.kind,
            "s": a.s,
            "k_act": a.k_act,
            "f_act": a.f_act,
            "target_params": list(a.target_params),
            "new_params": list(a.new_params),
        }
    return doc


def circuit_from_dict(doc: dict) -> Circuit:
    try:
        n_system = int(doc["n_system"])
        n_ancilla = int(doc.get("n_ancilla", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise CircuitError(f"bad circuit header: {exc}") from exc
    n = n_system + n_ancilla
    gates = []
    for i, g in enumerate(doc.get("gates", [])):
        kind = g.get("type")
        if kind == "clifford":
            gates.append(Gate.clifford(str(g["name"]), tuple(int(q) for q in g["qubits"])))
        elif kind == "rotation":
            gen = PauliWord.from_text(str(g["generator"]), n)
            p = g.get("param")
            if not isinstance(p, dict) or len(p) != 1:
                raise CircuitError(f"gate {i}: param must be {{'free': i}} or {{'fixed': angle}}")
            if "free" in p:
                param = FreeParam(int(p["free"]))
            elif "fixed" in p:
                param = FixedParam(float(p["fixed"]))
            else:
                raise CircuitError(f"gate {i}: param must be 'free' or 'fixed'")
            gates.append(Gate.rotation(gen, param))
        else:
            raise CircuitError(f"gate {i}: unknown type {kind!r}")
    input_state = canonical_input(
        tuple(tuple(float(v) for v in r) for r in doc.get("input_state", []))
    )
    marks = {str(k): int(v) for k, v in doc.get("marks", {}).items()}
    activation = None
    if "activation" in doc:
        a = doc["activation"]
        activation = ActivationRecord(
            kind=str(a["kind"]),
            s=int(a["s"]),
            k_act=int(a["k_act"]),
            f_act=int(a["f_act"]),
            target_params=tuple(int(v) for v in a["target_params"]),
            new_params=tuple(int(v) for v in a["new_params"]),
        )
    c = Circuit(
        n_system=n_system,
        n_ancilla=n_ancilla,
        gates=tuple(gates),
        input_state=input_state,
        marks=marks,
        activation=activation,
    )
    validate_circuit(c)
    return c


def parse_circuit(text: str) -> Circuit:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CircuitError(f"invalid JSON: {exc}") from exc
    return circuit_from_dict(doc)


def serialize_circuit(c: Circuit) -> str:
    return json.dumps(circuit_to_dict(c), indent=2)


def load_circuit(path: str) -> Circuit:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_circuit(fh.read())


def save_circuit(c: Circuit, path: str) -> None:
    from ._io import atomic_write_text

    atomic_write_text(path, serialize_circuit(c) + "\n")


def observable_to_dict(obs: Observable) -> dict:
    return {"terms": [{"coeff": c, "pauli": w.to_text()} for c, w in obs.terms]}


def observable_from_dict(doc: dict, n: int, term_cap: int | None = None) -> Observable:
    try:
        pairs = [(float(t["coeff"]), str(t["pauli"])) for t in doc["terms"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise CircuitError(f"bad observable document: {exc}") from exc
    return make_observable(pairs, n, term_cap=term_cap)


def load_observable(path: str, n: int, term_cap: int | None = None) -> Observable:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return observable_from_dict(doc, n, term_cap=term_cap)


# ---------------------------------------------------------------------------
# light cones and feedforward counts
# ---------------------------------------------------------------------------


def _gate_mask(g: Gate) -> int:
    mask = 0
    for q in g.qubits:
        mask |= 1 << q
    return mask


@dataclass(frozen=True)
class LightconeReport:
    """Backward-cone analysis of every observable term at one position."""

    position: int
    term_supports: tuple[int, ...]  # per-term qubit mask at `position`
    term_gate_sets: tuple[tuple[int, ...], ...]  # per-term cone gate indices
    k_max: int  # max support size over terms
    f_gadget: int  # Free rotations in any cone strictly after `position`
    f_param: dict[int, int]  # f_{j} per Free parameter index

    def support_qubits(self, t: int) -> tuple[int, ...]:
        mask = self.term_supports[t]
        return tuple(q for q in range(mask.bit_length()) if (mask >> q) & 1)


def backward_lightcone(c: Circuit, obs: Observable, position: int) -> LightconeReport:
    """Grow each term's support backward from the end down to ``position``.

    A gate joins a term's cone iff its qubit set intersects the running
    support, in which case the support absorbs the gate's qubits. K is the
    maximum support size when ``position`` is reached; ``f_gadget`` counts
    Free rotations inside any cone at gate indices >= ``position``;
    ``f_param[j]`` is the maximum, over cones containing parameter ``j``'s
    gate, of the number of Free rotations strictly later in that cone
    (0 when no cone contains it).
    """
    if not 0 <= position <= len(c.gates):
        raise CircuitError(f"position {position} outside the gate list")
    masks = [_gate_mask(g) for g in c.gates]
    supports = []
    gate_sets = []
    f_gadget = 0
    f_param: dict[int, int] = {
        g.param.index: 0 for g in c.gates if g.is_free_rotation
    }
    for coeff, word in obs.terms:
        support = word.x | word.z
        cone: list[int] = []
        free_after: list[int] = []  # cone gate indices that are Free rotations
        for i in range(len(c.gates) - 1, position - 1, -1):
            if masks[i] & support:
                support |= masks[i]
                cone.append(i)
                if c.gates[i].is_free_rotation:
                    free_after.append(i)
        supports.append(support)
        gate_sets.append(tuple(reversed(cone)))
        f_gadget = max(f_gadget, len(free_after))
        # free_after is in descending gate order, so an entry's position in
        # the list equals the number of Free rotations strictly later in
        # this cone; that position is the feedforward count for its param
        for later, fi in enumerate(free_after):
            j = c.gates[fi].param.index
            if later > f_param[j]:
                f_param[j] = later
    return LightconeReport(
        position=position,
        term_supports=tuple(supports),
        term_gate_sets=tuple(gate_sets),
        k_max=max(s.bit_count() for s in supports) if supports else 0,
        f_gadget=f_gadget,
        f_param=f_param,
    )


def full_lightcone(c: Circuit, obs: Observable) -> LightconeReport:
    """Cone analysis swept to the circuit input (position 0)."""
    return backward_lightcone(c, obs, 0)


# ---------------------------------------------------------------------------
# split condition
# ---------------------------------------------------------------------------


def conjugated_generators(c: Circuit) -> list[PauliWord]:
    """Each rotation generator pushed forward through all later Clifford gates.

    Rotations later in the list do not transform the generator (only the
    Clifford structure does); the result is the set of words whose
    commutation signatures decide path splitting. The forward map
    ``h w h^dag`` is obtained by conjugating with the inverse gate name.
    """
    # Walk backward so each generator only meets the Cliffords collected so
    # far (those later in the circuit), applied in circuit order.
    out_rev: list[PauliWord] = []
    later_cliffords: list[Gate] = []
    for g in reversed(c.gates):
        if g.kind == "clifford":
            later_cliffords.append(g)
            continue
        word = g.generator
        for h in reversed(later_cliffords):
            word = word.conjugate_clifford(inverse_gate_name(h.name), h.qubits)
        out_rev.append(word)
    out_rev.reverse()
    return out_rev


def _gf2_rank_full_group(words: list[PauliWord], n: int) -> bool:
    """True iff the words generate the full n-qubit Pauli group mod phases.

    Each word is a row (x|z) over GF(2); full generation is rank == 2n.
    """
    rows = [w.x | (w.z << n) for w in words]
    rank = 0
    pivots: list[int] = []
    for row in rows:
        for p in pivots:
            row = min(row, row ^ p)
        if row:
            pivots.append(row)
            rank += 1
    return rank == 2 * n


@dataclass(frozen=True)
class SplitReport:
    splits: bool
    witness: tuple[int, int] | None  # indices of a colliding term pair
    generates_full_group: bool


def split_check(c: Circuit, obs: Observable) -> SplitReport:
    """Check that distinct observable terms have distinct commutation signatures.

    The signature of a term is its commute/anticommute bit vector against
    every conjugated generator. Distinct signatures make the discrete-angle
    path cross terms vanish, so the variance sum factorizes per term.
    """
    if not any(g.kind == "rotation" for g in c.gates):
        raise CircuitError("split check needs at least one rotation gate")
    gens = conjugated_generators(c)
    n = c.n
    sigs: dict[tuple[int, ...], int] = {}
    witness = None
    for t, (coeff, word) in enumerate(obs.terms):
        lifted = PauliWord(n, word.x, word.z)
        sig = tuple(0 if lifted.commutes(g) else 1 for g in gens)
        if sig in sigs:
            witness = (sigs[sig], t)
            break
        sigs[sig] = t
    return SplitReport(
        splits=witness is None,
        witness=witness,
        generates_full_group=_gf2_rank_full_group(gens, n),
    )


# ---------------------------------------------------------------------------
# placement advisor
# ---------------------------------------------------------------------------


def placement_advisor(d: int, v: float, k: int, n: int, tail_depth: int | None = None) -> dict:
    """Recommend how far from the end to insert the gadget layer.

    For a depth-D circuit on a d-dimensional lattice with operator
    spreading velocity ``v`` and a k-local observable, a tail depth
    ``t = ceil((log2 n)^(1/(d+1)))`` keeps both the cone width
    ``K ~ k*(2*v*t/d)^d`` and the feedforward count
    ``f ~ k * 2^(d-1) * v^d / ((d+1) * d^d) * t^(d+1)`` polylogarithmic.
    """
    if d < 1:
        raise CircuitError("lattice dimension must be >= 1")
    if not 0.0 <= v <= 1.0:
        raise CircuitError("spreading velocity must lie in [0, 1]")
    if k < 1 or n < 2:
        raise CircuitError("locality and qubit count must be positive (n >= 2)")
    t = tail_depth if tail_depth is not None else math.ceil(math.log2(n) ** (1.0 / (d + 1)))
    spread = (2.0 * v * t / d) ** d
    predicted_k = k * max(1.0, spread)
    predicted_f = k * (2.0 ** (d - 1)) * (v ** d) / ((d + 1) * (d ** d)) * (t ** (d + 1))
    return {
        "recommended_tail_depth": t,
        "predicted_K": predicted_k,
        "predicted_f": predicted_f,
    }
