"""Circuit transforms that remove barren plateaus.

The central move is the gadget: a fresh ancilla prepared by an ``op``
model, coupled to one system wire through three trainable rotations with
generators XX, YY, ZZ. A full layer of gadgets (one per system wire)
spliced into a circuit turns a PQC into an MPQC whose loss variance has a
dimension-independent floor. Activation transforms extend that floor to
the gradient of a chosen parameter (or of every parameter inside an
activation zone) by inserting one more gadget next to the targeted
rotation and enlarging one existing gadget.

All transforms are pure: they return new circuits, never mutate, preserve
existing Free parameter indices, and append new ones densely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import (
    ActivationRecord,
    Circuit,
    CircuitError,
    FixedParam,
    FreeParam,
    Gate,
    Observable,
    canonical_input,
    validate_circuit,
)
from .pauli import PauliWord

FIXED_OPTIMAL_BLOCH = (1.0 / math.sqrt(3.0),) * 3
ZERO_BLOCH = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class OpModel:
    """Ancilla preparation model for gadgets.

    ``fixed_optimal`` prepares the Bloch vector (1,1,1)/sqrt(3), which
    maximizes the worst-case single-Pauli overlap (tau = 1/3) with no new
    parameters. ``trainable_rxry`` starts the ancilla at |0> and trains
    R_X then R_Y on it, with a guaranteed tau accounting of 1/4.
    """

    kind: str

    @property
    def trainable(self) -> bool:
        return self.kind == "trainable_rxry"

    @property
    def tau(self) -> float:
        return 0.25 if self.trainable else 1.0 / 3.0

    @property
    def ancilla_bloch(self) -> tuple[float, float, float]:
        return ZERO_BLOCH if self.trainable else FIXED_OPTIMAL_BLOCH

    @property
    def params_per_gadget(self) -> int:
        return 2 if self.trainable else 0


FIXED_OPTIMAL = OpModel("fixed_optimal")
TRAINABLE_RXRY = OpModel("trainable_rxry")

_OP_NAMES = {
    "fixed": FIXED_OPTIMAL,
    "fixed_optimal": FIXED_OPTIMAL,
    "trainable": TRAINABLE_RXRY,
    "trainable_rxry": TRAINABLE_RXRY,
}


def op_model(name: str) -> OpModel:
    try:
        return _OP_NAMES[name.lower()]
    except KeyError:
        raise CircuitError(f"unknown op model {name!r}; use fixed or trainable") from None


@dataclass(frozen=True)
class GadgetSpec:
    """One gadget: ancilla wire, host system wire, op model, parameters.

    ``params`` holds the Free indices of the R_XX, R_YY, R_ZZ rotations in
    that gate order; ``op_params`` the (R_X, R_Y) indices for a trainable
    op, empty otherwise.
    """

    system_qubit: int
    ancilla: int
    op: OpModel
    params: tuple[int, int, int]
    op_params: tuple[int, ...] = ()


class ActivationInfeasible(CircuitError):
    """No wire qualified during the activation probe."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


def _lift_gates(gates, n: int) -> list[Gate]:
    """Re-key rotation generators to an n-qubit register (masks unchanged)."""
    out = []
    for g in gates:
        if g.kind == "rotation" and g.generator.n != n:
            out.append(
                Gate.rotation(
                    PauliWord(n, g.generator.x, g.generator.z, g.generator.phase_pow),
                    g.param,
                )
            )
        else:
            out.append(g)
    return out


def _pair_rot(letter: str, a: int, b: int, n: int, idx: int) -> Gate:
    gen = PauliWord.from_text(f"{letter}{a} {letter}{b}", n)
    return Gate.rotation(gen, FreeParam(idx))


def _single_rot(letter: str, q: int, n: int, idx: int) -> Gate:
    return Gate.rotation(PauliWord.from_text(f"{letter}{q}", n), FreeParam(idx))


def insert_gadget_layer(
    c: Circuit, position: int | None = None, op: OpModel = FIXED_OPTIMAL
) -> Circuit:
    """Splice one gadget per system wire at ``position`` (default: the end).

    The block layout is row major: all trainable op rotations first (R_X
    then R_Y per ancilla, for a trainable op), then the full R_XX row, the
    R_YY row, and the R_ZZ row. Gadget i couples system wire i to ancilla
    n_system + i. New Free indices continue densely after the existing
    ones, in block gate order. Marks "gadget_start" (first block gate) and
    "gadget_layer" (first index after the block) are set.
    """
    validate_circuit(c)
    if c.n_ancilla:
        raise CircuitError("circuit already has ancillas; gadget layer goes on a plain PQC")
    pos = len(c.gates) if position is None else position
    if not 0 <= pos <= len(c.gates):
        raise CircuitError(f"position {pos} outside the gate list")
    n = c.n_system
    total = 2 * n
    next_idx = c.m
    block: list[Gate] = []
    if op.trainable:
        for i in range(n):
            block.append(_single_rot("X", n + i, total, next_idx))
            block.append(_single_rot("Y", n + i, total, next_idx + 1))
            next_idx += 2
    for letter in "XYZ":
        for i in range(n):
            block.append(_pair_rot(letter, n + i, i, total, next_idx))
            next_idx += 1
    gates = _lift_gates(c.gates[:pos], total) + block + _lift_gates(c.gates[pos:], total)
    marks = {k: (v + len(block) if v > pos else v) for k, v in c.marks.items()}
    marks["gadget_start"] = pos
    marks["gadget_layer"] = pos + len(block)
    input_state = canonical_input(
        tuple(c.bloch(q) for q in range(n)) + (op.ancilla_bloch,) * n
    )
    out = Circuit(
        n_system=n,
        n_ancilla=n,
        gates=tuple(gates),
        input_state=input_state,
        marks=marks,
    )
    validate_circuit(out)
    return out


def gadget_layout(c: Circuit) -> list[GadgetSpec]:
    """Reconstruct the per-wire GadgetSpec list from the marked block."""
    try:
        gs, gl = c.marks["gadget_start"], c.marks["gadget_layer"]
    except KeyError:
        raise CircuitError("circuit has no gadget_start/gadget_layer marks") from None
    by_ancilla: dict[int, dict] = {}
    for g in c.gates[gs:gl]:
        if g.kind != "rotation" or not isinstance(g.param, FreeParam):
            continue
        sup = g.generator.support
        if len(sup) == 2:
            a = max(sup)
            s = min(sup)
            if a < c.n_system:
                continue
            letter = g.generator.letter(a)
            entry = by_ancilla.setdefault(a, {"system": s, "rot": {}, "op": []})
            entry["system"] = s
            entry["rot"][letter] = g.param.index
        elif len(sup) == 1 and sup[0] >= c.n_system:
            entry = by_ancilla.setdefault(sup[0], {"system": None, "rot": {}, "op": []})
            entry["op"].append(g.param.index)
    specs = []
    for a, entry in by_ancilla.items():
        if set(entry["rot"]) != {"X", "Y", "Z"} or entry["system"] is None:
            raise CircuitError(f"gadget block on ancilla {a} is incomplete")
        bloch = c.bloch(a)
        fixed = all(abs(v - FIXED_OPTIMAL_BLOCH[0]) < 1e-9 for v in bloch)
        specs.append(
            GadgetSpec(
                system_qubit=entry["system"],
                ancilla=a,
                op=FIXED_OPTIMAL if fixed else TRAINABLE_RXRY,
                params=(entry["rot"]["X"], entry["rot"]["Y"], entry["rot"]["Z"]),
                op_params=tuple(entry["op"]),
            )
        )
    specs.sort(key=lambda s: s.system_qubit)
    return specs


# ---------------------------------------------------------------------------
# gadget backward conjugation
# ---------------------------------------------------------------------------

_GADGET_GENS = {
    1: PauliWord.from_text("X0 X1", 2),
    2: PauliWord.from_text("Y0 Y1", 2),
    3: PauliWord.from_text("Z0 Z1", 2),
}


def gadget_backpropagate(p_out: str | PauliWord, quarter_turns: tuple[int, int, int]) -> PauliWord:
    """Push a system-wire Pauli backward through one gadget's rotations.

    ``p_out`` is the single-qubit Pauli arriving at the gadget's system
    wire from later in the circuit; the result is the two-qubit word on
    (ancilla, system) = (qubit 0, qubit 1) after conjugating through
    R_ZZ(k3 pi/2), then R_YY(k2 pi/2), then R_XX(k1 pi/2), which is the
    backward order of the block. Phases are tracked exactly.
    """
    if isinstance(p_out, str):
        letter = p_out.strip().upper()
        if letter not in "IXYZ" or len(letter) != 1:
            raise CircuitError(f"p_out must be one of I, X, Y, Z, got {p_out!r}")
        word = PauliWord.identity(2) if letter == "I" else PauliWord.from_text(f"{letter}1", 2)
    else:
        word = PauliWord(2, p_out.x, p_out.z, p_out.phase_pow)
    k1, k2, k3 = quarter_turns
    word = word.conjugate_rotation_discrete(_GADGET_GENS[3], k3)
    word = word.conjugate_rotation_discrete(_GADGET_GENS[2], k2)
    word = word.conjugate_rotation_discrete(_GADGET_GENS[1], k1)
    return word


# ---------------------------------------------------------------------------
# activation
# ---------------------------------------------------------------------------


def _discrete_k(angle: float) -> int | None:
    k = round(angle / (math.pi / 2.0))
    if abs(angle - k * math.pi / 2.0) < 1e-9:
        return k % 4
    return None


def _probe_wire_counts(
    c: Circuit, obs: Observable, budget: int, seed: int
) -> dict[int, int]:
    """How often each system wire carries a nontrivial Pauli at the mark.

    Each trial picks a random observable term and random discrete angles,
    then propagates the term backward from the circuit end to the
    gadget_layer mark. Fixed rotations at non-discrete angles branch
    randomly (either trig branch is explored with probability 1/2).
    """
    mark = c.marks["gadget_layer"]
    rng = np.random.default_rng(seed)
    sys_mask = (1 << c.n_system) - 1
    counts: dict[int, int] = {q: 0 for q in range(c.n_system)}
    for _ in range(budget):
        coeff, word = obs.terms[rng.integers(0, len(obs.terms))]
        word = PauliWord(c.n, word.x, word.z)
        for i in range(len(c.gates) - 1, mark - 1, -1):
            g = c.gates[i]
            if g.kind == "clifford":
                word = word.conjugate_clifford(g.name, g.qubits)
                continue
            gen = PauliWord(c.n, g.generator.x, g.generator.z)
            if word.commutes(gen):
                continue
            if isinstance(g.param, FreeParam):
                k = int(rng.integers(0, 4))
            else:
                k = _discrete_k(g.param.angle)
                if k is None:
                    k = int(rng.integers(0, 2))  # random trig branch
            word = word.conjugate_rotation_discrete(gen, k)
        reach = (word.x | word.z) & sys_mask
        for q in range(c.n_system):
            if (reach >> q) & 1:
                counts[q] += 1
    return counts


def _require_gadget_marks(c: Circuit) -> tuple[int, int]:
    if "gadget_start" not in c.marks or "gadget_layer" not in c.marks:
        raise CircuitError("transform requires gadget_start/gadget_layer marks")
    return c.marks["gadget_start"], c.marks["gadget_layer"]


def _shift_marks(marks: dict[str, int], insertions: list[int], removals: list[int]) -> dict[str, int]:
    """Adjust boundary marks for gates inserted at / removed from indices.

    ``insertions`` lists old-list boundary indices at which one gate was
    placed; a mark strictly greater than the boundary shifts up. Removals
    shift marks above them down.
    """
    out = {}
    for name, v in marks.items():
        nv = v
        nv += sum(1 for b in insertions if v > b)
        nv -= sum(1 for r in removals if v > r)
        out[name] = nv
    return out


def activate_single(
    c: Circuit,
    target: int,
    obs: Observable | None = None,
    probe_budget: int = 256,
    probe_seed: int = 2026,
) -> Circuit:
    """Give one pre-layer rotation parameter a guaranteed gradient floor.

    Inserts a fresh gadget (new ancilla) on the target rotation's wire
    immediately before it, and enlarges one existing gadget: its op moves
    next to the target and three new two-qubit rotations (XX, YY, ZZ
    generators) couple its ancilla to the target wire right after the
    target gate. The enlarged gadget is chosen by probing which system
    wire the observable actually reaches at the gadget layer (preferring
    the target's own wire; falling back to a cross-wire construction).
    With no observable given, the target's own gadget is enlarged.
    """
    validate_circuit(c)
    gs, gl = _require_gadget_marks(c)
    if not 0 <= target < len(c.gates):
        raise CircuitError(f"target {target} outside the gate list")
    tgate = c.gates[target]
    if not tgate.is_free_rotation:
        raise CircuitError(f"gate {target} is not a Free rotation")
    if target >= gs:
        raise CircuitError("target must sit before the gadget layer")
    if tgate.generator.weight != 1:
        raise CircuitError("activation targets a single-qubit rotation")
    t_wire = tgate.generator.support[0]

    layout = {spec.system_qubit: spec for spec in gadget_layout(c)}
    if t_wire not in layout:
        raise CircuitError(f"no gadget found on wire {t_wire}")

    if obs is None:
        wire = t_wire
    else:
        counts = _probe_wire_counts(c, obs, probe_budget, probe_seed)
        if counts[t_wire] > 0:
            wire = t_wire
        else:
            best = max(counts, key=lambda q: counts[q])
            if counts[best] == 0:
                raise ActivationInfeasible(
                    "observable never reaches the system register at the gadget layer",
                    diagnostics={"wire_counts": counts, "budget": probe_budget},
                )
            wire = best

    enlarged = layout[wire]
    a_e = enlarged.ancilla
    total = c.n + 1
    a_f = c.n
    m0 = c.m
    nxt = m0

    fresh: list[Gate] = []
    op = enlarged.op
    if op.trainable:
        fresh.append(_single_rot("X", a_f, total, nxt))
        fresh.append(_single_rot("Y", a_f, total, nxt + 1))
        nxt += 2
    for letter in "XYZ":
        fresh.append(_pair_rot(letter, a_f, t_wire, total, nxt))
        nxt += 1

    removed: list[int] = []
    if op.trainable:
        # relocate the enlarged gadget's op rotations next to the target;
        # they act on the ancilla alone, so crossing the system-only gates
        # in between changes nothing
        removed = [
            i
            for i in range(gs, gl)
            if c.gates[i].is_free_rotation
            and c.gates[i].generator.weight == 1
            and c.gates[i].generator.support[0] == a_e
        ]
    old = _lift_gates(c.gates, total)
    after: list[Gate] = [old[i] for i in removed]
    for letter in "XYZ":
        after.append(_pair_rot(letter, a_e, t_wire, total, nxt))
        nxt += 1

    gates: list[Gate] = []
    for i, g in enumerate(old):
        if i in removed:
            continue
        if i == target:
            gates.extend(fresh)
            gates.append(g)
            gates.extend(after)
        else:
            gates.append(g)

    inserted = len(fresh) + len(after)
    marks = _shift_marks(c.marks, [target] * inserted, removed)
    marks["gadget_start"] = gs + inserted
    marks["gadget_layer"] = gl + inserted - len(removed)
    record = ActivationRecord(
        kind="single",
        s=1,
        k_act=1,
        f_act=0,
        target_params=(tgate.param.index,),
        new_params=tuple(range(m0, nxt)),
    )
    out = Circuit(
        n_system=c.n_system,
        n_ancilla=c.n_ancilla + 1,
        gates=tuple(gates),
        input_state=canonical_input(
            tuple(c.bloch(q) for q in range(c.n)) + (op.ancilla_bloch,)
        ),
        marks=marks,
        activation=record,
    )
    validate_circuit(out)
    return out


def activate_zone(c: Circuit, frontier_qubits) -> Circuit:
    """Give every parameter in a backward zone a guaranteed gradient floor.

    The zone is the backward connectivity cone seeded by the frontier
    wires at the gadget layer and swept to the circuit start. The gadgets
    on the frontier wires are enlarged (op relocated, plus a new XX/YY/ZZ
    rotation triple right before the gadget block), and a fresh gadget
    layer over the zone's full wire support is inserted at the zone's
    earliest gate. Metadata (S, K_act, f_act, covered parameters) is
    recorded for the bounds module.
    """
    validate_circuit(c)
    gs, gl = _require_gadget_marks(c)
    frontier = sorted(set(int(q) for q in frontier_qubits))
    if not frontier:
        raise CircuitError("frontier is empty")
    for q in frontier:
        if not 0 <= q < c.n_system:
            raise CircuitError(f"frontier wire {q} is not a system qubit")
    layout = {spec.system_qubit: spec for spec in gadget_layout(c)}
    for q in frontier:
        if q not in layout:
            raise CircuitError(f"no gadget found on wire {q}")

    # backward cone of the frontier through the pre-layer gates
    support = 0
    for q in frontier:
        support |= 1 << q
    zone: list[int] = []
    for i in range(gs - 1, -1, -1):
        mask = 0
        for q in c.gates[i].qubits:
            mask |= 1 << q
        if mask & support:
            support |= mask
            zone.append(i)
    zone.reverse()
    zone_wires = [q for q in range(c.n) if (support >> q) & 1]
    if any(q >= c.n_system for q in zone_wires):
        raise CircuitError("activation zone touches ancilla wires")
    k_act = len(zone_wires)
    f_act = sum(1 for i in zone if c.gates[i].is_free_rotation)
    target_params = tuple(
        sorted(c.gates[i].param.index for i in zone if c.gates[i].is_free_rotation)
    )
    insert_at = zone[0] if zone else 0

    s = len(frontier)
    op = layout[frontier[0]].op
    total = c.n + k_act
    ancilla_of = {q: c.n + idx for idx, q in enumerate(zone_wires)}
    m0 = c.m
    nxt = m0

    fresh: list[Gate] = []
    if op.trainable:
        for q in zone_wires:
            fresh.append(_single_rot("X", ancilla_of[q], total, nxt))
            fresh.append(_single_rot("Y", ancilla_of[q], total, nxt + 1))
            nxt += 2
    for letter in "XYZ":
        for q in zone_wires:
            fresh.append(_pair_rot(letter, ancilla_of[q], q, total, nxt))
            nxt += 1

    old = _lift_gates(c.gates, total)
    removed: list[int] = []
    before_block: list[Gate] = []
    for q in frontier:
        spec = layout[q]
        if op.trainable:
            mine = [
                i
                for i in range(gs, gl)
                if c.gates[i].is_free_rotation
                and c.gates[i].generator.weight == 1
                and c.gates[i].generator.support[0] == spec.ancilla
            ]
            removed.extend(mine)
            before_block.extend(old[i] for i in mine)
        for letter in "XYZ":
            before_block.append(_pair_rot(letter, spec.ancilla, q, total, nxt))
            nxt += 1

    gates: list[Gate] = []
    for i, g in enumerate(old):
        if i == insert_at:
            gates.extend(fresh)
        if i == gs:
            gates.extend(before_block)
        if i in removed:
            continue
        gates.append(g)

    insertions = [insert_at] * len(fresh) + [gs] * len(before_block)
    marks = _shift_marks(c.marks, insertions, removed)
    marks["gadget_start"] = gs + len(fresh) + len(before_block)
    marks["gadget_layer"] = gl + len(fresh) + len(before_block) - len(removed)
    record = ActivationRecord(
        kind="zone",
        s=s,
        k_act=k_act,
        f_act=f_act,
        target_params=target_params,
        new_params=tuple(range(m0, nxt)),
    )
    out = Circuit(
        n_system=c.n_system,
        n_ancilla=c.n_ancilla + k_act,
        gates=tuple(gates),
        input_state=canonical_input(
            tuple(c.bloch(q) for q in range(c.n)) + (op.ancilla_bloch,) * k_act
        ),
        marks=marks,
        activation=record,
    )
    validate_circuit(out)
    return out
