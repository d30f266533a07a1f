"""Gadget insertion, backward swap table, and activation transforms."""

import itertools
import math

import numpy as np
import pytest

from conftest import dense_word, random_circuit, random_observable
from pathvar.circuit import (
    Circuit,
    CircuitError,
    FreeParam,
    Gate,
    make_observable,
    parse_circuit,
    serialize_circuit,
    split_check,
)
from pathvar.mpqc import (
    FIXED_OPTIMAL,
    FIXED_OPTIMAL_BLOCH,
    TRAINABLE_RXRY,
    ActivationInfeasible,
    activate_single,
    activate_zone,
    gadget_backpropagate,
    gadget_layout,
    insert_gadget_layer,
    op_model,
)
from pathvar.oracle import loss
from pathvar.pauli import PauliWord


def rot(text, n, idx):
    return Gate.rotation(PauliWord.from_text(text, n), FreeParam(idx))


def new_angles_zeroed(c_new, angles_old):
    """Angle vector for a transformed circuit: old values kept, new at 0."""
    out = np.zeros(c_new.m)
    out[: len(angles_old)] = angles_old
    return out


def assert_zero_init_equal(c_old, c_new, rng, trials=4):
    obs = random_observable(rng, c_old.n_system)
    for _ in range(trials):
        angles_old = rng.uniform(0, 2 * math.pi, c_old.m)
        lhs = loss(c_old, obs, angles_old)
        rhs = loss(c_new, obs, new_angles_zeroed(c_new, angles_old))
        assert lhs == pytest.approx(rhs, abs=1e-9)


class TestOpModel:
    def test_taus(self):
        assert FIXED_OPTIMAL.tau == pytest.approx(1 / 3)
        assert TRAINABLE_RXRY.tau == pytest.approx(1 / 4)

    def test_lookup(self):
        assert op_model("fixed") is FIXED_OPTIMAL
        assert op_model("trainable") is TRAINABLE_RXRY
        with pytest.raises(CircuitError):
            op_model("bogus")


class TestInsertGadgetLayer:
    def make_pqc(self, n=3, m=5, seed=9):
        rng = np.random.default_rng(seed)
        return random_circuit(rng, n, n_gates=2 * m, n_free=m)

    def test_parameter_count_fixed(self):
        c = self.make_pqc(n=3, m=5)
        mp = insert_gadget_layer(c, op=FIXED_OPTIMAL)
        assert mp.m == 14
        assert mp.n_ancilla == 3

    def test_parameter_count_trainable(self):
        c = self.make_pqc(n=2, m=1)
        mp = insert_gadget_layer(c, op=TRAINABLE_RXRY)
        assert mp.m == 11

    def test_marks_and_block_shape(self):
        c = self.make_pqc(n=2, m=3)
        pos = 3
        mp = insert_gadget_layer(c, position=pos)
        assert mp.marks["gadget_start"] == pos
        assert mp.marks["gadget_layer"] == pos + 6
        block = mp.gates[pos:pos + 6]
        letters = [g.generator.letter(g.generator.support[-1]) for g in block]
        assert letters == ["X", "X", "Y", "Y", "Z", "Z"]

    def test_ancilla_inputs(self):
        c = self.make_pqc(n=2, m=2)
        mp = insert_gadget_layer(c, op=FIXED_OPTIMAL)
        assert mp.bloch(2) == FIXED_OPTIMAL_BLOCH
        assert mp.bloch(3) == FIXED_OPTIMAL_BLOCH
        tr = insert_gadget_layer(c, op=TRAINABLE_RXRY)
        assert tr.bloch(2) == (0.0, 0.0, 1.0)

    def test_existing_indices_preserved(self):
        c = self.make_pqc(n=2, m=4)
        mp = insert_gadget_layer(c)
        originals = [
            g.param.index
            for g in c.gates
            if g.is_free_rotation
        ]
        kept = [
            g.param.index
            for g in mp.gates
            if g.is_free_rotation and g.param.index < c.m
        ]
        assert kept == originals

    def test_layout_round_trip(self):
        c = self.make_pqc(n=3, m=2)
        mp = insert_gadget_layer(c, op=TRAINABLE_RXRY)
        specs = gadget_layout(mp)
        assert [s.system_qubit for s in specs] == [0, 1, 2]
        assert [s.ancilla for s in specs] == [3, 4, 5]
        assert all(s.op.trainable for s in specs)
        assert all(len(s.op_params) == 2 for s in specs)
        # XX row indices come right after the op rows
        assert [s.params[0] for s in specs] == [c.m + 6, c.m + 7, c.m + 8]

    def test_zero_init_channel_equality(self, rng):
        for _ in range(3):
            n = int(rng.integers(1, 4))
            c = random_circuit(rng, n, n_gates=6, n_free=3)
            mp = insert_gadget_layer(c, op=FIXED_OPTIMAL)
            assert_zero_init_equal(c, mp, rng)

    def test_zero_init_trainable(self, rng):
        c = random_circuit(rng, 2, n_gates=5, n_free=2)
        mp = insert_gadget_layer(c, op=TRAINABLE_RXRY)
        assert_zero_init_equal(c, mp, rng)

    def test_mid_circuit_position(self, rng):
        c = random_circuit(rng, 2, n_gates=6, n_free=3)
        mp = insert_gadget_layer(c, position=2)
        assert_zero_init_equal(c, mp, rng)

    def test_split_check_always_true(self, rng):
        for _ in range(6):
            n = int(rng.integers(1, 5))
            c = random_circuit(rng, n, n_gates=8, n_free=4)
            mp = insert_gadget_layer(c)
            obs = random_observable(rng, n)
            assert split_check(mp, obs).splits

    def test_rejects_existing_ancillas(self):
        c = Circuit(n_system=2, n_ancilla=1, gates=(rot("Z0", 3, 0),))
        with pytest.raises(CircuitError, match="ancillas"):
            insert_gadget_layer(c)

    def test_serialization_round_trip(self):
        c = self.make_pqc(n=2, m=3)
        mp = insert_gadget_layer(c, op=TRAINABLE_RXRY)
        again = parse_circuit(serialize_circuit(mp))
        assert again == mp


def expected_swap_image(letter: str, k1: int, k2: int, k3: int) -> str:
    """Hand-derived parity table for the gadget's backward conjugation.

    Derived by tracking anticommutations through R_ZZ, R_YY, R_XX in
    backward order; written as (ancilla letter, system letter).
    """
    o1, o2, o3 = k1 % 2, k2 % 2, k3 % 2
    if letter == "I":
        return "II"
    if letter == "X":
        if o3 and o2:
            return "XI"
        if not o3 and not o2:
            return "IX"
        if not o3 and o2:
            return "YZ"
        return "ZY"
    if letter == "Y":
        if o3 and o1:
            return "YI"
        if not o3 and not o1:
            return "IY"
        if not o3 and o1:
            return "XZ"
        return "ZX"
    if o2 and o1:
        return "ZI"
    if not o2 and not o1:
        return "IZ"
    if not o2 and o1:
        return "XY"
    return "YX"


class TestGadgetBackpropagate:
    def test_identity_stays_identity(self):
        for ks in itertools.product(range(4), repeat=3):
            assert gadget_backpropagate("I", ks).is_identity

    @pytest.mark.parametrize("letter", "XYZ")
    def test_full_table(self, letter):
        for k1, k2, k3 in itertools.product(range(4), repeat=3):
            got = gadget_backpropagate(letter, (k1, k2, k3))
            want = expected_swap_image(letter, k1, k2, k3)
            got_letters = got.letter(0) + got.letter(1)
            assert got_letters == want, (letter, k1, k2, k3)

    def test_swap_counting(self):
        tally = {}
        for ks in itertools.product(range(4), repeat=3):
            img = gadget_backpropagate("X", ks)
            tally.setdefault(img.letter(0) + img.letter(1), 0)
            tally[img.letter(0) + img.letter(1)] += 1
        assert tally == {"XI": 16, "IX": 16, "YZ": 16, "ZY": 16}

    def test_against_dense_conjugation(self, rng):
        gens = [
            PauliWord.from_text("X0 X1", 2),
            PauliWord.from_text("Y0 Y1", 2),
            PauliWord.from_text("Z0 Z1", 2),
        ]
        for _ in range(12):
            letter = "IXYZ"[rng.integers(0, 4)]
            ks = tuple(int(k) for k in rng.integers(0, 4, 3))
            got = gadget_backpropagate(letter, ks)
            word = (
                PauliWord.identity(2)
                if letter == "I"
                else PauliWord.from_text(f"{letter}1", 2)
            )
            mat = dense_word(word)
            for gen, k in [(gens[2], ks[2]), (gens[1], ks[1]), (gens[0], ks[0])]:
                theta = k * math.pi / 2
                u = math.cos(theta / 2) * np.eye(4) - 1j * math.sin(theta / 2) * dense_word(gen)
                mat = u.conj().T @ mat @ u
            np.testing.assert_allclose(dense_word(got), mat, atol=1e-12)


class TestActivateSingle:
    def make_mpqc(self, n=3, m=5, op=FIXED_OPTIMAL, seed=17):
        rng = np.random.default_rng(seed)
        pqc = random_circuit(rng, n, n_gates=2 * m, n_free=m)
        return pqc, insert_gadget_layer(pqc, op=op)

    def find_target(self, c):
        for i, g in enumerate(c.gates):
            if (
                g.is_free_rotation
                and g.generator.weight == 1
                and i < c.marks["gadget_start"]
            ):
                return i
        raise AssertionError("no single-qubit Free rotation before the layer")

    def test_parameter_count(self):
        _, mp = self.make_mpqc(n=3, m=5)
        assert mp.m == 14
        act = activate_single(mp, self.find_target(mp))
        assert act.m == 20

    def test_parameter_count_trainable(self):
        _, mp = self.make_mpqc(n=2, m=3, op=TRAINABLE_RXRY)
        act = activate_single(mp, self.find_target(mp))
        assert act.m == mp.m + 8

    def test_zero_init_fixed(self, rng):
        _, mp = self.make_mpqc(n=2, m=4, seed=23)
        act = activate_single(mp, self.find_target(mp))
        assert_zero_init_equal(mp, act, rng)

    def test_zero_init_trainable(self, rng):
        _, mp = self.make_mpqc(n=2, m=3, op=TRAINABLE_RXRY, seed=29)
        act = activate_single(mp, self.find_target(mp))
        assert_zero_init_equal(mp, act, rng)

    def test_fresh_gadget_sits_before_target(self):
        _, mp = self.make_mpqc(n=2, m=4)
        t = self.find_target(mp)
        act = activate_single(mp, t)
        added = 3  # fresh gadget block length for a fixed op
        tgt_gate = mp.gates[t]
        assert act.gates[t + added] == _lifted(tgt_gate, act.n)
        for g in act.gates[t:t + added]:
            assert g.is_free_rotation
            assert act.n - 1 in g.generator.support

    def test_probe_prefers_target_wire(self):
        # Z0 stays on wire 0 through the tail, so the probe keeps wire 0
        pqc = Circuit(n_system=2, gates=(rot("Z0", 2, 0), rot("Z1", 2, 1)))
        mp = insert_gadget_layer(pqc, position=2)
        tail = Gate.rotation(PauliWord.from_text("X0", 4), FreeParam(mp.m))
        mp = Circuit(
            n_system=2, n_ancilla=2, gates=mp.gates + (tail,),
            input_state=mp.input_state, marks=mp.marks,
        )
        obs = make_observable([(1.0, "Z0")], n=2)
        act = activate_single(mp, 0, obs=obs)
        spec_wires = {s.system_qubit: s for s in gadget_layout(act)}
        # enlarged gadget on wire 0: its ancilla gains a second rotation set
        a0 = spec_wires[0].ancilla
        extra = [
            g
            for i, g in enumerate(act.gates)
            if g.kind == "rotation"
            and len(g.generator.support) == 2
            and a0 in g.generator.support
            and not act.marks["gadget_start"] <= i < act.marks["gadget_layer"]
        ]
        assert len(extra) == 3

    def test_cross_wire_construction(self):
        # the observable lives on wire 1 only, the target on wire 0; the
        # enlarged gadget is wire 1's, and its new rotations reach over to
        # the target wire
        pqc = Circuit(n_system=2, gates=(rot("Z0", 2, 0),))
        mp = insert_gadget_layer(pqc)
        obs = make_observable([(1.0, "Z1")], n=2)
        act = activate_single(mp, 0, obs=obs)
        a1 = {s.system_qubit: s for s in gadget_layout(act)}[1].ancilla
        cross = [
            g
            for i, g in enumerate(act.gates)
            if g.kind == "rotation"
            and g.generator.support == (0, a1)
        ]
        assert len(cross) == 3

    def test_infeasible_when_observable_escapes_to_ancilla(self):
        pqc = Circuit(n_system=1, gates=(rot("Z0", 1, 0),))
        mp = insert_gadget_layer(pqc)
        swapped = Circuit(
            n_system=1, n_ancilla=1,
            gates=mp.gates + (Gate.clifford("SWAP", (0, 1)),),
            input_state=mp.input_state, marks=mp.marks,
        )
        obs = make_observable([(1.0, "Z0")], n=1)
        with pytest.raises(ActivationInfeasible) as err:
            activate_single(swapped, 0, obs=obs)
        assert err.value.diagnostics["wire_counts"] == {0: 0}

    def test_rejects_post_layer_target(self):
        _, mp = self.make_mpqc(n=2, m=3)
        tail = Gate.rotation(PauliWord.from_text("X0", mp.n), FreeParam(mp.m))
        ext = Circuit(
            n_system=2, n_ancilla=2, gates=mp.gates + (tail,),
            input_state=mp.input_state, marks=mp.marks,
        )
        with pytest.raises(CircuitError, match="before the gadget layer"):
            activate_single(ext, len(ext.gates) - 1)

    def test_rejects_clifford_target(self):
        _, mp = self.make_mpqc(n=2, m=3)
        for i, g in enumerate(mp.gates):
            if g.kind == "clifford":
                with pytest.raises(CircuitError, match="Free rotation"):
                    activate_single(mp, i)
                break

    def test_split_check_after_activation(self, rng):
        _, mp = self.make_mpqc(n=3, m=4, seed=31)
        act = activate_single(mp, self.find_target(mp))
        obs = random_observable(rng, 3)
        assert split_check(act, obs).splits

    def test_record(self):
        _, mp = self.make_mpqc(n=2, m=4)
        t = self.find_target(mp)
        act = activate_single(mp, t)
        rec = act.activation
        assert rec.kind == "single"
        assert rec.s == 1 and rec.k_act == 1
        assert rec.target_params == (mp.gates[t].param.index,)
        assert rec.new_params == tuple(range(mp.m, mp.m + 6))

    def test_serialization_keeps_record(self):
        _, mp = self.make_mpqc(n=2, m=4)
        act = activate_single(mp, self.find_target(mp))
        again = parse_circuit(serialize_circuit(act))
        assert again.activation == act.activation


def _lifted(gate, n):
    if gate.kind != "rotation" or gate.generator.n == n:
        return gate
    g = gate.generator
    return Gate.rotation(PauliWord(n, g.x, g.z, g.phase_pow), gate.param)


class TestActivateZone:
    def build(self, op=FIXED_OPTIMAL):
        n = 3
        gates = (
            rot("Z0", n, 0),
            rot("Y0", n, 1),
            rot("X0 X1", n, 2),
            rot("Z1", n, 3),
            rot("Z2", n, 4),
        )
        pqc = Circuit(n_system=n, gates=gates)
        return pqc, insert_gadget_layer(pqc, op=op)

    def test_zone_metadata(self):
        _, mp = self.build()
        act = activate_zone(mp, [0, 1])
        rec = act.activation
        assert rec.kind == "zone"
        assert rec.s == 2
        assert rec.k_act == 2  # the cone of wires {0,1} never reaches wire 2
        assert rec.f_act == 4
        assert rec.target_params == (0, 1, 2, 3)

    def test_parameter_accounting(self):
        _, mp = self.build()
        act = activate_zone(mp, [0, 1])
        # fresh layer: 3 * k_act; enlarged triples: 3 * s
        assert act.m == mp.m + 3 * 2 + 3 * 2
        assert act.n_ancilla == mp.n_ancilla + 2

    def test_degenerate_single_wire_matches_single_accounting(self):
        pqc = Circuit(n_system=2, gates=(rot("Z0", 2, 0),))
        mp = insert_gadget_layer(pqc)
        zone = activate_zone(mp, [0])
        single = activate_single(mp, 0)
        assert zone.m == single.m  # +6 both ways when the zone has one wire

    def test_zero_init_fixed(self, rng):
        _, mp = self.build()
        act = activate_zone(mp, [0, 1])
        assert_zero_init_equal(mp, act, rng)

    def test_zero_init_trainable(self, rng):
        _, mp = self.build(op=TRAINABLE_RXRY)
        act = activate_zone(mp, [0, 1])
        assert_zero_init_equal(mp, act, rng)

    def test_layout_survives(self):
        _, mp = self.build()
        act = activate_zone(mp, [0, 1])
        specs = gadget_layout(act)
        assert [s.system_qubit for s in specs] == [0, 1, 2]

    def test_split_check_after_zone(self, rng):
        _, mp = self.build()
        act = activate_zone(mp, [0, 1])
        obs = random_observable(rng, 3)
        assert split_check(act, obs).splits

    def test_empty_frontier_rejected(self):
        _, mp = self.build()
        with pytest.raises(CircuitError, match="empty"):
            activate_zone(mp, [])

    def test_bad_frontier_wire(self):
        _, mp = self.build()
        with pytest.raises(CircuitError, match="system qubit"):
            activate_zone(mp, [5])
