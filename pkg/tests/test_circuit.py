"""Circuit IR, JSON round-trips, light cones, split check, placement."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_circuit, random_observable
from pathvar.circuit import (
    Circuit,
    CircuitError,
    FixedParam,
    FreeParam,
    Gate,
    backward_lightcone,
    circuit_from_dict,
    circuit_to_dict,
    full_lightcone,
    make_observable,
    observable_from_dict,
    parse_circuit,
    placement_advisor,
    serialize_circuit,
    split_check,
    validate_circuit,
)
from pathvar.pauli import PauliWord


def rot(text, n, idx=None, angle=None):
    param = FreeParam(idx) if idx is not None else FixedParam(angle)
    return Gate.rotation(PauliWord.from_text(text, n), param)


class TestValidation:
    def test_minimal_document(self):
        c = parse_circuit(
            json.dumps(
                {
                    "n_system": 1,
                    "gates": [
                        {"type": "rotation", "generator": "Z0", "param": {"free": 0}}
                    ],
                }
            )
        )
        assert c.n == 1
        assert c.m == 1

    def test_free_index_gap_rejected(self):
        doc = {
            "n_system": 1,
            "gates": [
                {"type": "rotation", "generator": "Z0", "param": {"free": 0}},
                {"type": "rotation", "generator": "X0", "param": {"free": 2}},
            ],
        }
        with pytest.raises(CircuitError, match="gap"):
            circuit_from_dict(doc)

    def test_duplicate_free_index_rejected(self):
        c = Circuit(
            n_system=1,
            gates=(rot("Z0", 1, idx=0), rot("X0", 1, idx=0)),
        )
        with pytest.raises(CircuitError, match="already used"):
            validate_circuit(c)

    def test_out_of_range_qubit_carries_gate_index(self):
        c = Circuit(n_system=2, gates=(Gate.clifford("CNOT", (0, 5)),))
        with pytest.raises(CircuitError, match="gate 0"):
            validate_circuit(c)

    def test_unknown_clifford(self):
        c = Circuit(n_system=1, gates=(Gate.clifford("T", (0,)),))
        with pytest.raises(CircuitError, match="unknown Clifford"):
            validate_circuit(c)

    def test_identity_generator_rejected(self):
        c = Circuit(
            n_system=1,
            gates=(Gate.rotation(PauliWord.identity(1), FreeParam(0)),),
        )
        with pytest.raises(CircuitError, match="nonidentity"):
            validate_circuit(c)

    def test_bloch_norm_checked(self):
        c = Circuit(n_system=1, input_state=((1.0, 1.0, 0.0),))
        with pytest.raises(CircuitError, match="Bloch norm"):
            validate_circuit(c)

    def test_mark_out_of_range(self):
        c = Circuit(n_system=1, marks={"gadget_layer": 3})
        with pytest.raises(CircuitError, match="gadget_layer"):
            validate_circuit(c)

    def test_invalid_json(self):
        with pytest.raises(CircuitError, match="invalid JSON"):
            parse_circuit("{nope")


class TestRoundTrip:
    def test_gadget_fragment(self):
        doc = {
            "n_system": 2,
            "gates": [
                {"type": "rotation", "generator": "X0 X1", "param": {"free": 0}},
                {"type": "rotation", "generator": "Y0 Y1", "param": {"free": 1}},
                {"type": "rotation", "generator": "Z0 Z1", "param": {"free": 2}},
            ],
        }
        c = circuit_from_dict(doc)
        assert c.n == 2
        assert c.m == 3
        again = circuit_from_dict(circuit_to_dict(c))
        assert again == c

    def test_marks_and_fixed_angles_survive(self):
        c = Circuit(
            n_system=2,
            n_ancilla=1,
            gates=(
                Gate.clifford("H", (0,)),
                rot("X0 X2", 3, angle=math.pi / 2),
                rot("Z1", 3, idx=0),
            ),
            input_state=((0.0, 0.0, 1.0), (0.0, 0.0, 1.0), (1 / math.sqrt(3),) * 3),
            marks={"gadget_layer": 2},
        )
        validate_circuit(c)
        again = parse_circuit(serialize_circuit(c))
        assert again.marks == {"gadget_layer": 2}
        assert again.gates[1].param == FixedParam(math.pi / 2)
        assert again.full_input() == c.full_input()

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_random_circuits_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 5))
        c = random_circuit(
            rng, n, n_gates=int(rng.integers(1, 12)), n_free=int(rng.integers(0, 5)),
            allow_fixed=True,
        )
        validate_circuit(c)
        again = parse_circuit(serialize_circuit(c))
        assert again == c


class TestObservable:
    def test_merging_and_norms(self):
        obs = make_observable(
            [(1.0, "Z0"), (0.5, "X0 X1"), (0.25, "Z0")], n=2
        )
        assert len(obs.terms) == 2
        coeffs = {w.to_text(): c for c, w in obs.terms}
        assert coeffs["Z0"] == 1.25
        assert obs.hs_norm_sq == pytest.approx(1.25 ** 2 + 0.25)
        assert obs.min_abs_coeff == 0.5

    def test_zero_coefficient_rejected(self):
        with pytest.raises(CircuitError):
            make_observable([(0.0, "Z0")], n=1)

    def test_cancellation_to_empty_rejected(self):
        with pytest.raises(CircuitError, match="empty"):
            make_observable([(1.0, "Z0"), (-1.0, "Z0")], n=1)

    def test_term_cap(self):
        terms = [(1.0, f"Z{q}") for q in range(11)]
        with pytest.raises(CircuitError, match="cap"):
            make_observable(terms, n=11, term_cap=10)

    def test_json_parse(self):
        obs = observable_from_dict(
            {"terms": [{"coeff": -1.0, "pauli": "X0 X1"}, {"coeff": 0.5, "pauli": "Z0"}]},
            n=2,
        )
        assert obs.hs_norm_sq == pytest.approx(1.25)


class TestLightcone:
    def test_disjoint_term(self):
        c = Circuit(
            n_system=3,
            gates=(Gate.clifford("CNOT", (1, 2)), rot("X1", 3, idx=0)),
        )
        obs = make_observable([(1.0, "Z0")], n=3)
        rep = full_lightcone(c, obs)
        assert rep.term_supports == (0b001,)
        assert rep.term_gate_sets == ((),)
        assert rep.k_max == 1
        assert rep.f_gadget == 0
        assert rep.f_param == {0: 0}

    def test_cone_growth_and_f_counts(self):
        # gate 0: rot Z0 (param 0); gate 1: CNOT(0,1); gate 2: rot X1 (param 1)
        c = Circuit(
            n_system=2,
            gates=(rot("Z0", 2, idx=0), Gate.clifford("CNOT", (0, 1)), rot("X1", 2, idx=1)),
        )
        obs = make_observable([(1.0, "Z1")], n=2)
        rep = full_lightcone(c, obs)
        assert rep.k_max == 2
        assert rep.term_gate_sets == ((0, 1, 2),)
        assert rep.f_param[1] == 0  # nothing parameterized after it in the cone
        assert rep.f_param[0] == 1  # one Free rotation later in its cone
        assert rep.f_gadget == 2  # both Free rotations sit at index >= 0

    def test_position_cuts_the_sweep(self):
        c = Circuit(
            n_system=2,
            gates=(rot("Z0", 2, idx=0), Gate.clifford("CNOT", (0, 1)), rot("X1", 2, idx=1)),
        )
        obs = make_observable([(1.0, "Z1")], n=2)
        rep = backward_lightcone(c, obs, 2)
        assert rep.k_max == 1  # the CNOT is not swept, support stays {1}
        assert rep.f_gadget == 1

    def test_monotone_in_position(self):
        rng = np.random.default_rng(7)
        c = random_circuit(rng, 4, n_gates=14, n_free=5)
        obs = random_observable(rng, 4)
        prev_supports = None
        prev_f = None
        for pos in range(len(c.gates), -1, -1):
            rep = backward_lightcone(c, obs, pos)
            if prev_supports is not None:
                for s_new, s_old in zip(rep.term_supports, prev_supports):
                    assert s_new & s_old == s_old  # supports only grow
                assert rep.f_gadget >= prev_f
            prev_supports = rep.term_supports
            prev_f = rep.f_gadget

    def test_brickwall_tail_width(self):
        # depth-t tail of a 1D brickwall touching Z0 grows support by at
        # most one qubit per swept layer on each side
        n = 8
        gates = []
        p = 0
        depth = 4
        for layer in range(depth):
            start = layer % 2
            for a in range(start, n - 1, 2):
                gates.append(rot(f"X{a} X{a + 1}", n, idx=p))
                p += 1
        c = Circuit(n_system=n, gates=tuple(gates))
        obs = make_observable([(1.0, "Z0")], n=n)
        gates_per_layer = [len(range(layer % 2, n - 1, 2)) for layer in range(depth)]
        for t in range(depth + 1):
            pos = len(gates) - sum(gates_per_layer[depth - t:])
            rep = backward_lightcone(c, obs, pos)
            assert rep.k_max <= 2 * t + 1


class TestSplitCheck:
    def test_identical_signature_collision(self):
        c = Circuit(n_system=1, gates=(rot("Z0", 1, idx=0),))
        obs = make_observable([(1.0, "X0"), (1.0, "Y0")], n=1)
        rep = split_check(c, obs)
        assert not rep.splits
        assert rep.witness == (0, 1)

    def test_distinct_signatures(self):
        c = Circuit(n_system=1, gates=(rot("X0", 1, idx=0), rot("Z0", 1, idx=1)))
        obs = make_observable([(1.0, "X0"), (1.0, "Y0"), (1.0, "Z0")], n=1)
        rep = split_check(c, obs)
        assert rep.splits
        assert rep.witness is None
        assert rep.generates_full_group

    def test_single_generator_not_full_group(self):
        c = Circuit(n_system=1, gates=(rot("X0", 1, idx=0),))
        obs = make_observable([(1.0, "Z0")], n=1)
        assert not split_check(c, obs).generates_full_group

    def test_later_clifford_transforms_generator(self):
        # generator Z0 followed by H: the effective generator is X0, which
        # commutes with an X0 observable term
        c = Circuit(n_system=1, gates=(rot("Z0", 1, idx=0), Gate.clifford("H", (0,))))
        obs = make_observable([(1.0, "X0"), (1.0, "Z0")], n=1)
        rep = split_check(c, obs)
        assert rep.splits  # X0 commutes (sig 0), Z0 anticommutes (sig 1)

    def test_requires_a_rotation(self):
        c = Circuit(n_system=1, gates=(Gate.clifford("H", (0,)),))
        obs = make_observable([(1.0, "Z0")], n=1)
        with pytest.raises(CircuitError):
            split_check(c, obs)


class TestPlacementAdvisor:
    def test_pinned_1d_example(self):
        out = placement_advisor(d=1, v=1.0, k=2, n=2, tail_depth=3)
        assert out["predicted_K"] == pytest.approx(12.0)
        assert out["predicted_f"] == pytest.approx(9.0)

    def test_zero_velocity(self):
        out = placement_advisor(d=1, v=0.0, k=2, n=64)
        assert out["predicted_K"] == pytest.approx(2.0)
        assert out["predicted_f"] == pytest.approx(0.0)

    def test_tail_depth_rule(self):
        out = placement_advisor(d=1, v=1.0, k=2, n=100)
        assert out["recommended_tail_depth"] == 3

    def test_rejects_bad_velocity(self):
        with pytest.raises(CircuitError):
            placement_advisor(d=1, v=1.5, k=2, n=16)

    def test_rejects_bad_dimension(self):
        with pytest.raises(CircuitError):
            placement_advisor(d=0, v=0.5, k=2, n=16)
