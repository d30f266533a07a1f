"""Benchmark generators and an experiment harness for a transverse-field
Ising study.

The harness builds a translation-structured ansatz for each requested width,
inserts a gadget layer before the final block, and records Monte Carlo
variance and gradient-variance estimates for both the plain and the modified
circuit in a tidy CSV. A companion JSON manifest echoes the full plan so any
number in the CSV can be regenerated from the manifest alone. Timing data
lives in the manifest, never in the CSV, so reruns with the same plan are
byte-identical regardless of worker count.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from ._io import atomic_write_text
from .circuit import (
    Circuit,
    CircuitError,
    FreeParam,
    Gate,
    Observable,
    backward_lightcone,
    make_observable,
)
from .estimator import bounds, variance_and_grads_mc
from .mpqc import insert_gadget_layer, op_model
from .pauli import PauliWord

# Block layouts the harness can build. Each entry is (rounds per block,
# field axes applied after the bond sub-layers in every round). The default
# interleaves Z and X fields twice per block: with bonds and a single field
# axis the block generators close into a small dynamical Lie algebra, the
# loss variance stays flat with width, and the benchmark cannot show the
# concentration it is meant to measure. The second field axis breaks that
# structure while keeping every generator a TFI term or a single-qubit field.
ANSATZ_VARIANTS: dict[str, tuple[int, tuple[str, ...]]] = {
    "xx_bond_zx_field_x2": (2, ("Z", "X")),
    "xx_bond_z_field": (1, ("Z",)),
}

ANSATZ_VARIANT = "xx_bond_zx_field_x2"


def _variant(name: str) -> tuple[int, tuple[str, ...]]:
    try:
        return ANSATZ_VARIANTS[name]
    except KeyError:
        known = ", ".join(sorted(ANSATZ_VARIANTS))
        raise CircuitError(f"unknown ansatz variant {name!r}; known: {known}")


def tfi_observable(
    n: int,
    coupling: float = 1.0,
    field: float = 0.5,
    periodic: bool = True,
) -> Observable:
    """Transverse-field Ising Hamiltonian as an Observable.

    Returns -coupling * sum_j X_j X_{j+1} - field * sum_j Z_j, with the wrap
    bond included when periodic. The wrap is skipped when it would duplicate
    an existing bond (the two-site ring), so every bond appears exactly once.
    """
    if n < 2:
        raise CircuitError("TFI needs at least two sites")
    terms: list[tuple[float, str]] = []
    seen: set[tuple[int, int]] = set()
    n_bonds = n if periodic else n - 1
    for j in range(n_bonds):
        a, b = j, (j + 1) % n
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        terms.append((-coupling, f"X{a} X{b}"))
    for q in range(n):
        terms.append((-field, f"Z{q}"))
    return make_observable(terms, n)


def thermal_ansatz(
    n: int, blocks: int | None = None, variant: str = ANSATZ_VARIANT
) -> Circuit:
    """Translation-structured ansatz whose generators match the TFI terms.

    Each block repeats a round ``rounds`` times: XX rotations on even bonds
    (2k, 2k+1), XX rotations on odd bonds (2k+1, 2k+2 mod n), then one
    rotation per qubit for every field axis of the variant. Every angle is
    an independent free parameter, indexed densely in construction order,
    giving ``gates_per_block(n, variant)`` parameters per block.
    """
    rounds, axes = _variant(variant)
    if n < 2:
        raise CircuitError("ansatz needs at least two qubits")
    if blocks is None:
        blocks = n
    if blocks < 1:
        raise CircuitError("ansatz needs at least one block")
    gates: list[Gate] = []
    idx = 0

    def bond(a: int) -> None:
        nonlocal idx
        b = (a + 1) % n
        word = PauliWord.from_text(f"X{a} X{b}", n)
        gates.append(Gate.rotation(word, FreeParam(idx)))
        idx += 1

    for _ in range(blocks):
        for _ in range(rounds):
            for a in range(0, n, 2):
                bond(a)
            for a in range(1, n, 2):
                bond(a)
            for axis in axes:
                for q in range(n):
                    word = PauliWord.from_text(f"{axis}{q}", n)
                    gates.append(Gate.rotation(word, FreeParam(idx)))
                    idx += 1
    return Circuit(n_system=n, gates=tuple(gates))


def gates_per_block(n: int, variant: str = ANSATZ_VARIANT) -> int:
    """Gate (and parameter) count contributed by one ansatz block."""
    rounds, axes = _variant(variant)
    return rounds * n * (1 + len(axes))


def sublayers_per_block(variant: str = ANSATZ_VARIANT) -> int:
    """Sub-layer count of one block: two bond passes plus the field axes."""
    rounds, axes = _variant(variant)
    return rounds * (2 + len(axes))


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything needed to reproduce one benchmark run."""

    n_values: tuple[int, ...]
    samples: int = 10_000
    seed: int = 0
    out_dir: str = "."
    blocks: int | None = None  # None: one block per qubit
    gadget_block: int | None = None  # None: before the final block
    op_name: str = "fixed_optimal"
    coupling: float = 1.0
    field: float = 0.5
    periodic: bool = True
    workers: int = 1
    ansatz: str = ANSATZ_VARIANT

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        if not self.n_values:
            raise CircuitError("plan needs at least one circuit width")
        if any(n < 2 for n in self.n_values):
            raise CircuitError("every width must be at least 2")
        if self.samples < 1:
            raise CircuitError("samples must be at least 1")
        if self.blocks is not None and self.blocks < 1:
            raise CircuitError("blocks must be at least 1")
        op_model(self.op_name)  # validate the name eagerly
        _variant(self.ansatz)  # and the block layout

    def blocks_for(self, n: int) -> int:
        return self.blocks if self.blocks is not None else n

    def gadget_position(self, n: int) -> int:
        """Gate index where the gadget block goes (start of a block)."""
        blocks = self.blocks_for(n)
        gb = self.gadget_block if self.gadget_block is not None else blocks - 1
        if not 0 <= gb <= blocks:
            raise CircuitError(
                f"gadget_block {gb} outside [0, {blocks}] for width {n}"
            )
        return gb * gates_per_block(n, self.ansatz)


def plan_from_manifest(manifest: dict) -> ExperimentPlan:
    """Rebuild the plan a manifest echoes, for exact reruns."""
    return ExperimentPlan(**manifest["plan"])


CSV_COLUMNS = (
    "n",
    "circuit_kind",
    "quantity",
    "param_index",
    "mean",
    "stderr",
    "samples",
    "seed",
)


def _post_gadget_params(mp: Circuit) -> list[int]:
    mark = mp.marks["gadget_layer"]
    out = []
    for i, g in enumerate(mp.gates):
        if i >= mark and g.kind == "rotation" and isinstance(g.param, FreeParam):
            out.append(g.param.index)
    return sorted(out)


def run_experiment(plan: ExperimentPlan) -> dict:
    """Execute the plan; write results.csv and manifest.json to out_dir.

    Returns a small dict with the artifact paths and the row count.
    """
    op = op_model(plan.op_name)
    rows: list[tuple] = []
    points: list[dict] = []
    for n in plan.n_values:
        t0 = time.perf_counter()
        blocks = plan.blocks_for(n)
        pqc = thermal_ansatz(n, blocks, plan.ansatz)
        obs = tfi_observable(n, plan.coupling, plan.field, plan.periodic)
        mp = insert_gadget_layer(pqc, position=plan.gadget_position(n), op=op)
        post = _post_gadget_params(mp)

        var_p, grads_p = variance_and_grads_mc(
            pqc, obs, plan.samples, params=post,
            seed=plan.seed, workers=plan.workers,
        )
        var_m, grads_m = variance_and_grads_mc(
            mp, obs, plan.samples, params=post,
            seed=plan.seed, workers=plan.workers,
        )
        analysis = backward_lightcone(mp, obs, mp.marks["gadget_layer"])
        rep = bounds(mp, obs, analysis, op)

        for kind, var, grads in (
            ("pqc", var_p, grads_p), ("mpqc", var_m, grads_m)
        ):
            rows.append(
                (n, kind, "variance", "", var.mean, var.stderr,
                 var.samples, var.seed)
            )
            for j in post:
                g = grads[j]
                rows.append(
                    (n, kind, "grad_variance", j, g.mean, g.stderr,
                     g.samples, g.seed)
                )
        rows.append(
            (n, "mpqc", "variance_bound", "", rep.variance_lower, 0.0,
             0, plan.seed)
        )
        points.append({
            "n": n,
            "blocks": blocks,
            "sub_layers": sublayers_per_block(plan.ansatz) * blocks,
            "gate_count_pqc": len(pqc.gates),
            "gate_count_mpqc": len(mp.gates),
            "m_pqc": pqc.m,
            "m_mpqc": mp.m,
            "post_gadget_params": post,
            "cone_size": analysis.k_max,
            "f_gadget": analysis.f_gadget,
            "variance_lower": rep.variance_lower,
            "hs_norm_sq": obs.hs_norm_sq,
            "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
        })

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)

    out_dir = Path(plan.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    manifest_path = out_dir / "manifest.json"
    atomic_write_text(csv_path, buf.getvalue())

    from . import __version__

    manifest = {
        "plan": asdict(plan),
        "package_version": __version__,
        "ansatz_variant": plan.ansatz,
        "csv": csv_path.name,
        "csv_columns": list(CSV_COLUMNS),
        "points": points,
    }
    atomic_write_text(manifest_path, json.dumps(manifest, indent=2) + "\n")
    return {"csv": str(csv_path), "manifest": str(manifest_path),
            "rows": len(rows)}
