"""Command-line entry point wiring every module together.

Subcommand groups: ``circuit`` (validation), ``transform`` (gadget insertion
and activation), ``analyze`` (cones, split condition, bounds, placement),
``estimate`` (variance and gradient variance), ``bench`` (TFI experiment
harness), and ``verify`` (independent ground-truth checks).

Exit codes are frozen for CI consumption: 0 success, 1 validation failure,
2 usage error, 3 verification failure. Numeric results go to the declared
output files (written atomically); human-readable logs go to stderr.

JSON schemas
------------
Circuit::

    {"n_system": 2, "n_ancilla": 0,
     "gates": [
       {"type": "rotation", "generator": "X0 X1", "param": {"free": 0}},
       {"type": "rotation", "generator": "Z0", "param": {"fixed": 1.5707963}},
       {"type": "clifford", "name": "CNOT", "qubits": [0, 1]}
     ],
     "input_state": [[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
     "marks": {"gadget_start": 0, "gadget_layer": 6}}

``input_state`` lists one Bloch vector per wire and may be omitted for the
all-zeros state. ``marks`` and ``activation`` are written by the transform
commands and should not normally be edited by hand.

Observable::

    {"terms": [{"coeff": -1.0, "pauli": "X0 X1"},
               {"coeff": -0.5, "pauli": "Z0"}]}

Pauli text uses letter+wire tokens separated by spaces; wires are system
wires only.

Noise model::

    {"default_two_qubit_depol": 0.01,
     "overrides": [
       {"after_gate": 3,
        "channel": [{"pauli": "X0", "p": 0.002}, {"pauli": "Z1", "p": 0.001}]}
     ]}

``after_gate: -1`` addresses the cut right at the circuit input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from ._io import atomic_write_text
from .bench import ANSATZ_VARIANT, ANSATZ_VARIANTS, ExperimentPlan, run_experiment
from .circuit import (
    CircuitError,
    backward_lightcone,
    load_circuit,
    load_observable,
    placement_advisor,
    save_circuit,
    split_check,
)
from .estimator import (
    CapExceededError,
    EstimatorError,
    NoiseModel,
    bounds,
    grad_variance_exact,
    grad_variance_mc,
    variance_exact,
    variance_mc,
)
from .mpqc import (
    ActivationInfeasible,
    activate_single,
    activate_zone,
    insert_gadget_layer,
    op_model,
)
from .oracle import OracleError, continuous_variance, two_design_check

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_VERIFY = 3

log = logging.getLogger("pathvar")

ESTIMATE_COLUMNS = ("quantity", "param_index", "mean", "stderr", "samples", "seed")

TWO_DESIGN_GENERATORS = ("Z0", "X0", "X0 X1", "Z0 Z1", "Y0 X1")


class UsageError(Exception):
    """Command-line arguments are structurally invalid."""


def _write_json(path: str, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def _write_rows(path: str, rows: list[dict], fmt: str) -> None:
    if fmt == "json":
        _write_json(path, rows)
        return
    lines = [",".join(ESTIMATE_COLUMNS)]
    for row in rows:
        lines.append(",".join(str(row[c]) for c in ESTIMATE_COLUMNS))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _load_pair(args):
    c = load_circuit(args.circuit)
    obs = load_observable(args.observable, c.n_system)
    return c, obs


def _load_noise(args, c):
    if getattr(args, "noise", None) is None:
        return None
    with open(args.noise, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return NoiseModel.from_json(doc, c)


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------


def _cmd_circuit_validate(args) -> int:
    c = load_circuit(args.circuit)
    log.info(
        "valid: %d system + %d ancilla wires, %d gates, %d free parameters",
        c.n_system, c.n_ancilla, len(c.gates), c.m,
    )
    if c.marks:
        log.info("marks: %s", dict(sorted(c.marks.items())))
    return EXIT_OK


def _cmd_transform_gadget(args) -> int:
    c = load_circuit(args.circuit)
    mp = insert_gadget_layer(c, position=args.position, op=op_model(args.op))
    save_circuit(mp, args.out)
    log.info(
        "gadget layer inserted: %d -> %d gates, %d -> %d parameters, marks %s",
        len(c.gates), len(mp.gates), c.m, mp.m, mp.marks,
    )
    return EXIT_OK


def _cmd_transform_activate(args) -> int:
    c = load_circuit(args.circuit)
    if (args.target is None) == (args.zone is None):
        raise UsageError("exactly one of --target or --zone is required")
    try:
        if args.target is not None:
            obs = None
            if args.observable is not None:
                obs = load_observable(args.observable, c.n_system)
            out = activate_single(
                c, args.target, obs=obs,
                probe_budget=args.probe_budget, probe_seed=args.probe_seed,
            )
        else:
            wires = [int(w) for w in args.zone.split(",") if w.strip() != ""]
            out = activate_zone(c, wires)
    except ActivationInfeasible as exc:
        log.error("activation infeasible: %s", exc)
        print(json.dumps(exc.diagnostics, indent=2), file=sys.stderr)
        return EXIT_VALIDATION
    save_circuit(out, args.out)
    rec = out.activation
    log.info(
        "activated (%s): s=%d, k_act=%d, f_act=%d, targets %s, new params %s",
        rec.kind, rec.s, rec.k_act, rec.f_act,
        list(rec.target_params), list(rec.new_params),
    )
    return EXIT_OK


def _cmd_analyze_lightcone(args) -> int:
    c, obs = _load_pair(args)
    position = args.position
    if position is None:
        position = c.marks.get("gadget_layer", 0)
    rep = backward_lightcone(c, obs, position)
    payload = {
        "position": rep.position,
        "k_max": rep.k_max,
        "f_gadget": rep.f_gadget,
        "f_param": {str(j): f for j, f in sorted(rep.f_param.items())},
        "term_supports": [
            [q for q in range(c.n) if (s >> q) & 1] for s in rep.term_supports
        ],
        "term_gate_counts": [len(g) for g in rep.term_gate_sets],
    }
    _write_json(args.out, payload)
    log.info("cone at position %d: K=%d, f_gadget=%d", position, rep.k_max, rep.f_gadget)
    return EXIT_OK


def _cmd_analyze_split(args) -> int:
    c, obs = _load_pair(args)
    rep = split_check(c, obs)
    payload = {
        "splits": rep.splits,
        "witness": list(rep.witness) if rep.witness else None,
    }
    _write_json(args.out, payload)
    log.info("split condition: %s", "holds" if rep.splits else "fails")
    return EXIT_OK


def _cmd_analyze_bounds(args) -> int:
    c, obs = _load_pair(args)
    mark = c.marks.get("gadget_layer")
    if mark is None:
        raise CircuitError("missing gadget layer mark; run `transform gadget` first")
    analysis = backward_lightcone(c, obs, mark)
    rep = bounds(c, obs, analysis, op_model(args.op), noise=_load_noise(args, c))
    payload = asdict(rep)
    payload["grad_after_layer_per_param"] = {
        str(j): v for j, v in sorted(rep.grad_after_layer_per_param.items())
    }
    _write_json(args.out, payload)
    log.info("variance lower bound: %.6g", rep.variance_lower)
    return EXIT_OK


def _cmd_analyze_placement(args) -> int:
    payload = placement_advisor(
        args.dimension, args.velocity, args.locality, args.n,
        tail_depth=args.tail_depth,
    )
    _write_json(args.out, payload)
    log.info("recommended tail depth: %s", payload["recommended_tail_depth"])
    return EXIT_OK


def _estimate_rows(args, grad_param: int | None) -> list[dict]:
    c, obs = _load_pair(args)
    noise = _load_noise(args, c)
    quantity = "variance" if grad_param is None else "grad_variance"
    pidx = "" if grad_param is None else grad_param
    if args.exact:
        if grad_param is None:
            value = variance_exact(c, obs, noise=noise)
        else:
            value = grad_variance_exact(c, obs, grad_param, noise=noise)
        return [{
            "quantity": quantity, "param_index": pidx, "mean": value,
            "stderr": 0.0, "samples": 0, "seed": "",
        }]
    kw = dict(
        noise=noise, seed=args.seed, workers=args.workers,
        acknowledge_split_failure=args.acknowledge_split_failure,
    )
    if grad_param is None:
        r = variance_mc(c, obs, args.samples, **kw)
    else:
        r = grad_variance_mc(c, obs, grad_param, args.samples, **kw)
    return [{
        "quantity": quantity, "param_index": pidx, "mean": r.mean,
        "stderr": r.stderr, "samples": r.samples, "seed": r.seed,
    }]


def _cmd_estimate_var(args) -> int:
    rows = _estimate_rows(args, None)
    _write_rows(args.out, rows, args.format)
    log.info("variance: %.6g", rows[0]["mean"])
    return EXIT_OK


def _cmd_estimate_gradvar(args) -> int:
    rows = _estimate_rows(args, args.param)
    _write_rows(args.out, rows, args.format)
    log.info("gradient variance (param %d): %.6g", args.param, rows[0]["mean"])
    return EXIT_OK


def _cmd_bench_tfi(args) -> int:
    if args.n_max < args.n_min:
        raise UsageError("--n-max must be >= --n-min")
    plan = ExperimentPlan(
        n_values=tuple(range(args.n_min, args.n_max + 1, args.n_step)),
        samples=args.samples,
        seed=args.seed,
        out_dir=args.out,
        blocks=args.blocks,
        gadget_block=args.gadget_block,
        op_name=args.op,
        coupling=args.coupling,
        field=args.field,
        periodic=not args.open_chain,
        workers=args.workers,
        ansatz=args.ansatz,
    )
    out = run_experiment(plan)
    log.info("wrote %s and %s (%d rows)", out["csv"], out["manifest"], out["rows"])
    return EXIT_OK


def _cmd_verify_two_design(args) -> int:
    checks = []
    ok = True
    for text in TWO_DESIGN_GENERATORS:
        dev = two_design_check(text)
        checks.append({"generator": text, "angles": 4, "deviation": dev})
        ok = ok and dev <= 1e-12
    control = two_design_check(TWO_DESIGN_GENERATORS[0], num_angles=3)
    checks.append({
        "generator": TWO_DESIGN_GENERATORS[0], "angles": 3, "deviation": control,
    })
    ok = ok and control > 1e-3
    payload = {"passed": ok, "checks": checks}
    if args.out:
        _write_json(args.out, payload)
    for ch in checks:
        log.info(
            "generator %-6s %d angles: deviation %.3e",
            ch["generator"], ch["angles"], ch["deviation"],
        )
    log.info("two-design identity: %s", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_verify_oracle(args) -> int:
    c, obs = _load_pair(args)
    checks = []
    ok = True

    def compare(kind, exact, est):
        nonlocal ok
        gap = abs(exact - est.mean)
        tol = 4 * est.stderr + 1e-12
        passed = gap <= tol
        ok = ok and passed
        checks.append({
            "quantity": kind, "exact": exact, "oracle_mean": est.mean,
            "oracle_stderr": est.stderr, "gap": gap, "passed": passed,
        })
        log.info(
            "%s: exact %.6g vs oracle %.6g +- %.2g -> %s",
            kind, exact, est.mean, est.stderr, "ok" if passed else "DISAGREES",
        )

    compare(
        "variance",
        variance_exact(c, obs),
        continuous_variance(c, obs, args.samples, args.seed),
    )
    if args.param is not None:
        compare(
            "grad_variance",
            grad_variance_exact(c, obs, args.param),
            continuous_variance(c, obs, args.samples, args.seed, param=args.param),
        )
    if args.out:
        _write_json(args.out, {"passed": ok, "checks": checks})
    log.info("oracle agreement: %s", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_estimate_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--circuit", required=True, help="circuit JSON file")
    p.add_argument("--observable", required=True, help="observable JSON file")
    p.add_argument("--out", required=True, help="output artifact path")
    p.add_argument("--noise", help="noise model JSON file")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--exact", action="store_true",
                      help="exact enumeration engine (small m only)")
    mode.add_argument("--samples", type=int,
                      help="Monte Carlo sample count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--acknowledge-split-failure", action="store_true",
                   help="allow the scaled diagnostic when terms share a "
                        "commutation signature")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathvar",
        description="Trainability diagnostics for discrete-angle "
                    "parameterized quantum circuits.",
        epilog=__doc__.split("JSON schemas", 1)[1],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    groups = parser.add_subparsers(dest="group", required=True)

    g = groups.add_parser("circuit", help="circuit file checks")
    sub = g.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("validate", help="parse and validate a circuit file")
    p.add_argument("--circuit", required=True)
    p.set_defaults(handler=_cmd_circuit_validate)

    g = groups.add_parser("transform", help="circuit rewrites")
    sub = g.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("gadget", help="insert an ancilla gadget layer")
    p.add_argument("--circuit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--position", type=int, default=None,
                   help="gate index for the layer (default: end of circuit)")
    p.add_argument("--op", default="fixed_optimal",
                   choices=("fixed_optimal", "trainable_rxry"))
    p.set_defaults(handler=_cmd_transform_gadget)
    p = sub.add_parser("activate", help="activate a parameter or a zone")
    p.add_argument("--circuit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--target", type=int, default=None,
                   help="gate index of the pre-layer single-qubit rotation "
                        "to activate")
    p.add_argument("--zone", default=None,
                   help="comma-separated frontier wires for zone activation")
    p.add_argument("--observable", default=None,
                   help="observable file guiding the single-target probe")
    p.add_argument("--probe-budget", type=int, default=256)
    p.add_argument("--probe-seed", type=int, default=2026)
    p.set_defaults(handler=_cmd_transform_activate)

    g = groups.add_parser("analyze", help="structure reports")
    sub = g.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("lightcone", help="backward cone report")
    p.add_argument("--circuit", required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--position", type=int, default=None,
                   help="cone cut position (default: gadget_layer mark or 0)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_analyze_lightcone)
    p = sub.add_parser("split", help="term separation check")
    p.add_argument("--circuit", required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_analyze_split)
    p = sub.add_parser("bounds", help="closed-form trainability bounds")
    p.add_argument("--circuit", required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--op", default="fixed_optimal",
                   choices=("fixed_optimal", "trainable_rxry"))
    p.add_argument("--noise", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_analyze_bounds)
    p = sub.add_parser("placement", help="gadget placement advisor")
    p.add_argument("--dimension", type=int, required=True,
                   help="lattice dimension of the circuit layout")
    p.add_argument("--velocity", type=float, required=True,
                   help="operator spreading velocity in [0, 1]")
    p.add_argument("--locality", type=int, required=True,
                   help="observable locality k")
    p.add_argument("--n", type=int, required=True, help="qubit count")
    p.add_argument("--tail-depth", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_analyze_placement)

    g = groups.add_parser("estimate", help="variance estimation")
    sub = g.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("var", help="loss variance")
    _add_estimate_common(p)
    p.set_defaults(handler=_cmd_estimate_var)
    p = sub.add_parser("gradvar", help="gradient variance for one parameter")
    _add_estimate_common(p)
    p.add_argument("--param", type=int, required=True)
    p.set_defaults(handler=_cmd_estimate_gradvar)

    g = groups.add_parser("bench", help="benchmark harness")
    sub = g.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("tfi", help="transverse-field Ising study")
    p.add_argument("--n-min", type=int, required=True)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--n-step", type=int, default=1)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--blocks", type=int, default=None,
                   help="blocks per circuit (default: one per qubit)")
    p.add_argument("--gadget-block", type=int, default=None,
                   help="block index for the gadget (default: before last)")
    p.add_argument("--op", default="fixed_optimal",
                   choices=("fixed_optimal", "trainable_rxry"))
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--field", type=float, default=0.5)
    p.add_argument("--open-chain", action="store_true")
    p.add_argument("--ansatz", default=ANSATZ_VARIANT,
                   choices=sorted(ANSATZ_VARIANTS),
                   help="block layout of the ansatz")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_bench_tfi)

    g = groups.add_parser("verify", help="independent ground-truth checks")
    sub = g.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("two-design", help="discrete vs continuous twirl")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_verify_two_design)
    p = sub.add_parser("oracle", help="exact engine vs dense-matrix oracle")
    p.add_argument("--circuit", required=True)
    p.add_argument("--observable", required=True)
    p.add_argument("--samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", type=int, default=None,
                   help="also compare this parameter's gradient variance")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=_cmd_verify_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        stream=sys.stderr,
        format="%(levelname)s %(message)s",
    )
    try:
        return args.handler(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except CapExceededError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (CircuitError, EstimatorError, OracleError, ActivationInfeasible,
            OSError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
