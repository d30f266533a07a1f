"""Trainability diagnostics for Clifford+Pauli-rotation circuits.

The package represents parameterized circuits in a flat JSON-serializable
IR, rewrites them with variance-preserving gadget layers and parameter
activation, and estimates or certifies loss and gradient variances by
discrete-angle path sampling, exact enumeration, analytic lower bounds,
and a dense-matrix oracle.
"""

from .bench import ExperimentPlan, plan_from_manifest, run_experiment, tfi_observable, thermal_ansatz
from .circuit import (
    ActivationRecord,
    Circuit,
    CircuitError,
    FixedParam,
    FreeParam,
    Gate,
    LightconeReport,
    Observable,
    SplitReport,
    backward_lightcone,
    circuit_from_dict,
    circuit_to_dict,
    full_lightcone,
    load_circuit,
    load_observable,
    make_observable,
    observable_from_dict,
    observable_to_dict,
    parse_circuit,
    placement_advisor,
    save_circuit,
    serialize_circuit,
    split_check,
    validate_circuit,
)
from .estimator import (
    BoundReport,
    CapExceededError,
    Channel,
    EstimatorError,
    NoiseModel,
    UnsupportedAngleError,
    bounds,
    grad_variance_exact,
    grad_variance_mc,
    mean_exact,
    path_sample,
    variance_and_grads_mc,
    variance_exact,
    variance_mc,
)
from .mpqc import (
    FIXED_OPTIMAL,
    TRAINABLE_RXRY,
    ActivationInfeasible,
    GadgetSpec,
    OpModel,
    activate_single,
    activate_zone,
    gadget_backpropagate,
    gadget_layout,
    insert_gadget_layer,
    op_model,
)
from .oracle import OracleError, continuous_variance, two_design_check
from .pauli import PauliError, PauliWord
from .results import EstimateResult

__all__ = [
    "ActivationInfeasible",
    "ActivationRecord",
    "BoundReport",
    "CapExceededError",
    "Channel",
    "Circuit",
    "CircuitError",
    "EstimateResult",
    "EstimatorError",
    "ExperimentPlan",
    "FIXED_OPTIMAL",
    "FixedParam",
    "FreeParam",
    "GadgetSpec",
    "Gate",
    "LightconeReport",
    "NoiseModel",
    "Observable",
    "OpModel",
    "OracleError",
    "PauliError",
    "PauliWord",
    "SplitReport",
    "TRAINABLE_RXRY",
    "UnsupportedAngleError",
    "activate_single",
    "activate_zone",
    "backward_lightcone",
    "bounds",
    "circuit_from_dict",
    "circuit_to_dict",
    "continuous_variance",
    "full_lightcone",
    "gadget_backpropagate",
    "gadget_layout",
    "grad_variance_exact",
    "grad_variance_mc",
    "insert_gadget_layer",
    "load_circuit",
    "load_observable",
    "make_observable",
    "mean_exact",
    "observable_from_dict",
    "observable_to_dict",
    "op_model",
    "parse_circuit",
    "path_sample",
    "placement_advisor",
    "plan_from_manifest",
    "run_experiment",
    "save_circuit",
    "serialize_circuit",
    "split_check",
    "tfi_observable",
    "thermal_ansatz",
    "two_design_check",
    "validate_circuit",
    "variance_and_grads_mc",
    "variance_exact",
    "variance_mc",
]

__version__ = "0.1.0"
