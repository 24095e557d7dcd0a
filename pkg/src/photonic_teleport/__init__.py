"""Simulation of single-qubit teleportation on a reconfigurable photonic chip."""

from .characterization import (
    CharacterizationError,
    CrosstalkFit,
    CrosstalkModel,
    double_ratio_reflectivity,
    fit_crosstalk,
    phase_from_heater,
)
from .circuit import (
    CircuitLayout,
    LayoutError,
    assemble_transfer,
    load_layout,
    parse_layout,
    reference_chip_layout,
    serialize_layout,
)
from .experiment import (
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    budget_scan,
    emit_report,
    load_config,
    load_report,
    run_experiment,
)
from .fock import OutcomeDistribution, output_distribution, permanent, transition_amplitude
from .protocol import (
    ProtocolError,
    average_fidelity,
    bsm_outcomes,
    conditional_state,
    fidelity,
    ideal_corrections,
    measurement_projector,
    optimal_corrections,
    prepare_qubit,
)
from .source import SourceModel, SourceModelError
from .tomography import CountRecord, TomographyError, mle_reconstruct, monte_carlo_fidelity

__all__ = [
    "CharacterizationError", "CrosstalkFit", "CrosstalkModel", "double_ratio_reflectivity",
    "fit_crosstalk", "phase_from_heater",
    "CircuitLayout", "LayoutError", "assemble_transfer", "load_layout", "parse_layout",
    "reference_chip_layout", "serialize_layout",
    "ConfigError", "ExperimentConfig", "ExperimentReport", "budget_scan", "emit_report",
    "load_config", "load_report", "run_experiment",
    "OutcomeDistribution", "output_distribution", "permanent", "transition_amplitude",
    "ProtocolError", "average_fidelity", "bsm_outcomes", "conditional_state", "fidelity",
    "ideal_corrections", "measurement_projector", "optimal_corrections", "prepare_qubit",
    "SourceModel", "SourceModelError",
    "CountRecord", "TomographyError", "mle_reconstruct", "monte_carlo_fidelity",
]
