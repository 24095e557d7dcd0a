"""Virtual teleportation experiment: simulate counts, reconstruct, correct, report."""

from __future__ import annotations

import configparser
import csv
import datetime as _dt
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fock
from .circuit import (
    CircuitLayout,
    assemble_transfer,
    load_layout,
    perturb_couplers,
    reference_chip_layout,
)
from .protocol import (
    CLASSICAL_LIMIT,
    CLONING_LIMIT,
    DEFAULT_INPUTS,
    STANDARD_SETTINGS,
    QubitResponse,
    average_fidelity,
    bsm_outcomes,
    conditional_state,
    core_response,
    fidelity,
    ideal_corrections,
    measure_phases,
    normalize_state,
    optimal_corrections,
    prep_phases,
    with_transmissions,
)
from .source import SourceModel
from .tomography import CountRecord, mle_reconstruct, monte_carlo_fidelity

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def substream(seed: int, name: str, *cell: int) -> np.random.Generator:
    """Independent generator for a named part of the run.

    ``cell`` indices give each independent unit of work its own stream, so
    results do not depend on the order in which cells are evaluated.
    """
    return np.random.default_rng([int(seed), zlib.crc32(name.encode()), *map(int, cell)])


@dataclass
class ExperimentConfig:
    seed: int
    layout: str = "reference"
    source: SourceModel = field(default_factory=SourceModel)
    inputs: dict = field(default_factory=lambda: dict(DEFAULT_INPUTS))
    settings: list = field(default_factory=lambda: list(STANDARD_SETTINGS))
    shots: int = 100
    correction: str = "optimized"
    supplied_corrections: list | None = None
    output_format: str = "json"
    eta_spread: float = 0.0
    eta_seed: int = 0
    mc_trials: int = 200
    correction_samples: int = 10000
    measurement_model: str = "characterized"
    likelihood: str = "poisson"
    fourfold_rate_hz: float = 0.005
    base_dir: str = "."

    def __post_init__(self):
        if self.shots <= 0:
            raise ConfigError("shots must be positive")
        if len(self.settings) < 3:
            raise ConfigError("at least three tomography settings are required")
        if self.correction not in ("ideal", "optimized", "supplied"):
            raise ConfigError(f"unknown correction mode {self.correction!r}")
        if self.correction == "supplied" and (not self.supplied_corrections
                                              or len(self.supplied_corrections) != 4):
            raise ConfigError("supplied correction mode needs four unitaries")
        if self.output_format not in ("json", "csv"):
            raise ConfigError(f"unknown output format {self.output_format!r}")
        if self.measurement_model not in ("characterized", "ideal"):
            raise ConfigError(f"unknown measurement model {self.measurement_model!r}")
        if self.mc_trials < 2:
            raise ConfigError("mc_trials must be at least 2")
        if not self.inputs:
            raise ConfigError("no input states")

    def load_layout(self, *, perturb: bool = True) -> CircuitLayout:
        if self.layout == "reference":
            layout = reference_chip_layout()
        else:
            path = Path(self.layout)
            if not path.is_absolute():
                path = Path(self.base_dir) / path
            layout = load_layout(path)
        if perturb and self.eta_spread:
            layout = perturb_couplers(layout, fabrication_deltas(layout, self.eta_spread, self.eta_seed))
        return layout

    def to_dict(self) -> dict:
        src = self.source
        return {
            "seed": self.seed,
            "layout": self.layout,
            "shots": self.shots,
            "correction": self.correction,
            "format": self.output_format,
            "eta_spread": self.eta_spread,
            "eta_seed": self.eta_seed,
            "mc_trials": self.mc_trials,
            "correction_samples": self.correction_samples,
            "measurement_model": self.measurement_model,
            "likelihood": self.likelihood,
            "fourfold_rate_hz": self.fourfold_rate_hz,
            "source": {
                "lambda_sq": src.lambda_sq,
                "v_nn": src.v_nn,
                "v_nb": src.v_nb,
                "photon_types": list(src.photon_types),
                "transmissions": list(src.transmissions),
                "herald_efficiency": src.herald_efficiency,
            },
            "inputs": {k: list(v) for k, v in self.inputs.items()},
            "settings": [list(s) for s in self.settings],
        }


def fabrication_deltas(layout: CircuitLayout, spread: float, seed: int) -> np.ndarray:
    """Reflectivity errors ``spread * z`` with a fixed standard-normal direction ``z``."""
    z = substream(seed, "fabrication").standard_normal(len(layout.couplers))
    return spread * z


def _floats(text: str, n: int | None, what: str) -> list[float]:
    try:
        vals = [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: expected numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {len(vals)}")
    return vals


def parse_config(text: str, *, base_dir: str = ".", seed: int | None = None) -> ExperimentConfig:
    """Read the INI-style experiment configuration."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(str(err)) from None
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    try:
        if seed is None:
            if "seed" not in exp:
                raise ConfigError("a seed is required")
            seed = int(exp["seed"])
        kw = {}
        for key, conv in (("layout", str), ("shots", int), ("correction", str),
                          ("format", str), ("eta_spread", float), ("eta_seed", int),
                          ("mc_trials", int), ("correction_samples", int),
                          ("measurement_model", str), ("likelihood", str),
                          ("fourfold_rate_hz", float)):
            if key in exp:
                kw["output_format" if key == "format" else key] = conv(exp[key])
        src = {}
        if cp.has_section("source"):
            s = cp["source"]
            for key in ("lambda_sq", "v_nn", "v_nb", "herald_efficiency"):
                if key in s:
                    src[key] = float(s[key])
            if s.get("transmissions", "").strip():
                src["transmissions"] = tuple(_floats(s["transmissions"], None, "transmissions"))
            if s.get("photon_types", "").strip():
                src["photon_types"] = tuple(s["photon_types"].replace(",", " ").split())
            for key, val in s.items():
                if key.startswith("v_") and "-" in key[2:]:
                    i, j = (int(x) for x in key[2:].split("-"))
                    src.setdefault("visibilities", {})[(i, j)] = float(val)
        kw["source"] = SourceModel(**src)
        if cp.has_section("inputs"):
            kw["inputs"] = {k: tuple(_floats(v, 2, f"input {k}")) for k, v in cp["inputs"].items()}
        if cp.has_section("tomography"):
            kw["settings"] = [tuple(_floats(v, 2, f"setting {k}")) for k, v in cp["tomography"].items()]
        if cp.has_section("corrections"):
            mats = []
            for k, v in cp["corrections"].items():
                vals = _floats(v, 8, f"correction {k}")
                mats.append(np.array(vals[0::2], float).reshape(2, 2)
                            + 1j * np.array(vals[1::2], float).reshape(2, 2))
            kw["supplied_corrections"] = mats
    except (KeyError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from None
    return ExperimentConfig(seed=seed, base_dir=base_dir, **kw)


def load_config(path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=str(path.parent), seed=seed)


# --- report -----------------------------------------------------------------


def _cmat(m) -> dict:
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def _from_cmat(d) -> np.ndarray:
    # assign parts separately so signed zeros survive a round trip
    re = np.array(d["re"], float)
    out = np.empty(re.shape, complex)
    out.real, out.imag = re, np.array(d["im"], float)
    return out


@dataclass
class ReportEntry:
    input_name: str
    outcome_index: int
    outcome_label: str
    input_state: np.ndarray
    counts: list
    rho: np.ndarray
    correction: np.ndarray
    fidelity: float
    fidelity_mc: float
    fidelity_error: float
    predicted_fidelity: float
    outcome_probability: float

    def to_dict(self) -> dict:
        return {
            "input": self.input_name,
            "outcome_index": self.outcome_index,
            "outcome": self.outcome_label,
            "input_state": _cmat(self.input_state),
            "counts": self.counts,
            "rho": _cmat(self.rho),
            "correction": _cmat(self.correction),
            "fidelity": self.fidelity,
            "fidelity_mc_mean": self.fidelity_mc,
            "fidelity_error": self.fidelity_error,
            "predicted_fidelity": self.predicted_fidelity,
            "outcome_probability": self.outcome_probability,
        }

    @classmethod
    def from_dict(cls, d) -> "ReportEntry":
        return cls(
            input_name=d["input"],
            outcome_index=d["outcome_index"],
            outcome_label=d["outcome"],
            input_state=_from_cmat(d["input_state"]),
            counts=d["counts"],
            rho=_from_cmat(d["rho"]),
            correction=_from_cmat(d["correction"]),
            fidelity=d["fidelity"],
            fidelity_mc=d["fidelity_mc_mean"],
            fidelity_error=d["fidelity_error"],
            predicted_fidelity=d["predicted_fidelity"],
            outcome_probability=d["outcome_probability"],
        )


@dataclass
class ExperimentReport:
    config: dict
    entries: list
    per_outcome: dict
    overall: dict
    metadata: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config": self.config,
            "entries": [e.to_dict() for e in self.entries],
            "per_outcome": self.per_outcome,
            "overall": self.overall,
            "reference_lines": {"classical_limit": CLASSICAL_LIMIT, "cloning_limit": CLONING_LIMIT},
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d) -> "ExperimentReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"unsupported report schema version {d.get('schema_version')}")
        return cls(
            config=d["config"],
            entries=[ReportEntry.from_dict(e) for e in d["entries"]],
            per_outcome=d["per_outcome"],
            overall=d["overall"],
            metadata=d.get("metadata", {}),
            schema_version=d["schema_version"],
        )

    def to_json(self, *, include_timestamp: bool = True) -> str:
        d = self.to_dict()
        if not include_timestamp:
            d["metadata"] = {k: v for k, v in d["metadata"].items() if k != "timestamp"}
        return json.dumps(d, indent=2, sort_keys=True)

    @property
    def average_fidelity(self) -> float:
        return self.overall["fidelity"]


def load_report(path) -> ExperimentReport:
    with open(path, encoding="utf-8") as fh:
        return ExperimentReport.from_dict(json.load(fh))


# --- running ------------------------------------------------------------------


def _corrections(config: ExperimentConfig, layout: CircuitLayout):
    if config.correction == "ideal":
        return ideal_corrections()
    if config.correction == "supplied":
        return [np.asarray(U, complex) for U in config.supplied_corrections]
    # the correction search only knows the classical characterisation of the chip
    chip_only = SourceModel(transmissions=config.source.transmissions)
    corr, _ = optimal_corrections(layout, chip_only, n_samples=config.correction_samples,
                                  seed=substream(config.seed, "haar-samples"))
    return corr


def _detected_key(layout: CircuitLayout, outcome, rail: int) -> tuple:
    q1, q2, q3 = (layout.qubits[q] for q in ("Q1", "Q2", "Q3"))
    occ = [0] * 6
    occ[outcome.q1_rail] = 1
    occ[2 + outcome.q2_rail] = 1
    occ[4 + rail] = 1
    return tuple(occ)


def simulate_setting(layout: CircuitLayout, source: SourceModel, prep, setting) -> dict:
    """Absolute probabilities of the eight three-fold patterns for one chip setting.

    Keys are ``(outcome_index, rail)``; rail 0 is a pass of the tomography
    projector.
    """
    lay = with_transmissions(layout, source)
    phases = {**prep_phases(*prep), **measure_phases(*setting)}
    U = assemble_transfer(lay, phases)
    resp = QubitResponse(U, lay, source, inject=False)
    out = {}
    for o in bsm_outcomes():
        rho = resp.states([(1.0, 0.0)], o.index)[0]
        out[(o.index, 0)] = float(np.real(rho[0, 0]))
        out[(o.index, 1)] = float(np.real(rho[1, 1]))
    return out


def prepared_state(layout: CircuitLayout, prep) -> np.ndarray:
    """State the preparation interferometer actually produces."""
    U = assemble_transfer(layout, prep_phases(*prep), sections=["prep"])
    q1 = layout.qubits["Q1"]
    return normalize_state(U[np.ix_(q1.in_modes, q1.in_modes)][:, 0])


def measurement_operators(layout: CircuitLayout, setting) -> tuple[np.ndarray, np.ndarray]:
    """POVM elements of the tomography interferometer as built."""
    U = assemble_transfer(layout, measure_phases(*setting), sections=["measure"])
    rails = layout.qubits["Q3"].out_modes
    V = U[np.ix_(rails, rails)]
    e0, e1 = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    return V.conj().T @ e0 @ V, V.conj().T @ e1 @ V


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Full virtual experiment for every input state and Bell outcome."""
    layout = config.load_layout()
    source = config.source
    corrections = _corrections(config, layout)
    predicted_resp = core_response(layout, source)

    entries = []
    total_events = 0
    for i_in, (name, prep) in enumerate(config.inputs.items()):
        psi_in = prepared_state(layout, prep)
        records = {o.index: [] for o in bsm_outcomes()}
        probs = {o.index: [] for o in bsm_outcomes()}
        for i_set, setting in enumerate(config.settings):
            try:
                p = simulate_setting(layout, source, prep, setting)
            except Exception as err:
                raise type(err)(f"input {name}, setting {setting}: {err}") from err
            dist = fock.OutcomeDistribution(
                {_detected_key(layout, bsm_outcomes()[oi], rail): v for (oi, rail), v in p.items()}
            )
            # about `shots` coincidences per outcome and setting
            counts = fock.sample_counts(dist, 4 * config.shots, substream(config.seed, "counts", i_in, i_set))
            total_events += sum(counts.values())
            if config.measurement_model == "characterized":
                ops = measurement_operators(layout, setting)
            else:
                ops = (None, None)
            for o in bsm_outcomes():
                n_pass = counts.get(_detected_key(layout, o, 0), 0)
                n_fail = counts.get(_detected_key(layout, o, 1), 0)
                records[o.index].append(
                    CountRecord(setting[0], setting[1], o.index, n_pass, n_fail, *ops)
                )
                probs[o.index].append(p[(o.index, 0)] + p[(o.index, 1)])
        for o in bsm_outcomes():
            recs = records[o.index]
            U = corrections[o.index]
            rho = mle_reconstruct(recs, likelihood=config.likelihood).rho
            f_mc, f_err = monte_carlo_fidelity(recs, psi_in, U, trials=config.mc_trials,
                                               seed=substream(config.seed, "monte-carlo", i_in, o.index),
                                               likelihood=config.likelihood)
            rho_pred, _ = conditional_state(layout, source, psi_in, o, response=predicted_resp)
            entries.append(ReportEntry(
                input_name=name,
                outcome_index=o.index,
                outcome_label=o.label,
                input_state=psi_in,
                counts=[[r.theta2, r.phi2, r.pass_counts, r.fail_counts] for r in recs],
                rho=rho,
                correction=U,
                fidelity=fidelity(rho, psi_in, U),
                fidelity_mc=f_mc,
                fidelity_error=f_err,
                predicted_fidelity=fidelity(rho_pred, psi_in, U) if rho_pred is not None else 0.0,
                outcome_probability=float(np.mean(probs[o.index])),
            ))

    per_outcome = {}
    for o in bsm_outcomes():
        es = [e for e in entries if e.outcome_index == o.index]
        per_outcome[o.label] = _aggregate(es)
    overall = _aggregate(entries)
    overall["success_probability"] = float(
        sum(per_outcome[o.label]["outcome_probability"] for o in bsm_outcomes())
    )
    rate = config.fourfold_rate_hz
    metadata = {
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "fourfold_rate_hz": rate,
        "recorded_events": total_events,
        "equivalent_acquisition_hours": total_events / (4 * rate) / 3600.0 if rate > 0 else None,
        "event_rate_per_pulse": overall["success_probability"] * source.herald_efficiency,
    }
    return ExperimentReport(config=config.to_dict(), entries=entries, per_outcome=per_outcome,
                            overall=overall, metadata=metadata)


def _aggregate(entries) -> dict:
    f = np.array([e.fidelity for e in entries])
    err = np.array([e.fidelity_error for e in entries])
    return {
        "fidelity": float(f.mean()),
        # independent per-state errors combine in quadrature for the mean
        "fidelity_error": float(math.sqrt(np.sum(err**2)) / len(err)),
        "predicted_fidelity": float(np.mean([e.predicted_fidelity for e in entries])),
        "outcome_probability": float(np.mean([e.outcome_probability for e in entries])),
        "exceeds_classical": bool(f.mean() > CLASSICAL_LIMIT),
    }


def emit_report(report: ExperimentReport, fmt: str, path) -> list[Path]:
    """Write the report and a plot-data file next to it; returns written paths."""
    path = Path(path)
    if not path.parent.exists():
        raise OSError(f"output directory {path.parent} does not exist")
    written = []
    if fmt == "json":
        path.write_text(report.to_json() + "\n", encoding="utf-8")
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["input", "outcome_index", "outcome", "fidelity", "fidelity_error",
                        "predicted_fidelity", "outcome_probability",
                        "rho_00", "rho_01_re", "rho_01_im", "rho_11"])
            for e in report.entries:
                w.writerow([e.input_name, e.outcome_index, e.outcome_label, repr(e.fidelity),
                            repr(e.fidelity_error), repr(e.predicted_fidelity),
                            repr(e.outcome_probability), repr(float(e.rho[0, 0].real)),
                            repr(float(e.rho[0, 1].real)), repr(float(e.rho[0, 1].imag)),
                            repr(float(e.rho[1, 1].real))])
    else:
        raise ConfigError(f"unknown output format {fmt!r}")
    written.append(path)
    plot = path.with_name(path.stem + ".plot.json")
    plot.write_text(json.dumps(plot_data(report), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(plot)
    return written


def plot_data(report: ExperimentReport) -> dict:
    """Fidelity per input and outcome with the reference bounds, ready to plot."""
    series = {}
    for e in report.entries:
        s = series.setdefault(e.outcome_label, {"inputs": [], "fidelity": [], "error": [],
                                                "predicted": []})
        s["inputs"].append(e.input_name)
        s["fidelity"].append(e.fidelity)
        s["error"].append(e.fidelity_error)
        s["predicted"].append(e.predicted_fidelity)
    return {
        "schema_version": SCHEMA_VERSION,
        "series": series,
        "averages": {k: {"measured": v["fidelity"], "error": v["fidelity_error"],
                         "predicted": v["predicted_fidelity"]}
                     for k, v in report.per_outcome.items()},
        "reference_lines": {"classical_limit": CLASSICAL_LIMIT, "cloning_limit": CLONING_LIMIT},
    }


# --- error budget -------------------------------------------------------------

BUDGET_AXES = ("eta_scale", "lambda_sq", "distinguishability", "unbalanced_loss")


def budget_point(layout: CircuitLayout, *, eta_scale: float = 0.0, eta_spread: float = 0.08,
                 eta_seed: int = 0, lambda_sq: float = 0.0, distinguishability: float = 0.0,
                 unbalanced_loss: float = 0.0, n_samples: int = 2000, seed: int = 0) -> float:
    """Haar-averaged teleportation fidelity with optimised corrections.

    ``eta_scale`` multiplies the fabrication error pattern of ``eta_spread``;
    ``distinguishability`` is ``1 - v`` for every photon pair;
    ``unbalanced_loss`` removes that fraction of the light in the second rail
    of every qubit.
    """
    if eta_scale:
        layout = perturb_couplers(layout, eta_scale * fabrication_deltas(layout, eta_spread, eta_seed))
    transmissions = ()
    if unbalanced_loss:
        t = [1.0] * layout.n_modes
        for q in layout.qubits.values():
            t[q.out_modes[1]] = 1.0 - unbalanced_loss
        transmissions = tuple(t)
    v = 1.0 - distinguishability
    source = SourceModel(lambda_sq=lambda_sq, v_nn=v, v_nb=v, transmissions=transmissions)
    chip_only = SourceModel(transmissions=transmissions)
    rng = substream(seed, "haar-samples")
    corr, _ = optimal_corrections(layout, chip_only, n_samples=n_samples, seed=rng)
    fids = average_fidelity(layout, source, corr, n_samples=n_samples,
                            seed=substream(seed, "budget-inputs"))
    return float(np.mean(fids))


def budget_scan(layout: CircuitLayout, grid: dict, *, eta_spread: float = 0.08, eta_seed: int = 0,
                n_samples: int = 2000, seed: int = 0) -> list[dict]:
    """Average fidelity along each error axis with every other source ideal.

    ``grid`` maps axis names from :data:`BUDGET_AXES` to lists of values.
    """
    rows = []
    for axis, values in grid.items():
        if axis not in BUDGET_AXES:
            raise ConfigError(f"unknown budget axis {axis!r}")
        for val in values:
            f = budget_point(layout, **{axis: float(val)}, eta_spread=eta_spread,
                             eta_seed=eta_seed, n_samples=n_samples, seed=seed)
            rows.append({"axis": axis, "value": float(val), "average_fidelity": f})
    return rows


DEFAULT_BUDGET_GRID = {
    "eta_scale": [0.0, 0.25, 0.5, 0.75, 1.0],
    "lambda_sq": [0.0, 0.01, 0.03, 0.1],
    "distinguishability": [0.0, 0.01, 0.02, 0.03, 0.05],
    "unbalanced_loss": [0.0, 0.05, 0.1, 0.2],
}
