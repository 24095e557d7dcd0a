"""Optical elements, circuit layouts and transfer-matrix assembly.

Layouts are stored as line-oriented text::

    MODES 8
    QUBIT Q1 0 1 OUT 6 2
    INPUT 0 2 4
    SECTION prep
    BS 0 1 0.5 H1
    PS 0 HEATER theta1
    PS 1 1.5707963267949
    LOSS 3 0.9
    HEATERCAL theta1 0.05 0.002 0 850 0 6 phi1
    POSTSELECT PER_QUBIT 1

Couplers use the symmetric convention in which the reflected (cross) amplitude
carries a factor ``i``; ``eta`` is the intensity reflectivity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .characterization import CrosstalkModel


class LayoutError(ValueError):
    """Malformed or inconsistent circuit layout."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def coupler_matrix(eta: float) -> np.ndarray:
    """2x2 unitary of a coupler with intensity reflectivity ``eta``."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"reflectivity {eta} outside [0, 1]")
    t = math.sqrt(1.0 - eta)
    r = 1j * math.sqrt(eta)
    return np.array([[t, r], [r, t]], dtype=complex)


def mzi_unitary(eta1: float, eta2: float, theta: float, phi: float = 0.0) -> np.ndarray:
    """Mach-Zehnder interferometer with internal phase ``theta`` and external ``phi``.

    Both phases sit on the first mode: ``diag(e^{i phi}, 1) C(eta2)
    diag(e^{i theta}, 1) C(eta1)``. With ideal 50:50 couplers the cross
    probability is ``cos(theta / 2)**2``.
    """
    inner = np.diag([np.exp(1j * theta), 1.0])
    outer = np.diag([np.exp(1j * phi), 1.0])
    return outer @ coupler_matrix(eta2) @ inner @ coupler_matrix(eta1)


@dataclass(frozen=True)
class Coupler:
    i: int
    j: int
    eta: float
    label: str = ""
    section: str = ""


@dataclass(frozen=True)
class Phase:
    mode: int
    value: float | None = None
    heater: str | None = None
    section: str = ""


@dataclass(frozen=True)
class Loss:
    mode: int
    transmission: float
    section: str = ""


Element = Coupler | Phase | Loss


@dataclass(frozen=True)
class Qubit:
    """Dual-rail qubit: rails where its photon enters and where it is detected."""

    name: str
    in_modes: tuple[int, int]
    out_modes: tuple[int, int]


@dataclass
class CircuitLayout:
    n_modes: int
    elements: list = field(default_factory=list)
    qubits: dict = field(default_factory=dict)
    input_modes: tuple = ()
    postselect_per_qubit: int | None = None
    postselect_modes: dict = field(default_factory=dict)
    heater_cals: dict = field(default_factory=dict)

    @property
    def heaters(self) -> list[str]:
        """Named phase parameters in order of first appearance."""
        names: list[str] = []
        for el in self.elements:
            if isinstance(el, Phase) and el.heater and el.heater not in names:
                names.append(el.heater)
        return names

    @property
    def sections(self) -> list[str]:
        names: list[str] = []
        for el in self.elements:
            if el.section not in names:
                names.append(el.section)
        return names

    @property
    def couplers(self) -> list[Coupler]:
        return [el for el in self.elements if isinstance(el, Coupler)]

    def validate(self) -> None:
        def check_mode(m, what):
            if not 0 <= m < self.n_modes:
                raise LayoutError(f"{what} mode {m} outside [0, {self.n_modes})")

        for el in self.elements:
            if isinstance(el, Coupler):
                check_mode(el.i, "coupler")
                check_mode(el.j, "coupler")
                if el.i == el.j:
                    raise LayoutError(f"coupler joins mode {el.i} to itself")
                if not 0.0 <= el.eta <= 1.0:
                    raise LayoutError(f"reflectivity {el.eta} outside [0, 1]")
            elif isinstance(el, Phase):
                check_mode(el.mode, "phase")
                if (el.value is None) == (el.heater is None):
                    raise LayoutError("phase needs exactly one of a value or a heater")
            elif isinstance(el, Loss):
                check_mode(el.mode, "loss")
                if not 0.0 <= el.transmission <= 1.0:
                    raise LayoutError(f"transmission {el.transmission} outside [0, 1]")
        seen_in: set[int] = set()
        seen_out: set[int] = set()
        for q in self.qubits.values():
            for m in q.in_modes + q.out_modes:
                check_mode(m, f"qubit {q.name}")
            if seen_in & set(q.in_modes) or seen_out & set(q.out_modes):
                raise LayoutError(f"qubit {q.name} shares rails with another qubit")
            seen_in |= set(q.in_modes)
            seen_out |= set(q.out_modes)
        for m in self.input_modes:
            check_mode(m, "input")
        for name in self.heater_cals:
            if name not in self.heaters:
                raise LayoutError(f"calibration for unknown heater {name!r}")

    def with_elements(self, elements: Sequence) -> "CircuitLayout":
        return CircuitLayout(
            n_modes=self.n_modes,
            elements=list(elements),
            qubits=dict(self.qubits),
            input_modes=tuple(self.input_modes),
            postselect_per_qubit=self.postselect_per_qubit,
            postselect_modes=dict(self.postselect_modes),
            heater_cals=dict(self.heater_cals),
        )


def _embed_rows(U: np.ndarray, i: int, j: int, block: np.ndarray) -> None:
    rows = U[[i, j], :]
    U[[i, j], :] = block @ rows


def resolve_phases(
    layout: CircuitLayout,
    phases: Mapping[str, float] | None = None,
    voltages: Mapping[str, float] | None = None,
) -> dict[str, float]:
    """Bind every heater of ``layout`` to a phase in radians.

    Explicit ``phases`` win; remaining heaters are evaluated from
    ``voltages`` through the layout's cross-talk calibrations.
    """
    bound = dict(phases or {})
    if voltages:
        for name, model in layout.heater_cals.items():
            if name in bound or name not in voltages:
                continue
            v_neighbor = voltages.get(model.neighbor, 0.0) if model.neighbor else 0.0
            bound[name] = model.phase(voltages[name], v_neighbor)
    missing = [h for h in layout.heaters if h not in bound]
    if missing:
        raise LayoutError(f"unbound phase parameters: {', '.join(missing)}")
    return bound


def assemble_transfer(
    layout: CircuitLayout,
    phases: Mapping[str, float] | None = None,
    *,
    voltages: Mapping[str, float] | None = None,
    sections: Sequence[str] | None = None,
) -> np.ndarray:
    """Transfer matrix of the layout, elements applied in listed order.

    Loss on mode ``i`` scales row ``i`` by ``sqrt(t)``. ``sections`` restricts
    assembly to elements tagged with those section names.
    """
    keep = None if sections is None else set(sections)
    elements = [el for el in layout.elements if keep is None or el.section in keep]
    needed = {el.heater for el in elements if isinstance(el, Phase) and el.heater}
    sub = layout.with_elements(elements)
    bound = resolve_phases(sub, phases, voltages) if needed else dict(phases or {})

    U = np.eye(layout.n_modes, dtype=complex)
    for el in elements:
        if isinstance(el, Coupler):
            _embed_rows(U, el.i, el.j, coupler_matrix(el.eta))
        elif isinstance(el, Phase):
            value = el.value if el.heater is None else bound[el.heater]
            U[el.mode, :] *= np.exp(1j * value)
        elif isinstance(el, Loss):
            U[el.mode, :] *= math.sqrt(el.transmission)
    return U


def qubit_block(U: np.ndarray, q: Qubit, *, out: str = "out") -> np.ndarray:
    """2x2 map from a qubit's input rails to its output (or input) rails."""
    rows = q.out_modes if out == "out" else q.in_modes
    return U[np.ix_(rows, q.in_modes)]


# --- text format -----------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _int(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise LayoutError(f"{what} must be an integer, got {tok!r}", lineno) from None


def _float(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise LayoutError(f"{what} must be a number, got {tok!r}", lineno) from None


def parse_layout(text: str) -> CircuitLayout:
    """Parse the line-oriented layout format; errors carry the line number."""
    n_modes = None
    layout = CircuitLayout(n_modes=0)
    section = ""

    def mode(tok, lineno, what="mode"):
        m = _int(tok, lineno, what)
        if n_modes is None:
            raise LayoutError("MODES must come before any element", lineno)
        if not 0 <= m < n_modes:
            raise LayoutError(f"{what} {m} outside [0, {n_modes})", lineno)
        return m

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key, args = tok[0].upper(), tok[1:]
        try:
            if key == "MODES":
                if len(args) != 1:
                    raise LayoutError("MODES takes one argument", lineno)
                n_modes = _int(args[0], lineno, "mode count")
                if n_modes < 1:
                    raise LayoutError("mode count must be positive", lineno)
                layout.n_modes = n_modes
            elif key == "QUBIT":
                if len(args) not in (3, 6) or (len(args) == 6 and args[3].upper() != "OUT"):
                    raise LayoutError("expected QUBIT <name> <a> <b> [OUT <a> <b>]", lineno)
                ins = (mode(args[1], lineno), mode(args[2], lineno))
                outs = (mode(args[4], lineno), mode(args[5], lineno)) if len(args) == 6 else ins
                layout.qubits[args[0]] = Qubit(args[0], ins, outs)
            elif key == "INPUT":
                layout.input_modes = tuple(mode(a, lineno) for a in args)
            elif key == "SECTION":
                if len(args) != 1:
                    raise LayoutError("SECTION takes one name", lineno)
                section = args[0]
            elif key == "BS":
                if len(args) not in (3, 4):
                    raise LayoutError("expected BS <i> <j> <eta> [label]", lineno)
                i, j = mode(args[0], lineno), mode(args[1], lineno)
                eta = _float(args[2], lineno, "reflectivity")
                if not 0.0 <= eta <= 1.0:
                    raise LayoutError(f"reflectivity {eta} outside [0, 1]", lineno)
                if i == j:
                    raise LayoutError("coupler joins a mode to itself", lineno)
                label = args[3] if len(args) == 4 else ""
                layout.elements.append(Coupler(i, j, eta, label, section))
            elif key == "PS":
                if len(args) == 2:
                    layout.elements.append(
                        Phase(mode(args[0], lineno), value=_float(args[1], lineno, "phase"),
                              section=section)
                    )
                elif len(args) == 3 and args[1].upper() == "HEATER":
                    layout.elements.append(
                        Phase(mode(args[0], lineno), heater=args[2], section=section)
                    )
                else:
                    raise LayoutError("expected PS <i> (<radians> | HEATER <name>)", lineno)
            elif key == "LOSS":
                if len(args) != 2:
                    raise LayoutError("expected LOSS <i> <transmission>", lineno)
                t = _float(args[1], lineno, "transmission")
                if not 0.0 <= t <= 1.0:
                    raise LayoutError(f"transmission {t} outside [0, 1]", lineno)
                layout.elements.append(Loss(mode(args[0], lineno), t, section))
            elif key == "POSTSELECT":
                if len(args) == 2 and args[0].upper() == "PER_QUBIT":
                    layout.postselect_per_qubit = _int(args[1], lineno, "photons per qubit")
                elif args and all("=" in a for a in args):
                    for a in args:
                        m, n = a.split("=", 1)
                        layout.postselect_modes[mode(m, lineno)] = _int(n, lineno, "occupation")
                else:
                    raise LayoutError(
                        "expected POSTSELECT PER_QUBIT <n> or POSTSELECT <mode>=<n> ...", lineno
                    )
            elif key == "HEATERCAL":
                if len(args) not in (7, 8):
                    raise LayoutError(
                        "expected HEATERCAL <name> <a> <b> <c> <R> <v_min> <v_max> [neighbor]",
                        lineno,
                    )
                a, b, c, r, vmin, vmax = (_float(x, lineno, "calibration value") for x in args[1:7])
                layout.heater_cals[args[0]] = CrosstalkModel(
                    a=a, b=b, c=c, resistance=r, v_min=vmin, v_max=vmax,
                    neighbor=args[7] if len(args) == 8 else None,
                )
            else:
                raise LayoutError(f"unknown directive {tok[0]!r}", lineno)
        except LayoutError as err:
            if err.line is None:
                raise LayoutError(str(err), lineno) from None
            raise
    if n_modes is None:
        raise LayoutError("missing MODES directive")
    try:
        layout.validate()
    except LayoutError as err:
        raise LayoutError(str(err)) from None
    return layout


def serialize_layout(layout: CircuitLayout) -> str:
    """Inverse of :func:`parse_layout`."""
    lines = [f"MODES {layout.n_modes}"]
    for q in layout.qubits.values():
        line = f"QUBIT {q.name} {q.in_modes[0]} {q.in_modes[1]}"
        if q.out_modes != q.in_modes:
            line += f" OUT {q.out_modes[0]} {q.out_modes[1]}"
        lines.append(line)
    if layout.input_modes:
        lines.append("INPUT " + " ".join(str(m) for m in layout.input_modes))
    section = ""
    for el in layout.elements:
        if el.section != section:
            section = el.section
            lines.append(f"SECTION {section}")
        if isinstance(el, Coupler):
            lines.append(f"BS {el.i} {el.j} {_fmt(el.eta)}" + (f" {el.label}" if el.label else ""))
        elif isinstance(el, Phase):
            if el.heater is not None:
                lines.append(f"PS {el.mode} HEATER {el.heater}")
            else:
                lines.append(f"PS {el.mode} {_fmt(el.value)}")
        elif isinstance(el, Loss):
            lines.append(f"LOSS {el.mode} {_fmt(el.transmission)}")
    for name, m in layout.heater_cals.items():
        vals = " ".join(_fmt(x) for x in (m.a, m.b, m.c, m.resistance, m.v_min, m.v_max))
        lines.append(f"HEATERCAL {name} {vals}" + (f" {m.neighbor}" if m.neighbor else ""))
    if layout.postselect_per_qubit is not None:
        lines.append(f"POSTSELECT PER_QUBIT {layout.postselect_per_qubit}")
    if layout.postselect_modes:
        lines.append(
            "POSTSELECT " + " ".join(f"{m}={n}" for m, n in sorted(layout.postselect_modes.items()))
        )
    return "\n".join(lines) + "\n"


def load_layout(path) -> CircuitLayout:
    with open(path, encoding="utf-8") as fh:
        return parse_layout(fh.read())


def reference_chip_layout() -> CircuitLayout:
    """Bundled eight-mode teleportation chip with ideal component values."""
    text = resources.files("photonic_teleport.data").joinpath("reference_chip.layout").read_text(
        encoding="utf-8"
    )
    return parse_layout(text)


def perturb_couplers(layout: CircuitLayout, deltas: Mapping[int, float] | Sequence[float]) -> CircuitLayout:
    """Copy of ``layout`` with coupler ``k`` reflectivity shifted by ``deltas[k]``.

    ``deltas`` indexes couplers in layout order; results are clipped to [0, 1].
    """
    if not isinstance(deltas, Mapping):
        deltas = dict(enumerate(deltas))
    out = []
    k = 0
    for el in layout.elements:
        if isinstance(el, Coupler):
            d = deltas.get(k, 0.0)
            el = Coupler(el.i, el.j, float(np.clip(el.eta + d, 0.0, 1.0)), el.label, el.section)
            k += 1
        out.append(el)
    return layout.with_elements(out)


def add_losses(layout: CircuitLayout, transmissions: Mapping[int, float], section: str | None = None) -> CircuitLayout:
    """Copy of ``layout`` with output losses appended on the given modes."""
    sec = layout.elements[-1].section if section is None and layout.elements else (section or "")
    extra = [Loss(m, t, sec) for m, t in sorted(transmissions.items()) if t != 1.0]
    return layout.with_elements(list(layout.elements) + extra)
