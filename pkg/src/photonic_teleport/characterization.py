"""Element-wise classical characterisation of the chip.

Two measurements are covered: the coupler reflectivity from bright-light
power transfer, which must not depend on unknown facet and propagation
losses, and the thermo-optic response of a pair of neighbouring heaters,
including thermal cross-talk.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

DEFAULT_RESISTANCE = 850.0  # ohm


class CharacterizationError(ValueError):
    pass


def double_ratio_reflectivity(power) -> float:
    """Coupler reflectivity from a 2x2 bright-light power matrix.

    ``power[i][j]`` is the power leaving output ``j`` with light injected at
    input ``i``. Per-port input and output losses multiply rows and columns
    and cancel in the cross/bar double ratio.
    """
    P = np.asarray(power, dtype=float)
    if P.shape != (2, 2):
        raise CharacterizationError(f"power matrix must be 2x2, got {P.shape}")
    if np.any(P < 0):
        raise CharacterizationError("optical powers must be non-negative")
    if np.any(P.sum(axis=1) <= 0):
        raise CharacterizationError("each input needs some detected power")
    bar = P[0, 0] * P[1, 1]
    if bar == 0:
        raise CharacterizationError("zero bar transmission: reflectivity 1 is outside the estimator domain")
    root = math.sqrt(P[0, 1] * P[1, 0] / bar)
    return root / (1.0 + root)


class HeaterPhase(NamedTuple):
    value: float
    in_range: bool


@dataclass
class CrosstalkModel:
    """Phase of one heater: ``a * P_self + b * P_neighbor + c`` with ``P = V**2 / R``."""

    a: float
    b: float
    c: float
    resistance: float = DEFAULT_RESISTANCE
    v_min: float = 0.0
    v_max: float = 10.0
    neighbor: str | None = None
    fringe_offset: float | None = None
    fringe_amplitude: float | None = None
    residual_rms: float | None = None
    stderr: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a <= 0:
            raise CharacterizationError(f"self-heating coefficient must be positive, got {self.a}")
        if abs(self.b) >= self.a:
            raise CharacterizationError("cross-talk coefficient must be weaker than self-heating")
        if self.resistance <= 0:
            raise CharacterizationError("heater resistance must be positive")

    def evaluate(self, v_self: float, v_neighbor: float = 0.0) -> HeaterPhase:
        in_range = all(self.v_min <= v <= self.v_max for v in (v_self, v_neighbor))
        value = (self.a * v_self**2 + self.b * v_neighbor**2) / self.resistance + self.c
        return HeaterPhase(float(value), in_range)

    def phase(self, v_self: float, v_neighbor: float = 0.0) -> float:
        res = self.evaluate(v_self, v_neighbor)
        if not res.in_range:
            warnings.warn(
                f"heater voltage outside calibrated range [{self.v_min}, {self.v_max}] V",
                stacklevel=2,
            )
        return res.value

    @property
    def max_phase_excursion(self) -> float:
        """Largest self-driven phase change over the calibrated range."""
        p = max(self.v_min**2, self.v_max**2) / self.resistance
        return self.a * p


def phase_from_heater(model: CrosstalkModel, v_self: float, v_neighbor: float = 0.0) -> HeaterPhase:
    """Evaluate a heater model; ``in_range`` is False outside the calibration."""
    return model.evaluate(v_self, v_neighbor)


class CrosstalkFit(RegressorMixin, BaseEstimator):
    """Fit a two-heater interference fringe ``A + B cos(a P_self + b P_neighbor + c)``.

    ``X`` has columns ``(v_self, v_neighbor)``; ``y`` is the fringe power. The
    phase coefficients are first located on a grid (the fringe is linear in
    ``A``, ``B cos c`` and ``B sin c`` once ``a`` and ``b`` are fixed) and then
    refined jointly by nonlinear least squares.
    """

    def __init__(self, resistance=DEFAULT_RESISTANCE, max_excursion=4 * math.pi,
                 grid_step=0.1, max_condition=1e8):
        self.resistance = resistance
        self.max_excursion = max_excursion
        self.grid_step = grid_step
        self.max_condition = max_condition

    def _powers(self, X):
        return X[:, 0] ** 2 / self.resistance, X[:, 1] ** 2 / self.resistance

    def _grid_start(self, ps, pn, y):
        scale = max(ps.max(), pn.max())
        xs, xn = ps / scale, pn / scale
        alphas = np.arange(self.grid_step, self.max_excursion + 1e-12, self.grid_step)
        best = (np.inf, None)
        for alpha in alphas:
            betas = np.arange(-alpha, alpha + 1e-12, self.grid_step)
            phase = alpha * xs[None, :] + betas[:, None] * xn[None, :]
            # for fixed (a, b) the fringe is linear in (A, B cos c, -B sin c)
            basis = np.stack([np.ones_like(phase), np.cos(phase), np.sin(phase)], axis=-1)
            gram = np.einsum("kpi,kpj->kij", basis, basis)
            rhs = np.einsum("kpi,p->ki", basis, y)
            coef = np.linalg.solve(gram + 1e-12 * np.eye(3), rhs[..., None])[..., 0]
            resid = y @ y - np.einsum("ki,ki->k", coef, rhs)
            k = int(np.argmin(resid))
            if resid[k] < best[0]:
                best = (resid[k], (alpha, betas[k], coef[k]))
        alpha, beta, (A, bc, bs) = best[1]
        B = math.hypot(bc, bs)
        c = math.atan2(-bs, bc)
        return np.array([alpha / scale, beta / scale, c, A, B])

    @staticmethod
    def _fringe(params, ps, pn):
        a, b, c, A, B = params
        return A + B * np.cos(a * ps + b * pn + c)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        if X.shape[1] != 2:
            raise CharacterizationError("X must have columns (v_self, v_neighbor)")
        ps, pn = self._powers(X)
        if np.ptp(ps) == 0 or np.ptp(pn) == 0:
            raise CharacterizationError("sweep must vary both heater voltages")
        start = self._grid_start(ps, pn, y)
        sol = least_squares(
            lambda p: self._fringe(p, ps, pn) - y, start,
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000, method="lm",
        )
        params = sol.x.copy()
        if params[4] < 0:  # B -> -B, c -> c + pi
            params[4] = -params[4]
            params[2] += math.pi
        if params[0] < 0:  # the fringe is even in the overall phase sign
            params[:3] = -params[:3]
        params[2] = (params[2] + math.pi) % (2 * math.pi) - math.pi

        J = sol.jac
        cond = np.linalg.cond(J)
        if not np.isfinite(cond) or cond > self.max_condition:
            raise CharacterizationError(
                f"sweep does not constrain the fit (condition number {cond:.3g})"
            )
        resid = self._fringe(params, ps, pn) - y
        dof = max(len(y) - 5, 1)
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(J.T @ J)
        self.a_, self.b_, self.c_, self.offset_, self.amplitude_ = (float(v) for v in params)
        self.stderr_ = dict(zip(("a", "b", "c", "A", "B"), np.sqrt(np.clip(np.diag(cov), 0, None))))
        self.residual_rms_ = float(math.sqrt(float(resid @ resid) / len(y)))
        self.condition_number_ = float(cond)
        self.v_range_ = (float(X.min()), float(X.max()))
        return self

    def predict(self, X):
        check_is_fitted(self, "a_")
        X = check_array(X, dtype=float)
        ps, pn = self._powers(X)
        return self._fringe((self.a_, self.b_, self.c_, self.offset_, self.amplitude_), ps, pn)

    def phase(self, X):
        check_is_fitted(self, "a_")
        X = check_array(X, dtype=float)
        ps, pn = self._powers(X)
        return self.a_ * ps + self.b_ * pn + self.c_

    def to_model(self, neighbor: str | None = None) -> CrosstalkModel:
        check_is_fitted(self, "a_")
        return CrosstalkModel(
            a=self.a_, b=self.b_, c=self.c_, resistance=self.resistance,
            v_min=self.v_range_[0], v_max=self.v_range_[1], neighbor=neighbor,
            fringe_offset=self.offset_, fringe_amplitude=self.amplitude_,
            residual_rms=self.residual_rms_, stderr=dict(self.stderr_),
        )


def fit_crosstalk(sweep, resistance: float = DEFAULT_RESISTANCE, neighbor: str | None = None) -> CrosstalkModel:
    """Fit a cross-talk model to rows of ``(v_self, v_neighbor, power)``."""
    data = np.asarray(sweep, dtype=float)
    if data.ndim != 2 or data.shape[1] != 3:
        raise CharacterizationError("sweep rows must be (v_self, v_neighbor, power)")
    est = CrosstalkFit(resistance=resistance).fit(data[:, :2], data[:, 2])
    return est.to_model(neighbor=neighbor)


def synthetic_sweep(model: CrosstalkModel, v_self, v_neighbor, offset=0.5, amplitude=0.5,
                    noise=0.0, rng=None) -> np.ndarray:
    """Fringe data on a voltage grid, with optional multiplicative noise."""
    vs, vn = np.meshgrid(np.asarray(v_self, float), np.asarray(v_neighbor, float), indexing="ij")
    vs, vn = vs.ravel(), vn.ravel()
    phase = (model.a * vs**2 + model.b * vn**2) / model.resistance + model.c
    power = offset + amplitude * np.cos(phase)
    if noise:
        rng = np.random.default_rng(rng)
        power = power * (1.0 + noise * rng.standard_normal(power.shape))
    return np.column_stack([vs, vn, power])


def read_sweep_csv(path) -> np.ndarray:
    """Load a sweep CSV with header ``v_self,v_neighbor,power``."""
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    missing = {"v_self", "v_neighbor", "power"} - set(rows[0] if rows else ())
    if missing:
        raise CharacterizationError(f"sweep CSV missing columns: {', '.join(sorted(missing))}")
    return np.array([[float(r["v_self"]), float(r["v_neighbor"]), float(r["power"])] for r in rows])


def heatercal_line(name: str, model: CrosstalkModel) -> str:
    vals = " ".join(repr(float(x)) for x in (model.a, model.b, model.c, model.resistance,
                                              model.v_min, model.v_max))
    return f"HEATERCAL {name} {vals}" + (f" {model.neighbor}" if model.neighbor else "")


def reachable_octants(theta_max: float, phi_max: float, theta_min: float = 0.0,
                      phi_min: float = 0.0, tol: float = 0.05, n: int = 201) -> int:
    """Bloch-sphere octants touched by ``cos(t/2)|0> + e^{ip} sin(t/2)|1>``.

    Points within ``tol`` of an octant boundary are ignored, so a tuning range
    that just overshoots pi/2 still counts as a single octant.
    """
    t, p = np.meshgrid(np.linspace(theta_min, theta_max, n), np.linspace(phi_min, phi_max, n))
    vec = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)
    signs = set()
    for v in vec:
        s = tuple(int(np.sign(x)) if abs(x) > tol else 0 for x in v)
        if 0 in s:
            continue
        signs.add(s)
    return max(len(signs), 1)


def tuning_range_report(theta_model: CrosstalkModel, phi_model: CrosstalkModel) -> dict:
    """Accessible preparation range for a pair of calibrated heaters."""
    theta_max = theta_model.max_phase_excursion
    phi_max = phi_model.max_phase_excursion
    octants = reachable_octants(theta_max, phi_max)
    return {
        "theta_max": theta_max,
        "phi_max": phi_max,
        "octants": octants,
        "one_octant": octants == 1,
    }
