"""Maximum-likelihood single-qubit tomography from pass/fail coincidence counts."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .protocol import SX, SY, SZ, I2, fidelity, measurement_projector


class TomographyError(ValueError):
    pass


@dataclass
class CountRecord:
    """Counts for one tomography setting and Bell outcome.

    ``pass_op`` and ``fail_op`` are the POVM elements for detection in the
    first and second rail; when omitted the ideal projectors for
    ``(theta2, phi2)`` are used.
    """

    theta2: float
    phi2: float
    outcome_index: int
    pass_counts: int
    fail_counts: int
    pass_op: np.ndarray | None = field(default=None, repr=False)
    fail_op: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.pass_counts < 0 or self.fail_counts < 0:
            raise TomographyError("counts must be non-negative")

    def operators(self) -> tuple[np.ndarray, np.ndarray]:
        if self.pass_op is not None and self.fail_op is not None:
            return np.asarray(self.pass_op, complex), np.asarray(self.fail_op, complex)
        P = measurement_projector(self.theta2, self.phi2)
        return P, I2 - P


def born_probabilities(rho, operators) -> np.ndarray:
    """``tr(E_i rho)`` for each operator."""
    rho = np.asarray(rho, dtype=complex)
    return np.array([float(np.real(np.trace(E @ rho))) for E in operators])


def trace_distance(a, b) -> float:
    ev = np.linalg.eigvalsh(np.asarray(a, complex) - np.asarray(b, complex))
    return float(0.5 * np.abs(ev).sum())


def state_fidelity(a, b) -> float:
    """Uhlmann fidelity ``(tr sqrt(sqrt(a) b sqrt(a)))**2``."""
    w, V = np.linalg.eigh(np.asarray(a, complex))
    sa = V @ np.diag(np.sqrt(np.clip(w, 0, None))) @ V.conj().T
    ev = np.linalg.eigvalsh(sa @ np.asarray(b, complex) @ sa)
    return float(np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2)


def _check_complete(ops) -> None:
    basis = (I2, SX, SY, SZ)
    A = np.array([[np.real(np.trace(E @ P)) for P in basis] for E in ops])
    _, s, Vt = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-9 * s[0])) if len(s) else 0
    if rank < 4:
        null = Vt[rank:]
        names = []
        for v in null:
            axis = "IXYZ"[int(np.argmax(np.abs(v)))]
            names.append(axis)
        raise TomographyError(
            "measurement set is not informationally complete; unconstrained directions: "
            + ", ".join(sorted(set(names)))
        )


# T = [[x0, 0], [x2 + i x3, x1]], rho' = T^dag T
_BASIS = [
    np.array([[1, 0], [0, 0]], complex),
    np.array([[0, 0], [0, 1]], complex),
    np.array([[0, 0], [1, 0]], complex),
    np.array([[0, 0], [1j, 0]], complex),
]


def _T(x):
    return np.array([[x[0], 0], [x[2] + 1j * x[3], x[1]]], dtype=complex)


def _params_from_rho(rho) -> np.ndarray:
    # rho = T^dag T with T lower triangular: T^dag is the upper Cholesky factor reversed
    w, V = np.linalg.eigh(rho)
    rho = V @ np.diag(np.clip(w, 1e-6 * max(w.max(), 1e-300), None)) @ V.conj().T
    # rho = T^dag T; with J the exchange matrix, J rho J = (J T^dag J)(J T J) is a Cholesky split
    J = np.array([[0, 1], [1, 0]])
    L = np.linalg.cholesky(J @ rho @ J)  # J rho J = L L^dag
    T = (J @ L @ J).conj().T
    return np.array([T[0, 0].real, T[1, 1].real, T[1, 0].real, T[1, 0].imag])


@dataclass
class MLEResult:
    rho: np.ndarray
    log_likelihood: float
    iterations: int
    history: list
    converged: bool


class _Likelihood:
    """Poisson or multinomial log-likelihood in the Cholesky parameters."""

    def __init__(self, records, likelihood: str):
        if likelihood not in ("poisson", "multinomial"):
            raise TomographyError(f"unknown likelihood {likelihood!r}")
        self.kind = likelihood
        ops, counts, group = [], [], []
        for s, rec in enumerate(records):
            p, f = rec.operators()
            ops += [p, f]
            counts += [rec.pass_counts, rec.fail_counts]
            group += [s, s]
        self.ops = np.array(ops)
        self.n = np.array(counts, dtype=float)
        self.group = np.array(group)
        self.n_groups = len(records)
        self.N = np.bincount(self.group, weights=self.n, minlength=self.n_groups)
        # d mu_j / d x_k = 2 Re tr(E_j T^dag B_k);  d2 mu_j / dx_k dx_l = 2 Re tr(E_j B_l^dag B_k)
        self.d2mu = np.array([[[2 * np.real(np.trace(E @ Bl.conj().T @ Bk)) for Bl in _BASIS]
                               for Bk in _BASIS] for E in self.ops])

    def mu(self, x):
        T = _T(x)
        rho = T.conj().T @ T
        return np.real(np.einsum("jab,ba->j", self.ops, rho))

    def value(self, x) -> float:
        mu = self.mu(x)
        pos = self.n > 0
        if np.any(mu[pos] <= 0):
            return -np.inf
        ll = float(np.sum(self.n[pos] * np.log(mu[pos])))
        S = np.bincount(self.group, weights=mu, minlength=self.n_groups)
        if self.kind == "poisson":
            return ll - float(S.sum())
        return ll - float(np.sum(self.N[self.N > 0] * np.log(S[self.N > 0])))

    def derivatives(self, x):
        T = _T(x)
        mu = self.mu(x)
        dmu = np.array([[2 * np.real(np.trace(E @ T.conj().T @ B)) for B in _BASIS] for E in self.ops])
        safe = np.where(mu > 0, mu, 1.0)
        r = np.where(self.n > 0, self.n / safe, 0.0)
        g = dmu.T @ r
        H = -np.einsum("j,jk,jl->kl", np.where(self.n > 0, self.n / safe**2, 0.0), dmu, dmu)
        H += np.einsum("j,jkl->kl", r, self.d2mu)
        S = np.bincount(self.group, weights=mu, minlength=self.n_groups)
        dS = np.array([np.bincount(self.group, weights=dmu[:, k], minlength=self.n_groups)
                       for k in range(4)]).T
        d2S = np.array([[np.bincount(self.group, weights=self.d2mu[:, k, l], minlength=self.n_groups)
                         for l in range(4)] for k in range(4)]).transpose(2, 0, 1)
        if self.kind == "poisson":
            f1, f2 = np.ones_like(S), np.zeros_like(S)
        else:
            Ss = np.where(S > 0, S, 1.0)
            f1, f2 = self.N / Ss, -self.N / Ss**2
        g -= dS.T @ f1
        H -= np.einsum("s,sk,sl->kl", f2, dS, dS) + np.einsum("s,skl->kl", f1, d2S)
        return g, H


def mle_reconstruct(records, *, likelihood: str = "poisson", tol: float = 1e-10,
                    max_iter: int = 10000, rho0=None) -> MLEResult:
    """Physical density matrix maximising the count likelihood.

    ``rho = T^dag T / tr(T^dag T)`` with ``T`` lower triangular keeps the
    estimate positive and normalised by construction. The ascent is a damped
    Newton iteration: a step is accepted only if the likelihood does not
    decrease, otherwise the damping grows.
    """
    records = list(records)
    if not records:
        raise TomographyError("no count records")
    model = _Likelihood(records, likelihood)
    _check_complete(list(model.ops))

    total = model.n.sum()
    if rho0 is None:
        scale = max(total, 1.0) / max(float(np.real(np.trace(model.ops.sum(axis=0)))), 1e-12)
        x = np.array([math.sqrt(scale), math.sqrt(scale), 0.0, 0.0])
    else:
        rho0 = np.asarray(rho0, complex)
        x = _params_from_rho(rho0 * max(total, 1.0) / len(records))
    ll = model.value(x)
    history = [ll]
    damping = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, H = model.derivatives(x)
        accepted = False
        while damping < 1e16:
            A = -H + damping * (np.abs(np.diag(H)).max() + 1e-12) * np.eye(4)
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                damping *= 10
                continue
            x_new = x + step
            ll_new = model.value(x_new)
            if np.isfinite(ll_new) and ll_new >= ll:
                accepted = True
                break
            damping *= 10
        if not accepted:
            converged = True
            break
        damping = max(damping / 10, 1e-12)
        change = ll_new - ll
        x, ll = x_new, ll_new
        if model.kind == "multinomial":
            nrm = np.linalg.norm(x)
            if nrm > 0:
                x = x / nrm * math.sqrt(max(total, 1.0))
                ll = model.value(x)
        history.append(ll)
        if change < tol:
            converged = True
            break
    T = _T(x)
    rho = T.conj().T @ T
    tr = float(np.real(np.trace(rho)))
    if tr <= 0:
        rho = I2 / 2
    else:
        rho = rho / tr
    rho = (rho + rho.conj().T) / 2
    return MLEResult(rho, ll, it, history, converged)


def ideal_records(rho, settings, outcome_index: int = 0, shots: int = 1000000) -> list[CountRecord]:
    """Noise-free expected counts, rounded to integers."""
    out = []
    for theta2, phi2 in settings:
        P = measurement_projector(theta2, phi2)
        p = float(np.real(np.trace(P @ rho)))
        n_pass = int(round(shots * p))
        out.append(CountRecord(theta2, phi2, outcome_index, n_pass, shots - n_pass))
    return out


def sample_records(rho, settings, shots: int, rng, outcome_index: int = 0) -> list[CountRecord]:
    """Binomially sampled counts for each setting."""
    rng = np.random.default_rng(rng)
    out = []
    for theta2, phi2 in settings:
        P = measurement_projector(theta2, phi2)
        p = float(np.clip(np.real(np.trace(P @ rho)), 0, 1))
        n_pass = int(rng.binomial(shots, p))
        out.append(CountRecord(theta2, phi2, outcome_index, n_pass, shots - n_pass))
    return out


def poisson_resample(records, rng) -> list[CountRecord]:
    """Replica of ``records`` with every count drawn from a Poisson law of that mean."""
    rng = np.random.default_rng(rng)
    return [
        CountRecord(r.theta2, r.phi2, r.outcome_index,
                    int(rng.poisson(r.pass_counts)), int(rng.poisson(r.fail_counts)),
                    r.pass_op, r.fail_op)
        for r in records
    ]


def monte_carlo_fidelity(records, psi_in, U=None, trials: int = 200, seed=None,
                         likelihood: str = "poisson") -> tuple[float, float]:
    """Mean and spread of the fidelity under Poisson resampling of every count."""
    if trials < 2:
        raise TomographyError("need at least two Monte-Carlo trials")
    records = list(records)
    rng = np.random.default_rng(seed)
    base = mle_reconstruct(records, likelihood=likelihood).rho
    fids = np.empty(trials)
    for t in range(trials):
        resampled = poisson_resample(records, rng)
        rho = mle_reconstruct(resampled, likelihood=likelihood, rho0=base).rho
        fids[t] = fidelity(rho, psi_in, U)
    return float(fids.mean()), float(fids.std(ddof=1))


CSV_COLUMNS = ("outcome_index", "theta2", "phi2", "pass_counts", "fail_counts")


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([r.outcome_index, repr(float(r.theta2)), repr(float(r.phi2)),
                        r.pass_counts, r.fail_counts])


def read_records_csv(path) -> list[CountRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise TomographyError(f"count CSV missing columns: {', '.join(sorted(missing))}")
        return [
            CountRecord(float(row["theta2"]), float(row["phi2"]), int(row["outcome_index"]),
                        int(row["pass_counts"]), int(row["fail_counts"]))
            for row in reader
        ]
