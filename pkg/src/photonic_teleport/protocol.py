"""Dual-rail teleportation: state preparation, Bell-state outcomes, conditional
output states, fidelities and correction unitaries.

Logical ``|0>`` is a photon in a qubit's first rail. The conditional state of
the target qubit Q3 given a Bell-measurement outcome is obtained by
propagating the source photons through the chip's transfer matrix and
post-selecting one photon per qubit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from . import fock
from .circuit import CircuitLayout, Loss, assemble_transfer
from .source import SourceModel, squeezed_input_terms, transmission_map

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (I2, SX, SY, SZ)

CLASSICAL_LIMIT = 2.0 / 3.0
CLONING_LIMIT = 5.0 / 6.0


class ProtocolError(RuntimeError):
    pass


def _expm_pauli(angle: float, pauli: np.ndarray) -> np.ndarray:
    """``exp(-i angle pauli)``."""
    return math.cos(angle) * I2 - 1j * math.sin(angle) * pauli


def normalize_state(psi) -> np.ndarray:
    """Unit-norm ket with the first non-zero amplitude made real and positive."""
    psi = np.asarray(psi, dtype=complex).reshape(2)
    psi = psi / np.linalg.norm(psi)
    k = 0 if abs(psi[0]) > 1e-12 else 1
    return psi * np.exp(-1j * np.angle(psi[k]))


def prepare_qubit(theta: float, phi: float) -> np.ndarray:
    """``exp(-i phi Z / 2) exp(-i theta Y / 2) |0>`` with the global phase removed."""
    U = _expm_pauli(phi / 2, SZ) @ _expm_pauli(theta / 2, SY)
    return normalize_state(U[:, 0])


def bloch_angles(psi) -> tuple[float, float]:
    """Inverse of :func:`prepare_qubit`."""
    psi = normalize_state(psi)
    theta = 2 * math.atan2(abs(psi[1]), abs(psi[0]))
    phi = float(np.angle(psi[1])) if abs(psi[1]) > 1e-12 else 0.0
    return theta, phi % (2 * math.pi)


def bloch_vector(rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    return np.real([np.trace(rho @ p) for p in (SX, SY, SZ)])


def measure_unitary(theta2: float, phi2: float) -> np.ndarray:
    """``exp(-i theta2 Y) exp(-i phi2 Z / 2)``, the tomography rotation."""
    return _expm_pauli(theta2, SY) @ _expm_pauli(phi2 / 2, SZ)


def measurement_projector(theta2: float, phi2: float) -> np.ndarray:
    """Projector onto the state the tomography rotation sends to ``|0>``."""
    U = measure_unitary(theta2, phi2)
    v = U.conj().T[:, 0]
    return np.outer(v, v.conj())


# |0>, |->, |+i> in the Z, X and Y bases
STANDARD_SETTINGS = ((0.0, 0.0), (math.pi / 4, 0.0), (math.pi / 4, math.pi / 2))

# logical axis states used as default teleportation inputs: |1>, |+>, |L>
DEFAULT_INPUTS = {
    "V": (math.pi, 0.0),
    "D": (math.pi / 2, 0.0),
    "L": (math.pi / 2, math.pi / 2),
}


def prep_phases(theta: float, phi: float) -> dict:
    """Heater phases of the preparation interferometer for a logical state."""
    return {"theta1": float(theta), "phi1": float(phi)}


def measure_phases(theta2: float, phi2: float) -> dict:
    """Heater phases of the tomography interferometer.

    The internal heater sets twice the logical rotation angle.
    """
    return {"theta2": 2.0 * float(theta2), "phi2": float(phi2)}


@dataclass(frozen=True)
class BsmOutcome:
    """One Bell-measurement outcome: the rails that fired on Q1 and Q2."""

    index: int
    q1_rail: int
    q2_rail: int

    @property
    def label(self) -> str:
        return f"|{self.q1_rail}{self.q2_rail}>"

    def pattern(self, layout: CircuitLayout) -> dict:
        """Exact output occupations of the Q1 and Q2 rails."""
        q1, q2 = layout.qubits["Q1"], layout.qubits["Q2"]
        return {
            q1.out_modes[self.q1_rail]: 1,
            q1.out_modes[1 - self.q1_rail]: 0,
            q2.out_modes[self.q2_rail]: 1,
            q2.out_modes[1 - self.q2_rail]: 0,
        }


def bsm_outcomes() -> list[BsmOutcome]:
    """The four outcomes, ordered so that outcome ``i`` needs ``ideal_corrections()[i]``.

    Order: ``|11>``, ``|01>``, ``|10>``, ``|00>``.
    """
    return [BsmOutcome(0, 1, 1), BsmOutcome(1, 0, 1), BsmOutcome(2, 1, 0), BsmOutcome(3, 0, 0)]


def outcome_by_label(label: str) -> BsmOutcome:
    for o in bsm_outcomes():
        if o.label == label or o.label.strip("|>") == label.strip("|>"):
            return o
    raise KeyError(label)


def ideal_corrections() -> list[np.ndarray]:
    """``[Z, 1, iY, X]`` indexed like :func:`bsm_outcomes`."""
    return [SZ.copy(), I2.copy(), 1j * SY, SX.copy()]


# --- conditional output states ----------------------------------------------


def with_transmissions(layout: CircuitLayout, source: SourceModel, section: str = "core") -> CircuitLayout:
    """Insert the source model's per-mode losses after the given section."""
    tmap = transmission_map(source, layout.n_modes)
    if not tmap:
        return layout
    elements = list(layout.elements)
    idx = max((k for k, el in enumerate(elements) if el.section == section), default=len(elements) - 1)
    losses = [Loss(m, t, section) for m, t in sorted(tmap.items()) if t != 1.0]
    return layout.with_elements(elements[: idx + 1] + losses + elements[idx + 1 :])


def _splits(n: int, parts: int):
    return fock.weak_compositions(n, parts)


class QubitResponse:
    """Post-selected output of a target qubit as a polynomial in the input qubit.

    For every Bell outcome and every mixture branch (source term and
    distinguishable photon) the un-normalised target amplitudes are stored as
    tensors ``K[config, k, rail]``; the amplitude for input ``(a, b)`` is
    ``sum_k a**(n-k) b**k K[config, k, rail]`` with ``n`` the number of
    photons on the input qubit. Different configurations of undetected
    degrees of freedom add incoherently.

    Args:
        U: transfer matrix.
        layout: supplies qubit rails and source input modes.
        source: photon statistics.
        inject: if True the input qubit's photons enter in superposition over
            both of its rails; if False they all enter its first rail.
        target: qubit whose state is returned.
    """

    def __init__(self, U, layout: CircuitLayout, source: SourceModel, *, inject: bool = True,
                 target: str = "Q3", outcomes: Sequence[BsmOutcome] | None = None):
        self.U = np.asarray(U, dtype=complex)
        self.layout = layout
        self.source = source
        self.inject = inject
        self.target = layout.qubits[target]
        self.outcomes = list(outcomes or bsm_outcomes())
        if len(layout.input_modes) != 3:
            raise ProtocolError("layout must declare three source INPUT modes")
        q1 = layout.qubits["Q1"]
        if layout.input_modes[0] != q1.in_modes[0]:
            raise ProtocolError("the first INPUT mode must be Q1's first rail")
        self._q1_rails = q1.in_modes
        self.branches = self._branches()
        self.tensors = {o.index: [self._tensor(o, groups) for _, groups in self.branches]
                        for o in self.outcomes}

    def _branches(self):
        """``[(weight, [group input tuples])]`` over source terms and distinguishability."""
        w_all, w_single = self.source.distinguishability_weights()
        out = []
        for term, tw in squeezed_input_terms(self.source.lambda_sq, self.source.truncation):
            base = [0] * self.layout.n_modes
            for mode, n in zip(self.layout.input_modes, term):
                base[mode] += n
            if w_all > 0:
                out.append((tw * w_all, [tuple(base)]))
            for k, wk in enumerate(w_single):
                if wk <= 0:
                    continue
                rest = list(base)
                rest[self.layout.input_modes[k]] -= 1
                lone = [0] * self.layout.n_modes
                lone[self.layout.input_modes[k]] = 1
                out.append((tw * wk, [tuple(rest), tuple(lone)]))
        return out

    def _group_inputs(self, group):
        """Fock-basis expansion of one group's input over the input qubit's rails."""
        a, b = self._q1_rails
        n = group[a]
        if not self.inject or n == 0:
            return n, [(0, 1.0, group)]
        terms = []
        for k in range(n + 1):
            occ = list(group)
            occ[a], occ[b] = n - k, occ[b] + k
            terms.append((k, math.sqrt(math.comb(n, k)), tuple(occ)))
        return n, terms

    def _tensor(self, outcome: BsmOutcome, groups):
        layout, U = self.layout, self.U
        n_total = sum(sum(g) for g in groups)
        ra, rb = self.target.out_modes
        fixed = outcome.pattern(layout)
        expansions = [self._group_inputs(g) for g in groups]
        degree = sum(n for n, _ in expansions) if self.inject else 0
        configs: dict = {}
        for rail, tmode in enumerate((ra, rb)):
            pattern = dict(fixed)
            pattern[tmode] = 1
            pattern[rb if rail == 0 else ra] = 0
            for out in fock.enumerate_outputs(n_total, layout.n_modes, pattern):
                for parts in self._split_output(out, [sum(g) for g in groups]):
                    holder = next(i for i, p in enumerate(parts) if p[tmode] > 0)
                    key = (holder,) + tuple(
                        tuple(0 if m in (ra, rb) else x for m, x in enumerate(p)) for p in parts
                    )
                    vec = configs.setdefault(key, np.zeros((degree + 1, 2), dtype=complex))
                    for combo in product(*(terms for _, terms in expansions)):
                        amp = 1.0 + 0j
                        for (k, coef, inp), part in zip(combo, parts):
                            amp *= coef * fock.transition_amplitude(U, inp, part)
                            if amp == 0:
                                break
                        k_total = sum(c[0] for c in combo) if self.inject else 0
                        vec[k_total, rail] += amp
        if not configs:
            return np.zeros((0, degree + 1, 2), dtype=complex)
        return np.array(list(configs.values()))

    @staticmethod
    def _split_output(out, sizes):
        if len(sizes) == 1:
            yield (tuple(out),)
            return
        # second group holds a single photon
        assert sizes[1] == 1, "only single distinguishable photons are modelled"
        for m, n in enumerate(out):
            if n > 0:
                rest = list(out)
                rest[m] -= 1
                lone = [0] * len(out)
                lone[m] = 1
                yield (tuple(rest), tuple(lone))

    def states(self, psis, outcome: int) -> np.ndarray:
        """Un-normalised target density matrices for a batch of input kets.

        The trace of each matrix is the absolute probability of the outcome.
        """
        psis = np.atleast_2d(np.asarray(psis, dtype=complex))
        rho = np.zeros((len(psis), 2, 2), dtype=complex)
        for (weight, _), K in zip(self.branches, self.tensors[outcome]):
            if K.shape[0] == 0:
                continue
            deg = K.shape[1] - 1
            ks = np.arange(deg + 1)
            mono = psis[:, :1] ** (deg - ks) * psis[:, 1:2] ** ks
            amps = np.einsum("sk,ckr->scr", mono, K)
            rho += weight * np.einsum("scr,scq->srq", amps, amps.conj())
        return rho

    def probability(self, psi, outcome: int) -> float:
        return float(np.real(np.trace(self.states([psi], outcome)[0])))


def core_response(layout: CircuitLayout, source: SourceModel, *, sections=("core",)) -> QubitResponse:
    """Response of the entangling core, with state encoding and tomography removed."""
    lay = with_transmissions(layout, source)
    U = assemble_transfer(lay, {}, sections=list(sections))
    return QubitResponse(U, lay, source, inject=True)


def conditional_state(layout: CircuitLayout, source: SourceModel, psi, outcome: BsmOutcome | int,
                      response: QubitResponse | None = None):
    """Normalised Q3 state before tomography and the outcome's absolute probability.

    Returns ``(None, 0.0)`` when the outcome cannot occur.
    """
    idx = outcome.index if isinstance(outcome, BsmOutcome) else int(outcome)
    resp = response or core_response(layout, source)
    rho = resp.states([normalize_state(psi)], idx)[0]
    p = float(np.real(np.trace(rho)))
    if p <= 1e-300:
        return None, 0.0
    return rho / p, p


def fidelity(rho, psi, U=None) -> float:
    """``<psi| U rho U^dag |psi>``."""
    rho = np.asarray(rho, dtype=complex)
    psi = np.asarray(psi, dtype=complex).reshape(2)
    psi = psi / np.linalg.norm(psi)
    if U is not None:
        rho = U @ rho @ U.conj().T
    return float(np.clip(np.real(psi.conj() @ rho @ psi), 0.0, 1.0))


def haar_states(n: int, rng) -> np.ndarray:
    """Haar-random qubit kets from normalised complex Gaussian pairs."""
    rng = np.random.default_rng(rng)
    z = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


# --- corrections -------------------------------------------------------------


def euler_unitary(angles) -> np.ndarray:
    """``Rz(a) Ry(b) Rz(c)`` in SU(2)."""
    a, b, c = angles
    return _expm_pauli(a / 2, SZ) @ _expm_pauli(b / 2, SY) @ _expm_pauli(c / 2, SZ)


def _overlap_tensor(psis, rhos) -> np.ndarray:
    # F(U) = sum_abcd T[a, b, c, d] U[a, b] conj(U[d, c]);  T = mean psi*_a rho_bc psi_d
    return np.einsum("sa,sbc,sd->abcd", psis.conj(), rhos, psis) / len(psis)


def _mean_fidelity(T, U) -> float:
    return float(np.real(np.einsum("abcd,ab,dc->", T, U, U.conj())))


@dataclass
class CorrectionResult:
    unitary: np.ndarray
    average_fidelity: float
    n_samples: int


def optimize_correction(psis, rhos, *, starts: Sequence[np.ndarray] = (), n_random: int = 4,
                        rng=None) -> CorrectionResult:
    """Unitary maximising the mean of ``<psi_k| U rho_k U^dag |psi_k>``.

    Euler-angle local search from each Pauli, any supplied ``starts`` and a
    few random points; the best local optimum wins.
    """
    psis = np.asarray(psis, dtype=complex)
    rhos = np.asarray(rhos, dtype=complex)
    T = _overlap_tensor(psis, rhos)
    rng = np.random.default_rng(rng)

    def loss(x):
        return -_mean_fidelity(T, euler_unitary(x))

    seeds = [np.zeros(3), np.array([0.0, math.pi, 0.0]), np.array([math.pi, 0.0, 0.0]),
             np.array([math.pi / 2, math.pi, -math.pi / 2])]
    for U0 in starts:
        seeds.append(_euler_from_unitary(U0))
    seeds += [rng.uniform(-math.pi, math.pi, 3) for _ in range(n_random)]
    best = None
    for x0 in seeds:
        res = minimize(loss, x0, method="BFGS", options={"gtol": 1e-10})
        if not np.all(np.isfinite(res.x)):
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise ProtocolError("correction search failed to converge from every start")
    U = euler_unitary(best.x)
    return CorrectionResult(U, -float(best.fun), len(psis))


def _euler_from_unitary(U) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    U = U / np.sqrt(np.linalg.det(U))
    # U = [[e^{-i(a+c)/2} cos(b/2), -e^{-i(a-c)/2} sin(b/2)], [e^{i(a-c)/2} sin, e^{i(a+c)/2} cos]]
    b = 2 * math.atan2(abs(U[1, 0]), abs(U[0, 0]))
    s = np.angle(U[1, 1]) if abs(U[1, 1]) > 1e-12 else 0.0  # (a + c) / 2
    d = np.angle(U[1, 0]) if abs(U[1, 0]) > 1e-12 else 0.0  # (a - c) / 2
    return np.array([s + d, b, s - d])


def optimal_corrections(layout: CircuitLayout, source: SourceModel | None = None,
                        n_samples: int = 10000, seed=None, response: QubitResponse | None = None):
    """Per-outcome corrections maximising the average fidelity over Haar inputs.

    The input sample is drawn once from ``seed`` and shared by all outcomes.
    Returns ``(corrections, average_fidelities)``.
    """
    source = source or SourceModel.ideal()
    resp = response or core_response(layout, source)
    psis = haar_states(n_samples, np.random.default_rng(seed))
    corrections, fids = [], []
    for o, U0 in zip(bsm_outcomes(), ideal_corrections()):
        rhos = resp.states(psis, o.index)
        p = np.real(np.einsum("sii->s", rhos))
        ok = p > 1e-300
        if not np.any(ok):
            raise ProtocolError(f"outcome {o.label} never occurs; no correction defined")
        rhos = rhos[ok] / p[ok, None, None]
        res = optimize_correction(psis[ok], rhos, starts=[U0], rng=seed)
        corrections.append(res.unitary)
        fids.append(res.average_fidelity)
    return corrections, fids


def average_fidelity(layout: CircuitLayout, source: SourceModel, corrections, n_samples: int = 2000,
                     seed=None, response: QubitResponse | None = None) -> list[float]:
    """Haar-averaged fidelity per outcome with the given corrections applied."""
    resp = response or core_response(layout, source)
    psis = haar_states(n_samples, np.random.default_rng(seed))
    out = []
    for o in bsm_outcomes():
        rhos = resp.states(psis, o.index)
        p = np.real(np.einsum("sii->s", rhos))
        ok = p > 1e-300
        rhos = rhos[ok] / p[ok, None, None]
        T = _overlap_tensor(psis[ok], rhos)
        out.append(_mean_fidelity(T, corrections[o.index]))
    return out


# --- closed-form correction for linear channels ------------------------------


def pauli_transfer_matrix(kraus) -> np.ndarray:
    """``R[i, j] = tr(P_i E(P_j)) / 2`` for a channel given by Kraus operators."""
    R = np.zeros((4, 4))
    for j, Pj in enumerate(PAULIS):
        out = sum(K @ Pj @ K.conj().T for K in kraus)
        for i, Pi in enumerate(PAULIS):
            R[i, j] = np.real(np.trace(Pi @ out)) / 2
    return R


def unitary_ptm(U) -> np.ndarray:
    return pauli_transfer_matrix([np.asarray(U, dtype=complex)])


def channel_average_fidelity(R, U=None) -> float:
    """Haar-average fidelity of the channel ``R`` followed by ``U``."""
    if U is not None:
        R = unitary_ptm(U) @ R
    return float((np.trace(R) / 2 + 1) / 3)


def rotation_to_unitary(O) -> np.ndarray:
    """SU(2) element whose adjoint action on Bloch vectors is the rotation ``O``."""
    vec = Rotation.from_matrix(O).as_rotvec()
    angle = np.linalg.norm(vec)
    if angle < 1e-15:
        return I2.copy()
    n = vec / angle
    return _expm_pauli(angle / 2, n[0] * SX + n[1] * SY + n[2] * SZ)


def polar_correction_oracle(R) -> tuple[np.ndarray, bool]:
    """Closed-form unitary maximising the average fidelity of a linear channel.

    The average fidelity after a rotation ``O`` grows with ``tr(O T)``, ``T``
    the 3x3 Bloch block of the Pauli transfer matrix, which is maximised by
    the orthogonal polar factor of ``T`` restricted to proper rotations.
    Returns ``(U, degenerate)``; ``degenerate`` flags a rank-deficient ``T``
    for which the maximiser is not unique.
    """
    T = np.asarray(R, dtype=float)[1:, 1:]
    W, s, Vt = np.linalg.svd(T)
    # maximise tr(O T): O = V diag(1, 1, det) W^T
    d = np.sign(np.linalg.det(Vt.T @ W.T)) or 1.0
    O = Vt.T @ np.diag([1.0, 1.0, d]) @ W.T
    degenerate = bool(s[-1] < 1e-9 * max(s[0], 1e-300)) or s[0] < 1e-12
    return rotation_to_unitary(O), degenerate


def channel_samples(kraus, psis) -> np.ndarray:
    """Normalised outputs of a Kraus channel for a batch of input kets."""
    psis = np.asarray(psis, dtype=complex)
    rho = np.zeros((len(psis), 2, 2), dtype=complex)
    for K in kraus:
        v = psis @ np.asarray(K).T
        rho += np.einsum("sa,sb->sab", v, v.conj())
    p = np.real(np.einsum("sii->s", rho))
    return rho / p[:, None, None]
