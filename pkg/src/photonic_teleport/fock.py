"""Multi-photon transition amplitudes of linear-optical networks.

Photon-number states are plain tuples of occupations. A transfer matrix ``U``
maps input mode ``j`` to output mode ``i`` with amplitude ``U[i, j]``; the
amplitude for an input Fock state to reach an output Fock state is a matrix
permanent normalised by the occupation factorials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

FockState = tuple  # tuple[int, ...]

PROB_ATOL = 1e-9


def as_fock(occupations: Sequence[int]) -> FockState:
    """Validate occupations and return them as a hashable Fock state."""
    state = tuple(int(n) for n in occupations)
    if any(n < 0 for n in state):
        raise ValueError(f"negative occupation in Fock state {state}")
    if any(int(n) != n for n in occupations):
        raise ValueError(f"non-integer occupation in Fock state {tuple(occupations)}")
    return state


def permanent(matrix) -> complex:
    """Permanent of a square matrix by Ryser's formula in Gray-code order.

    Runs in ``O(2**n * n)``. The permanent of the empty matrix is 1.
    """
    a = np.asarray(matrix, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"permanent needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return 1.0 + 0j
    if n == 1:
        return complex(a[0, 0])
    if n == 2:
        return complex(a[0, 0] * a[1, 1] + a[0, 1] * a[1, 0])

    row_sums = np.zeros(n, dtype=complex)
    in_subset = np.zeros(n, dtype=bool)
    total = 0j
    for k in range(1, 1 << n):
        j = (k & -k).bit_length() - 1
        if in_subset[j]:
            row_sums -= a[:, j]
        else:
            row_sums += a[:, j]
        in_subset[j] = not in_subset[j]
        sign = -1.0 if (bin(k ^ (k >> 1)).count("1") & 1) else 1.0
        total += sign * np.prod(row_sums)
    return complex((-1) ** n * total)


def transition_submatrix(U, inp: Sequence[int], out: Sequence[int]) -> np.ndarray:
    """Submatrix whose permanent gives the ``inp -> out`` amplitude.

    Column ``j`` of ``U`` is repeated ``inp[j]`` times and row ``i`` is
    repeated ``out[i]`` times.
    """
    U = np.asarray(U, dtype=complex)
    inp, out = as_fock(inp), as_fock(out)
    if len(inp) != U.shape[1] or len(out) != U.shape[0]:
        raise ValueError(
            f"Fock states of length {len(inp)}/{len(out)} do not fit a {U.shape} matrix"
        )
    if sum(inp) != sum(out):
        raise ValueError(f"photon number mismatch: {sum(inp)} in, {sum(out)} out")
    cols = np.repeat(np.arange(len(inp)), inp)
    rows = np.repeat(np.arange(len(out)), out)
    return U[np.ix_(rows, cols)]


def _factorial_norm(inp: Sequence[int], out: Sequence[int]) -> float:
    norm = 1.0
    for n in inp:
        norm *= math.factorial(n)
    for n in out:
        norm *= math.factorial(n)
    return norm


def transition_amplitude(U, inp: Sequence[int], out: Sequence[int]) -> complex:
    """Complex amplitude ``<out| U |inp>`` including the factorial normalisation."""
    sub = transition_submatrix(U, inp, out)
    return permanent(sub) / math.sqrt(_factorial_norm(inp, out))


def transition_probability(U, inp: Sequence[int], out: Sequence[int]) -> float:
    """``|Perm(U_sub)|**2 / (prod(inp!) prod(out!))``."""
    sub = transition_submatrix(U, inp, out)
    return float(abs(permanent(sub)) ** 2 / _factorial_norm(inp, out))


def weak_compositions(n: int, parts: int) -> Iterator[tuple[int, ...]]:
    """All ways of writing ``n`` as an ordered sum of ``parts`` non-negative ints.

    Yielded in descending lexicographic order, e.g. (2, 0), (1, 1), (0, 2).
    """
    if parts == 0:
        if n == 0:
            yield ()
        return
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in weak_compositions(n - first, parts - 1):
            yield (first,) + rest


def enumerate_outputs(
    n_photons: int, n_modes: int, postselect: Mapping[int, int] | None = None
) -> Iterator[FockState]:
    """Output occupations with ``n_photons`` photons, honouring fixed mode occupations."""
    fixed = dict(postselect or {})
    for mode in fixed:
        if not 0 <= mode < n_modes:
            raise ValueError(f"post-selection mode {mode} outside [0, {n_modes})")
    remaining = n_photons - sum(fixed.values())
    if remaining < 0:
        return
    free = [m for m in range(n_modes) if m not in fixed]
    for comp in weak_compositions(remaining, len(free)):
        occ = [0] * n_modes
        for mode, n in fixed.items():
            occ[mode] = n
        for mode, n in zip(free, comp):
            occ[mode] = n
        yield tuple(occ)


@dataclass
class OutcomeDistribution:
    """Probabilities of output Fock states.

    ``total_mass`` is the summed probability of the listed outcomes, which is
    the post-selection success probability when a pattern was applied.
    """

    probabilities: dict = field(default_factory=dict)

    @property
    def total_mass(self) -> float:
        return float(sum(self.probabilities.values()))

    def __getitem__(self, state) -> float:
        return self.probabilities.get(tuple(state), 0.0)

    def __len__(self) -> int:
        return len(self.probabilities)

    def items(self):
        return self.probabilities.items()

    def normalized(self) -> "OutcomeDistribution":
        mass = self.total_mass
        if mass <= 0:
            raise ValueError("cannot normalise an empty distribution")
        return OutcomeDistribution({k: p / mass for k, p in self.probabilities.items()})

    def restricted(self, postselect: Mapping[int, int]) -> "OutcomeDistribution":
        """Keep only outcomes matching the fixed mode occupations."""
        keep = {
            k: p
            for k, p in self.probabilities.items()
            if all(k[m] == n for m, n in postselect.items())
        }
        return OutcomeDistribution(keep)

    def mix(self, other: "OutcomeDistribution", weight: float) -> "OutcomeDistribution":
        """``weight * self + (1 - weight) * other`` over the union of supports."""
        out = {k: weight * p for k, p in self.probabilities.items()}
        for k, p in other.probabilities.items():
            out[k] = out.get(k, 0.0) + (1.0 - weight) * p
        return OutcomeDistribution(out)


def output_distribution(
    U, inp: Sequence[int], postselect: Mapping[int, int] | None = None
) -> OutcomeDistribution:
    """Distribution over all output patterns of the input's photon number.

    ``postselect`` fixes the occupation of some output modes; only outcomes
    consistent with it are enumerated. Asking for more photons than are
    present simply yields an empty distribution.
    """
    U = np.asarray(U, dtype=complex)
    inp = as_fock(inp)
    n = sum(inp)
    probs = {}
    for out in enumerate_outputs(n, U.shape[0], postselect):
        p = transition_probability(U, inp, out)
        if p > 0.0:
            probs[out] = p
    return OutcomeDistribution(probs)


def convolve(a: OutcomeDistribution, b: OutcomeDistribution) -> OutcomeDistribution:
    """Distribution of the mode-wise sum of two independent outcome patterns."""
    out: dict = {}
    for ka, pa in a.items():
        for kb, pb in b.items():
            key = tuple(x + y for x, y in zip(ka, kb))
            out[key] = out.get(key, 0.0) + pa * pb
    return OutcomeDistribution(out)


def sample_counts(dist: OutcomeDistribution, shots: int, seed=None) -> dict:
    """Multinomial sample of ``shots`` detection events from ``dist``.

    The distribution is renormalised over its support. Outcomes with zero
    counts are omitted.
    """
    if shots < 0:
        raise ValueError("shots must be non-negative")
    if shots == 0:
        return {}
    if len(dist) == 0 or dist.total_mass <= 0:
        raise ValueError("cannot sample from an empty distribution")
    keys = list(dist.probabilities)
    p = np.array([dist.probabilities[k] for k in keys], dtype=float)
    p /= p.sum()
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(shots, p)
    return {k: int(c) for k, c in zip(keys, draws) if c > 0}
