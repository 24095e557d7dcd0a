"""Non-ideal photon sources: higher-order pair emission and distinguishability.

Two pair sources feed the chip. The first is heralded and supplies one photon,
the second supplies both photons of a pair, so a double emission from either
source turns the ideal ``|1,1,1>`` input into ``|2,1,1>`` or ``|1,2,2>``.

Partial distinguishability is described by a mixture in which at most one
photon is distinguishable from the rest. A distinguishable photon propagates
independently, so its detection statistics add incoherently to those of the
remaining photons.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

from . import fock
from .circuit import coupler_matrix


class SourceModelError(ValueError):
    pass


@dataclass
class SourceModel:
    """Statistical model of the three-photon source.

    Attributes:
        lambda_sq: squeezing weight; the relative weight of a double emission.
        v_nn: two-photon visibility between narrowband photons.
        v_nb: two-photon visibility between a narrowband and a broadband photon.
        photon_types: band of the photon in each input mode, ``"n"`` or ``"b"``.
        transmissions: per-output-mode intensity transmission; empty means lossless.
        herald_efficiency: detection probability of the heralding arm, which
            scales event rates only.
        visibilities: explicit ``{(i, j): v}`` overrides for input-photon pairs.
        truncation: number of extra pairs kept in the squeezed-state expansion.
    """

    lambda_sq: float = 0.0
    v_nn: float = 1.0
    v_nb: float = 1.0
    photon_types: tuple = ("n", "n", "b")
    transmissions: tuple = ()
    herald_efficiency: float = 1.0
    visibilities: dict = field(default_factory=dict)
    truncation: int = 1

    def __post_init__(self):
        if not 0.0 <= self.lambda_sq <= 0.2:
            raise SourceModelError(f"lambda_sq={self.lambda_sq} outside model range [0, 0.2]")
        for name in ("v_nn", "v_nb", "herald_efficiency"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise SourceModelError(f"{name}={val} outside [0, 1]")
        for t in self.transmissions:
            if not 0.0 <= t <= 1.0:
                raise SourceModelError(f"transmission {t} outside [0, 1]")
        if any(t not in ("n", "b") for t in self.photon_types):
            raise SourceModelError("photon types must be 'n' or 'b'")
        self.photon_types = tuple(self.photon_types)
        self.transmissions = tuple(float(t) for t in self.transmissions)
        self.visibilities = {tuple(sorted(k)): float(v) for k, v in self.visibilities.items()}

    @classmethod
    def ideal(cls) -> "SourceModel":
        return cls()

    @property
    def is_ideal(self) -> bool:
        return self.lambda_sq == 0 and all(v == 1.0 for v in self.pair_visibilities().values())

    def pair_visibilities(self) -> dict:
        """Visibility for each pair of input photons."""
        out = {}
        for i, j in combinations(range(len(self.photon_types)), 2):
            if (i, j) in self.visibilities:
                out[(i, j)] = self.visibilities[(i, j)]
            elif self.photon_types[i] == self.photon_types[j] == "n":
                out[(i, j)] = self.v_nn
            elif "n" in (self.photon_types[i], self.photon_types[j]):
                out[(i, j)] = self.v_nb
            else:
                out[(i, j)] = self.v_nn  # two broadband photons: no separate figure
        return out

    def distinguishability_weights(self) -> tuple[float, list[float]]:
        """Mixture weights ``(w_all, [w_k])`` reproducing the pair visibilities.

        ``w_k`` is the probability that photon ``k`` alone is distinguishable.
        A pair ``(i, j)`` interferes unless ``i`` or ``j`` is the odd one out, so
        ``v_ij = 1 - w_i - w_j``; three photons give three equations.
        """
        vis = self.pair_visibilities()
        n = len(self.photon_types)
        if n != 3:
            # two photons: split the distinguishability evenly
            if n == 2:
                d = 1.0 - vis[(0, 1)]
                return 1.0 - d, [d / 2, d / 2]
            raise SourceModelError("distinguishability model supports two or three photons")
        d = {k: 1.0 - v for k, v in vis.items()}
        w = [
            (d[(0, 1)] + d[(0, 2)] - d[(1, 2)]) / 2,
            (d[(0, 1)] + d[(1, 2)] - d[(0, 2)]) / 2,
            (d[(0, 2)] + d[(1, 2)] - d[(0, 1)]) / 2,
        ]
        if min(w) < -1e-12 or sum(w) > 1 + 1e-12:
            raise SourceModelError(
                f"pair visibilities {vis} cannot come from a single distinguishable photon"
            )
        w = [max(x, 0.0) for x in w]
        return max(1.0 - sum(w), 0.0), w


def squeezed_input_terms(lambda_sq: float, truncation: int = 1) -> list[tuple[tuple, float]]:
    """Input Fock terms and normalised weights for the two pair sources.

    Source 1 emitting ``1 + i`` pairs and source 2 emitting ``1 + j`` pairs
    gives ``|1+i, 1+j, 1+j>`` with weight ``lambda_sq**(i + j)``; terms with
    ``i + j <= truncation`` are kept.
    """
    if truncation < 1:
        raise ValueError("truncation must be at least 1")
    lam2 = abs(lambda_sq)
    terms = []
    for extra in range(truncation + 1):
        if extra > 0 and lam2 == 0:
            break
        for j in range(extra + 1):
            i = extra - j
            terms.append(((1 + i, 1 + j, 1 + j), lam2**extra))
    # |1,1,1> first, then |1,2,2>, |2,1,1>, ...
    terms.sort(key=lambda t: (sum(t[0]), t[0][0]))
    total = sum(w for _, w in terms)
    return [(state, w / total) for state, w in terms]


def distinguishable_distribution(U, inp: Sequence[int], mode: int) -> fock.OutcomeDistribution:
    """Outcome distribution when one photon in ``mode`` is distinguishable.

    The lone photon and the remaining ``N - 1`` photons propagate
    independently; their outcome patterns add mode by mode.
    """
    inp = fock.as_fock(inp)
    if inp[mode] == 0:
        raise ValueError(f"input mode {mode} holds no photon to distinguish")
    rest = list(inp)
    rest[mode] -= 1
    single = [0] * len(inp)
    single[mode] = 1
    return fock.convolve(fock.output_distribution(U, single), fock.output_distribution(U, rest))


def mix_distinguishability(U, inp: Sequence[int], visibility: float, which: int) -> fock.OutcomeDistribution:
    """``v * indistinguishable + (1 - v) * distinguishable`` outcome distribution."""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    quantum = fock.output_distribution(U, inp)
    classical = distinguishable_distribution(U, inp, which)
    return quantum.mix(classical, visibility)


def hom_dip(eta: float, visibility: float) -> float:
    """Coincidence probability for two photons meeting on a coupler of reflectivity ``eta``."""
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    dist = mix_distinguishability(coupler_matrix(eta), (1, 1), visibility, 0)
    return dist[(1, 1)]


def hom_visibility(eta: float, visibility: float) -> float:
    """Fractional dip ``(P_classical - P) / P_classical`` of the coincidence rate."""
    p_cl = hom_dip(eta, 0.0)
    return (p_cl - hom_dip(eta, visibility)) / p_cl


def transmission_map(source: SourceModel, n_modes: int) -> dict:
    if not source.transmissions:
        return {}
    if len(source.transmissions) != n_modes:
        raise SourceModelError(
            f"{len(source.transmissions)} transmissions given for a {n_modes}-mode chip"
        )
    return {m: t for m, t in enumerate(source.transmissions)}

