import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photonic_teleport import fock
from photonic_teleport.characterization import CrosstalkModel
from photonic_teleport.circuit import (
    CircuitLayout,
    Coupler,
    LayoutError,
    Loss,
    Phase,
    add_losses,
    assemble_transfer,
    coupler_matrix,
    mzi_unitary,
    parse_layout,
    perturb_couplers,
    qubit_block,
    resolve_phases,
    serialize_layout,
)


def embed(block, i, j, n):
    E = np.eye(n, dtype=complex)
    E[np.ix_([i, j], [i, j])] = block
    return E


class TestCouplerMatrix:
    def test_zero_is_identity(self):
        np.testing.assert_allclose(coupler_matrix(0.0), np.eye(2))

    def test_balanced(self):
        C = coupler_matrix(0.5)
        np.testing.assert_allclose(np.abs(C), np.full((2, 2), 1 / math.sqrt(2)))
        assert np.angle(C[0, 1]) == pytest.approx(math.pi / 2)
        assert np.angle(C[1, 0]) == pytest.approx(math.pi / 2)

    def test_one_third(self):
        assert abs(coupler_matrix(1 / 3)[0, 1]) ** 2 == pytest.approx(1 / 3, abs=1e-15)

    @pytest.mark.parametrize("eta", [0.0, 0.1, 1 / 3, 0.5, 0.9, 1.0])
    def test_unitary(self, eta):
        C = coupler_matrix(eta)
        np.testing.assert_allclose(C.conj().T @ C, np.eye(2), atol=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            coupler_matrix(1.2)


class TestMzi:
    def test_theta_zero_full_cross(self):
        U = mzi_unitary(0.5, 0.5, 0.0)
        assert abs(U[1, 0]) ** 2 == pytest.approx(1.0)

    def test_theta_pi_full_bar(self):
        U = mzi_unitary(0.5, 0.5, math.pi)
        assert abs(U[1, 0]) ** 2 == pytest.approx(0.0, abs=1e-15)
        assert abs(U[0, 0]) ** 2 == pytest.approx(1.0)

    @pytest.mark.parametrize("theta", np.linspace(0, 2 * math.pi, 9))
    def test_fringe(self, theta):
        # C(1/2) diag(e^{i theta}, 1) C(1/2): cross amplitude is i (e^{i theta} + 1) / 2
        expected = abs((np.exp(1j * theta) + 1) / 2) ** 2
        assert abs(mzi_unitary(0.5, 0.5, theta)[1, 0]) ** 2 == pytest.approx(expected)
        assert expected == pytest.approx(math.cos(theta / 2) ** 2)

    @pytest.mark.parametrize("eta1,eta2", [(0.45, 0.55), (0.45, 0.45), (0.55, 0.55)])
    def test_unbalanced_restricted_range(self, eta1, eta2):
        thetas = np.linspace(0, 2 * math.pi, 4001)
        cross = np.array([abs(mzi_unitary(eta1, eta2, t)[1, 0]) ** 2 for t in thetas])
        # cross amplitude r1 t2 e^{i theta} + t1 r2 spans |r1 t2| -+ |t1 r2|
        a, b = math.sqrt(eta1 * (1 - eta2)), math.sqrt((1 - eta1) * eta2)
        assert cross.max() == pytest.approx((a + b) ** 2, abs=1e-6)
        assert cross.min() == pytest.approx((a - b) ** 2, abs=1e-6)
        # one of the two extremes is always out of reach
        assert cross.max() - cross.min() < 1.0 - 1e-3

    def test_matches_layout(self):
        lay = parse_layout("MODES 2\nBS 0 1 0.4\nPS 0 HEATER t\nBS 0 1 0.6\nPS 0 HEATER p\n")
        U = assemble_transfer(lay, {"t": 0.7, "p": -1.1})
        np.testing.assert_allclose(U, mzi_unitary(0.4, 0.6, 0.7, -1.1), atol=1e-14)


class TestAssembleTransfer:
    def test_empty(self):
        np.testing.assert_allclose(assemble_transfer(CircuitLayout(2)), np.eye(2))

    def test_single_coupler(self):
        U = assemble_transfer(parse_layout("MODES 3\nBS 0 1 0.5\n"))
        np.testing.assert_allclose(U, embed(coupler_matrix(0.5), 0, 1, 3))

    def test_mzi_cross_probability(self):
        lay = parse_layout("MODES 2\nBS 0 1 0.5\nPS 0 HEATER theta\nBS 0 1 0.5\n")
        for theta in np.linspace(0, math.pi, 7):
            U = assemble_transfer(lay, {"theta": theta})
            assert fock.transition_probability(U, (1, 0), (0, 1)) == pytest.approx(math.cos(theta / 2) ** 2)

    def test_element_order(self, rng):
        for _ in range(20):
            n = 4
            els, ref = [], np.eye(n, dtype=complex)
            for _ in range(3):
                if rng.random() < 0.5:
                    i, j = rng.choice(n, 2, replace=False)
                    eta = rng.random()
                    els.append(Coupler(int(i), int(j), float(eta)))
                    ref = embed(coupler_matrix(eta), i, j, n) @ ref
                else:
                    m, v = int(rng.integers(n)), float(rng.uniform(-3, 3))
                    els.append(Phase(m, value=v))
                    D = np.eye(n, dtype=complex)
                    D[m, m] = np.exp(1j * v)
                    ref = D @ ref
            np.testing.assert_allclose(assemble_transfer(CircuitLayout(n, els)), ref, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 20), st.integers(0, 2**32 - 1))
    def test_lossless_is_unitary(self, n, n_el, seed):
        r = np.random.default_rng(seed)
        els = []
        for _ in range(n_el):
            if r.random() < 0.6:
                i, j = r.choice(n, 2, replace=False)
                els.append(Coupler(int(i), int(j), float(r.random())))
            else:
                els.append(Phase(int(r.integers(n)), value=float(r.uniform(-4, 4))))
        U = assemble_transfer(CircuitLayout(n, els))
        assert np.linalg.norm(U.conj().T @ U - np.eye(n)) < 1e-10

    def test_loss_scales_row(self):
        lay = CircuitLayout(2, [Coupler(0, 1, 0.5), Loss(1, 0.36)])
        U = assemble_transfer(lay)
        np.testing.assert_allclose(U[1], 0.6 * coupler_matrix(0.5)[1])

    def test_unbound_heater(self):
        lay = parse_layout("MODES 2\nPS 0 HEATER x\n")
        with pytest.raises(LayoutError, match="unbound"):
            assemble_transfer(lay)

    def test_sections(self, chip):
        full = assemble_transfer(chip, {"theta1": 0.3, "phi1": 0.2, "theta2": 0.1, "phi2": 0.4})
        parts = [assemble_transfer(chip, {"theta1": 0.3, "phi1": 0.2, "theta2": 0.1, "phi2": 0.4},
                                   sections=[s]) for s in ("prep", "core", "measure")]
        np.testing.assert_allclose(parts[2] @ parts[1] @ parts[0], full, atol=1e-13)


class TestHeaterCalibration:
    def test_voltages_through_crosstalk(self):
        text = ("MODES 2\nPS 0 HEATER a\nPS 1 HEATER b\n"
                "HEATERCAL a 20.0 2.0 0.1 850.0 0.0 10.0 b\nHEATERCAL b 18.0 1.0 -0.2 850.0 0.0 10.0 a\n")
        lay = parse_layout(text)
        ph = resolve_phases(lay, voltages={"a": 4.0, "b": 3.0})
        assert ph["a"] == pytest.approx((20 * 16 + 2 * 9) / 850 + 0.1)
        assert ph["b"] == pytest.approx((18 * 9 + 1 * 16) / 850 - 0.2)
        U = assemble_transfer(lay, voltages={"a": 4.0, "b": 3.0})
        np.testing.assert_allclose(np.angle(np.diag(U)), [ph["a"], ph["b"]])

    def test_explicit_phase_wins(self):
        lay = parse_layout("MODES 1\nPS 0 HEATER a\nHEATERCAL a 20.0 0.0 0.0 850.0 0.0 10.0\n")
        assert resolve_phases(lay, {"a": 1.0}, {"a": 5.0})["a"] == 1.0

    def test_calibration_for_unknown_heater(self):
        with pytest.raises(LayoutError):
            parse_layout("MODES 1\nHEATERCAL z 20.0 0.0 0.0 850.0 0.0 10.0\n")


class TestParseLayout:
    def test_minimal(self):
        lay = parse_layout("MODES 2\nBS 0 1 0.5")
        assert lay.n_modes == 2
        assert len(lay.couplers) == 1
        assert lay.couplers[0].eta == 0.5

    def test_reference_chip(self, chip):
        assert chip.n_modes >= 6
        assert len(chip.couplers) == 12
        assert len(chip.heaters) >= 4
        assert sorted(c.eta for c in chip.couplers if abs(c.eta - 1 / 3) < 1e-12) == [pytest.approx(1 / 3)] * 4

    def test_mode_out_of_range_line(self):
        with pytest.raises(LayoutError) as err:
            parse_layout("MODES 2\n# comment\nBS 0 5 0.5\n")
        assert err.value.line == 3

    @pytest.mark.parametrize("text", [
        "BS 0 1 0.5\n",
        "MODES 2\nBS 0 1 1.5\n",
        "MODES 2\nBS 0 0 0.5\n",
        "MODES 2\nFOO 1\n",
        "MODES 2\nBS 0 1 abc\n",
        "MODES 2\nPS 0\n",
        "MODES 2\nLOSS 0 2\n",
        "",
    ])
    def test_malformed(self, text):
        with pytest.raises(LayoutError):
            parse_layout(text)

    def test_round_trip(self, chip):
        again = parse_layout(serialize_layout(chip))
        assert serialize_layout(again) == serialize_layout(chip)
        phases = {"theta1": 0.3, "phi1": 0.2, "theta2": 0.1, "phi2": 0.4}
        np.testing.assert_array_equal(assemble_transfer(again, phases), assemble_transfer(chip, phases))


def _q1_q2_q3_patterns(chip):
    q1, q2, q3 = (chip.qubits[k] for k in ("Q1", "Q2", "Q3"))
    for a in q1.out_modes:
        for b in q2.out_modes:
            for c in q3.out_modes:
                occ = [0] * chip.n_modes
                occ[a] = occ[b] = occ[c] = 1
                yield tuple(occ)


class TestReferenceChip:
    def test_success_probability(self, chip):
        U = assemble_transfer(chip, sections=["core"])
        inp = [0] * chip.n_modes
        for m in chip.input_modes:
            inp[m] = 1
        dist = fock.output_distribution(U, inp)
        mass = sum(dist[p] for p in _q1_q2_q3_patterns(chip))
        assert mass == pytest.approx(1 / 27, abs=1e-9)

    def test_core_unitary(self, chip):
        U = assemble_transfer(chip, sections=["core"])
        np.testing.assert_allclose(U.conj().T @ U, np.eye(chip.n_modes), atol=1e-12)

    def test_conditional_maps_unitary(self, chip):
        # direct amplitude computation: input qubit in rail 0 or rail 1
        U = assemble_transfer(chip, sections=["core"])
        q1, q2, q3 = (chip.qubits[k] for k in ("Q1", "Q2", "Q3"))
        inputs = []
        for rail in q1.in_modes:
            occ = [0] * chip.n_modes
            occ[rail] = 1
            occ[chip.input_modes[1]] = occ[chip.input_modes[2]] = 1
            inputs.append(tuple(occ))
        for a in q1.out_modes:
            for b in q2.out_modes:
                K = np.zeros((2, 2), complex)
                for i, c in enumerate(q3.out_modes):
                    out = [0] * chip.n_modes
                    out[a] = out[b] = out[c] = 1
                    for j, inp in enumerate(inputs):
                        K[i, j] = fock.transition_amplitude(U, inp, out)
                G = K.conj().T @ K
                np.testing.assert_allclose(G, G[0, 0] * np.eye(2), atol=1e-12)
                assert G[0, 0].real == pytest.approx(1 / 108)

    def test_hadamard_perturbation_continuous(self, chip):
        from photonic_teleport.protocol import average_fidelity, ideal_corrections
        from photonic_teleport.source import SourceModel

        h_idx = [k for k, c in enumerate(chip.couplers) if c.label.startswith("H")]
        deltas = np.linspace(-0.05, 0.05, 21)
        fids = []
        for d in deltas:
            lay = perturb_couplers(chip, {k: d for k in h_idx})
            fids.append(np.mean(average_fidelity(lay, SourceModel(), ideal_corrections(),
                                                 n_samples=200, seed=0)))
        fids = np.array(fids)
        assert fids[10] == pytest.approx(1.0, abs=1e-12)
        assert np.max(np.abs(np.diff(fids))) < 0.01
        assert np.all(fids <= 1 + 1e-12)

    def test_qubit_block(self, chip):
        U = assemble_transfer(chip, {"theta1": 0.0, "phi1": 0.0}, sections=["prep"])
        B = qubit_block(U, chip.qubits["Q1"], out="in")
        np.testing.assert_allclose(B.conj().T @ B, np.eye(2), atol=1e-12)


class TestLossAndPerturbation:
    def test_perturb_clips(self, chip):
        lay = perturb_couplers(chip, {0: 2.0, 1: -2.0})
        assert lay.couplers[0].eta == 1.0
        assert lay.couplers[1].eta == 0.0
        assert lay.couplers[2].eta == chip.couplers[2].eta

    def test_uniform_loss_leaves_conditional_states(self, chip):
        t = 0.7
        lossy = add_losses(chip, {m: t for m in range(chip.n_modes)}, section="core")
        U0 = assemble_transfer(chip, sections=["core"])
        U1 = assemble_transfer(lossy, sections=["core"])
        inp = [0] * chip.n_modes
        for m in chip.input_modes:
            inp[m] = 1
        d0 = fock.output_distribution(U0, inp)
        d1 = fock.output_distribution(U1, inp)
        pats = list(_q1_q2_q3_patterns(chip))
        m0 = sum(d0[p] for p in pats)
        m1 = sum(d1[p] for p in pats)
        assert m1 == pytest.approx(t**3 * m0)
        for p in pats:
            assert d1[p] / m1 == pytest.approx(d0[p] / m0)

    def test_unbalanced_loss_changes_outcomes(self, chip):
        q1 = chip.qubits["Q1"]
        lossy = add_losses(chip, {q1.out_modes[1]: 0.5}, section="core")
        U = assemble_transfer(lossy, sections=["core"])
        inp = [0] * chip.n_modes
        for m in chip.input_modes:
            inp[m] = 1
        dist = fock.output_distribution(U, inp)
        per_rail = [sum(dist[p] for p in _q1_q2_q3_patterns(chip) if p[r] == 1) for r in q1.out_modes]
        assert per_rail[1] == pytest.approx(0.5 * per_rail[0])

    def test_validate_rejects_shared_rails(self):
        from photonic_teleport.circuit import Qubit

        lay = CircuitLayout(4, qubits={"A": Qubit("A", (0, 1), (0, 1)), "B": Qubit("B", (1, 2), (1, 2))})
        with pytest.raises(LayoutError):
            lay.validate()

    def test_calibration_model_type(self):
        lay = parse_layout("MODES 1\nPS 0 HEATER a\nHEATERCAL a 20.0 0.0 0.0 850.0 0.0 10.0\n")
        assert isinstance(lay.heater_cals["a"], CrosstalkModel)
