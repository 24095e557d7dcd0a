import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from photonic_teleport.characterization import (
    CharacterizationError,
    CrosstalkFit,
    CrosstalkModel,
    double_ratio_reflectivity,
    fit_crosstalk,
    heatercal_line,
    phase_from_heater,
    reachable_octants,
    read_sweep_csv,
    synthetic_sweep,
    tuning_range_report,
)
from photonic_teleport.circuit import coupler_matrix, parse_layout


def power_matrix(eta, l_in=(1.0, 1.0), l_out=(1.0, 1.0)):
    T = np.abs(coupler_matrix(eta).T) ** 2  # T[i][j]: input i to output j
    return np.outer(l_in, l_out) * T


VS = np.linspace(0, 10, 21)
VN = np.linspace(0, 10, 11)


class TestDoubleRatio:
    def test_lossy_one_third(self):
        P = power_matrix(1 / 3, (0.7, 0.5), (0.9, 0.4))
        assert double_ratio_reflectivity(P) == pytest.approx(1 / 3, abs=1e-15)

    def test_balanced(self):
        assert double_ratio_reflectivity(power_matrix(0.5)) == pytest.approx(0.5)

    def test_column_scaling(self):
        P = power_matrix(0.27, (0.8, 0.6), (0.5, 0.9))
        P2 = P.copy()
        P2[:, 0] *= 3
        assert double_ratio_reflectivity(P2) == pytest.approx(double_ratio_reflectivity(P), abs=1e-15)

    @settings(max_examples=200)
    @given(st.floats(0.01, 0.99), st.lists(st.floats(0.01, 1.0), min_size=4, max_size=4))
    def test_scaling_invariance(self, eta, losses):
        P = power_matrix(eta, losses[:2], losses[2:])
        assert abs(double_ratio_reflectivity(P) - eta) < 1e-12

    @pytest.mark.parametrize("P", [np.ones((3, 2)), -np.ones((2, 2)), [[0, 1], [1, 0]], [[0, 0], [1, 1]]])
    def test_invalid(self, P):
        with pytest.raises(CharacterizationError):
            double_ratio_reflectivity(P)


class TestHeaterModel:
    def test_zero_voltage(self):
        m = CrosstalkModel(20.0, 1.0, 0.37)
        assert phase_from_heater(m, 0.0, 0.0).value == pytest.approx(0.37)

    def test_quadratic_in_voltage(self):
        m = CrosstalkModel(20.0, 1.0, 0.37)
        base = [phase_from_heater(m, v, 0).value - m.c for v in (1.0, 2.0, 3.0)]
        assert base[1] == pytest.approx(4 * base[0])
        assert base[2] == pytest.approx(9 * base[0])
        assert base[0] == pytest.approx(20.0 / 850.0)

    def test_out_of_range_flag(self):
        m = CrosstalkModel(20.0, 1.0, 0.0, v_max=8.0)
        assert not phase_from_heater(m, 9.0).in_range
        with pytest.warns(UserWarning):
            m.phase(9.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            m.phase(7.0)

    @pytest.mark.parametrize("kw", [{"a": -1.0, "b": 0.0}, {"a": 1.0, "b": 2.0}, {"a": 1.0, "b": 0.0, "resistance": 0}])
    def test_invalid(self, kw):
        with pytest.raises(CharacterizationError):
            CrosstalkModel(c=0.0, **kw)

    def test_limited_range_one_octant(self):
        # about 1.6 rad at full drive on both the theta and phi heaters
        a = 1.6 * 850 / 100
        theta, phi = CrosstalkModel(a, 0.5, 0.0), CrosstalkModel(a, 0.5, 0.0)
        assert theta.max_phase_excursion == pytest.approx(1.6)
        rep = tuning_range_report(theta, phi)
        assert rep["one_octant"]
        assert rep["octants"] == 1

    def test_wide_range_several_octants(self):
        assert reachable_octants(math.pi, 2 * math.pi) == 8
        assert reachable_octants(math.pi / 2 - 0.1, math.pi / 2 - 0.1) == 1


class TestCrosstalkFit:
    @pytest.mark.parametrize("a,b,c", [(15.0, 1.2, 0.3), (20.0, -2.0, -1.0), (12.0, 0.5, 2.5)])
    def test_noiseless_round_trip(self, a, b, c):
        truth = CrosstalkModel(a, b, c)
        model = fit_crosstalk(synthetic_sweep(truth, VS, VN, offset=0.6, amplitude=0.4))
        for key in ("a", "b"):
            assert getattr(model, key) == pytest.approx(getattr(truth, key), rel=1e-9)
        assert math.remainder(model.c - c, 2 * math.pi) == pytest.approx(0.0, abs=1e-9)
        assert model.fringe_offset == pytest.approx(0.6, rel=1e-9)
        assert model.fringe_amplitude == pytest.approx(0.4, rel=1e-9)

    def test_no_spurious_crosstalk(self):
        truth = CrosstalkModel(18.0, 0.0, 0.5)
        data = synthetic_sweep(truth, VS, VN, noise=0.01, rng=3)
        model = fit_crosstalk(data)
        assert abs(model.b) < 3 * model.stderr["b"]

    def test_noise_robustness(self):
        truth = CrosstalkModel(40.0, 4.0, 1.0)
        r = np.random.default_rng(17)
        for _ in range(20):
            model = fit_crosstalk(synthetic_sweep(truth, VS, VN, noise=0.01, rng=r))
            assert model.a == pytest.approx(truth.a, rel=0.05)
            assert model.b == pytest.approx(truth.b, rel=0.05)
            assert model.c == pytest.approx(truth.c, rel=0.05)

    def test_monotone_in_self_voltage(self):
        model = fit_crosstalk(synthetic_sweep(CrosstalkModel(15.0, 1.2, 0.3), VS, VN))
        for vn in (0.0, 5.0, 10.0):
            ph = [phase_from_heater(model, v, vn).value for v in np.linspace(model.v_min, model.v_max, 50)]
            assert np.all(np.diff(ph) > 0)

    def test_sweep_must_vary_both(self):
        data = synthetic_sweep(CrosstalkModel(15.0, 1.2, 0.3), VS, [2.0])
        with pytest.raises(CharacterizationError):
            fit_crosstalk(data)

    def test_ill_conditioned(self):
        # a tiny voltage range barely moves the phase: coefficients are not identifiable
        data = synthetic_sweep(CrosstalkModel(15.0, 1.2, 0.3), np.linspace(0, 0.3, 5), np.linspace(0, 0.3, 5))
        with pytest.raises(CharacterizationError, match="condition"):
            fit_crosstalk(data)

    def test_estimator_api(self):
        truth = CrosstalkModel(15.0, 1.2, 0.3)
        data = synthetic_sweep(truth, VS, VN)
        est = clone(CrosstalkFit(grid_step=0.1)).fit(data[:, :2], data[:, 2])
        assert est.get_params()["grid_step"] == 0.1
        assert est.score(data[:, :2], data[:, 2]) == pytest.approx(1.0)
        np.testing.assert_allclose(est.phase(data[:5, :2]),
                                   [truth.evaluate(v, n).value for v, n in data[:5, :2]], atol=1e-9)

    def test_layout_line(self, tmp_path):
        model = fit_crosstalk(synthetic_sweep(CrosstalkModel(15.0, 1.2, 0.3), VS, VN), neighbor="phi1")
        line = heatercal_line("theta1", model)
        lay = parse_layout(f"MODES 2\nPS 0 HEATER theta1\nPS 1 HEATER phi1\n{line}\n")
        cal = lay.heater_cals["theta1"]
        assert cal.a == model.a and cal.neighbor == "phi1"

    def test_csv(self, tmp_path):
        data = synthetic_sweep(CrosstalkModel(15.0, 1.2, 0.3), VS, VN)
        path = tmp_path / "sweep.csv"
        np.savetxt(path, data, delimiter=",", header="v_self,v_neighbor,power", comments="")
        np.testing.assert_allclose(read_sweep_csv(path), data)
        bad = tmp_path / "bad.csv"
        bad.write_text("v_self,power\n1,2\n", encoding="utf-8")
        with pytest.raises(CharacterizationError):
            read_sweep_csv(bad)
