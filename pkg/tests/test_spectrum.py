import math

import numpy as np
import pytest
from conftest import DETUNED_FIXTURES, FIGURE_FIXTURES, RESONANT_FIXTURES
from hypothesis import given, settings
from strategies import bloch_vectors, model_params

from fluorsqueeze import spectrum
from fluorsqueeze.core_types import BlochVector, QuadratureError, UnstableDynamicsError
from fluorsqueeze.dynamics import BlochAffine, equilibrium, frozen_atom_params
from fluorsqueeze.spectrum import (
    SpectrumSeries,
    default_scan,
    locate_extrema,
    phase_spread,
    refined_minimum,
    s_vector,
    spectrum_quadrature_oracle,
    spectrum_scan,
    spectrum_value,
    t_vector,
    t_vector_trace,
)

SYMMETRIC_GRID = np.linspace(-8.0, 8.0, 801)


def channel_of(scenario_file) -> int:
    return scenario_file.control.channel


class TestVectors:
    def test_channels_coincide_without_feedback(self, params):
        p = params(omega_rabi=0.7, delta_omega=0.3, theta1=0.4, theta2=0.4)
        assert np.array_equal(t_vector(p, 1), t_vector(p, 2))

    @pytest.mark.parametrize("theta", [0.0, 1.1, -2.5])
    def test_ground_state_gives_zero(self, params, theta):
        p = params(theta1=theta, theta2=theta)
        x_eq = BlochVector(0.0, 0.0, -1.0)
        assert np.array_equal(t_vector(p, 1, x_eq), np.zeros(3))
        assert np.array_equal(t_vector(p, 2, x_eq), np.zeros(3))

    def test_frozen_atom_has_no_channel_one_signal(self):
        p = frozen_atom_params(0.25)
        assert np.allclose(t_vector(p, 1), 0.0, atol=1e-12)

    def test_channel_one_needs_feedback_light(self, params):
        p = params(a0sq=0.55, a1sq=0.0, a2sq=0.45)
        with pytest.raises(ValueError):
            t_vector(p, 1)
        with pytest.raises(ValueError):
            t_vector_trace(p, 1)

    def test_rejects_unknown_channel(self, params):
        with pytest.raises(ValueError, match="channel"):
            t_vector(params(), 3)

    @settings(max_examples=300)
    @given(model_params(), bloch_vectors())
    def test_trace_form_matches_components(self, p, x_eq):
        for channel in (1, 2):
            assert np.allclose(t_vector(p, channel, x_eq), t_vector_trace(p, channel, x_eq), rtol=0, atol=1e-12)

    @pytest.mark.parametrize(
        "theta, expected", [(0.0, (1, 0, 0)), (math.pi / 2, (0, 1, 0)), (-math.pi / 2, (0, -1, 0))]
    )
    def test_s_vector(self, theta, expected):
        assert np.allclose(s_vector(theta), expected, atol=1e-16)


class TestShotNoise:
    def test_dark_channel(self, scenario):
        p = scenario("no-second-detector").params
        values = spectrum_value(p, 2, SYMMETRIC_GRID)
        assert np.array_equal(values, np.ones_like(SYMMETRIC_GRID))
        assert spectrum_quadrature_oracle(p, 2, 0.3) == 1.0

    def test_undriven_atom(self, params):
        values = spectrum_value(params(), 1, SYMMETRIC_GRID)
        assert np.allclose(values, 1.0, rtol=0, atol=1e-12)

    def test_frozen_atom(self, scenario):
        p = scenario("frozen-atom").params
        assert np.allclose(spectrum_value(p, 1, SYMMETRIC_GRID), 1.0, rtol=0, atol=1e-10)

    def test_scalar_in_scalar_out(self, params):
        assert isinstance(spectrum_value(params(), 1, 0.0), float)
        assert isinstance(spectrum_value(params(omega_rabi=0.3), 1, 0.0), float)


class TestReferenceValues:
    def test_resonant_no_feedback_closed_form(self, scenario):
        # theta = -pi/2 and c = 0 reduce the resolvent to the (y, z) block of A at mu = 0
        p = scenario("fig1-line1").params
        om = p.omega_rabi
        z = -1.0 / (1.0 + 2.0 * om * om)
        y = -2.0 * om * z
        ty = -(1.0 + z - y * y)
        tz = (1.0 + z) * y
        expected = 1.0 - 2.0 * p.a1sq * (ty - om * tz) / (0.5 + om * om)
        assert spectrum_value(p, 1, 0.0) == pytest.approx(expected, abs=1e-12)
        assert expected < 1.0

    def test_resonant_no_feedback_against_oracle(self, scenario):
        p = scenario("fig1-line1").params
        value = spectrum_value(p, 1, 0.0)
        assert value < 1.0
        assert value == pytest.approx(spectrum_quadrature_oracle(p, 1, 0.0), abs=1e-6)

    @pytest.mark.parametrize("name", FIGURE_FIXTURES)
    def test_oracle_agreement(self, scenario, name):
        sc = scenario(name)
        grid = np.linspace(-8.0, 8.0, 100)
        analytic = spectrum_value(sc.params, channel_of(sc), grid)
        oracle = spectrum_quadrature_oracle(sc.params, channel_of(sc), grid)
        assert np.allclose(analytic, oracle, rtol=0, atol=1e-6)

    @pytest.mark.parametrize("name", FIGURE_FIXTURES)
    def test_reference_sets_squeeze(self, scenario, name):
        sc = scenario(name)
        assert np.min(default_scan(sc.params, channel_of(sc)).S) < 1.0


class TestStructure:
    @pytest.mark.parametrize("name", FIGURE_FIXTURES)
    def test_even_in_frequency(self, scenario, name):
        sc = scenario(name)
        series = spectrum_scan(sc.params, channel_of(sc), -8.0, 8.0, 801)
        assert series.asymmetry() < 1e-10

    @settings(max_examples=100, deadline=None)
    @given(model_params())
    def test_even_for_random_parameters(self, p):
        mus = np.linspace(0.0, 6.0, 25)
        for channel in (1, 2):
            assert np.allclose(spectrum_value(p, channel, mus), spectrum_value(p, channel, -mus), rtol=0, atol=1e-10)

    @pytest.mark.parametrize("name", RESONANT_FIXTURES)
    def test_single_minimum_on_resonance(self, scenario, name):
        sc = scenario(name)
        extrema = locate_extrema(default_scan(sc.params, channel_of(sc)))
        (mu, value), = extrema["global_minima"]
        assert abs(mu) < 1e-6
        assert value < 1.0

    @pytest.mark.parametrize("name", DETUNED_FIXTURES)
    def test_two_minima_off_resonance(self, scenario, name):
        sc = scenario(name)
        extrema = locate_extrema(default_scan(sc.params, channel_of(sc)))
        minima = extrema["global_minima"]
        assert len(minima) == 2
        (mu_a, s_a), (mu_b, s_b) = minima
        assert mu_a == pytest.approx(-mu_b, abs=1e-6)
        assert abs(mu_a) > 0.1
        assert s_a < 1.0 and s_b < 1.0
        assert any(abs(mu) < 1e-6 for mu, _ in extrema["local_maxima"])

    def test_refined_minimum(self, scenario):
        p = scenario("fig1-line1").params
        mu, value = refined_minimum(p, 1)
        assert mu == 0.0
        assert value == pytest.approx(spectrum_value(p, 1, 0.0), abs=1e-14)

        p3 = scenario("fig1-line3").params
        mu3, value3 = refined_minimum(p3, 1)
        assert mu3 > 0.1
        assert value3 <= np.min(spectrum_value(p3, 1, SYMMETRIC_GRID)) + 1e-12


class TestNoFeedbackLimits:
    def test_proportional_to_detected_fraction(self, params):
        base = dict(omega_rabi=0.6, delta_omega=-0.8, theta1=0.3, theta2=0.3)
        mus = np.linspace(-4.0, 4.0, 41)
        ratios = []
        for a2sq, a1sq in [(0.1, 0.45), (0.45, 0.45), (0.9, 0.05)]:
            p = params(a0sq=1.0 - a1sq - a2sq, a1sq=a1sq, a2sq=a2sq, **base)
            ratios.append((spectrum_value(p, 2, mus) - 1.0) / a2sq)
        assert np.allclose(ratios[0], ratios[1], rtol=0, atol=1e-10)
        assert np.allclose(ratios[0], ratios[2], rtol=0, atol=1e-10)

    def test_channels_agree(self, params):
        p = params(omega_rabi=1.3, delta_omega=0.5, theta1=-0.7, theta2=-0.7)
        mus = np.linspace(-5.0, 5.0, 51)
        assert np.allclose(spectrum_value(p, 1, mus), spectrum_value(p, 2, mus), rtol=0, atol=1e-12)


class TestThermal:
    def test_lorentzian_peaks(self, scenario):
        p = scenario("thermal").params
        series = default_scan(p, 1)
        assert np.all(series.S > 1.0)
        peaks = [mu for mu, _ in locate_extrema(series)["local_maxima"] if abs(mu) > 0.5]
        assert len(peaks) == 2
        assert min(peaks) == pytest.approx(-2.0, abs=0.15)
        assert max(peaks) == pytest.approx(2.0, abs=0.15)

    @pytest.mark.parametrize("channel", [1, 2])
    def test_phase_independent(self, scenario, channel):
        p = scenario("thermal").params
        assert phase_spread(p, channel, SYMMETRIC_GRID, phases=8) < 1e-10


class TestFailures:
    def test_unstable_drift(self, params, monkeypatch):
        p = params(omega_rabi=0.4)
        x_eq = equilibrium(p)
        monkeypatch.setattr(spectrum, "equilibrium", lambda q: x_eq)
        monkeypatch.setattr(spectrum, "bloch_affine", lambda q: BlochAffine(-np.eye(3), np.zeros(3)))
        with pytest.raises(UnstableDynamicsError):
            spectrum_value(p, 1, 0.0)
        with pytest.raises(UnstableDynamicsError):
            spectrum_quadrature_oracle(p, 1, 0.0)

    def test_oracle_reports_slow_decay(self, params, monkeypatch):
        monkeypatch.setattr(spectrum, "ORACLE_MAX_ERROR", 1e-300)
        with pytest.raises(QuadratureError):
            spectrum_quadrature_oracle(params(omega_rabi=0.4), 1, 0.0)

    @pytest.mark.parametrize("mu_min, mu_max, points", [(-1.0, 1.0, 1), (1.0, 1.0, 10), (2.0, -2.0, 10)])
    def test_scan_arguments(self, params, mu_min, mu_max, points):
        with pytest.raises(ValueError):
            spectrum_scan(params(), 1, mu_min, mu_max, points)


class TestExtrema:
    def test_flat_series(self):
        series = SpectrumSeries(channel=1, mu=np.linspace(-1, 1, 5), S=np.ones(5))
        extrema = locate_extrema(series)
        assert extrema["global_minima"][0][1] == 1.0

    def test_ties_prefer_small_frequency(self):
        mu = np.linspace(-3.0, 3.0, 7)
        S = np.array([1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0])
        minima = locate_extrema(SpectrumSeries(channel=1, mu=mu, S=S))["global_minima"]
        assert [m for m, _ in minima][0] == pytest.approx(0.0, abs=1e-12)
        assert len(minima) == 3

    def test_frame_round_trip(self, params):
        series = spectrum_scan(params(omega_rabi=0.3), 1, -2.0, 2.0, 9)
        back = SpectrumSeries.from_frame(series.to_frame(), channel=1)
        assert np.array_equal(back.S, series.S)
        assert back.stderr is None
