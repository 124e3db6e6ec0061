import math

import numpy as np
import pytest
from hypothesis import given
from strategies import bloch_vectors, model_params, random_bloch, random_params

from fluorsqueeze.core_types import (
    BlochVector,
    IntegrationError,
    RecordMismatchError,
    bloch_of,
    is_hermitian,
    rho_from_bloch,
)
from fluorsqueeze.dynamics import ModelParams, equilibrium, prior_evolution
from fluorsqueeze.spectrum import spectrum_value
from fluorsqueeze.trajectories import (
    THREADS_ENV,
    SmeConfig,
    bloch_diffusion,
    ensemble_mean,
    ensemble_spectrum,
    estimate_spectrum,
    random_stream,
    read_record,
    resolve_workers,
    simulate_ensemble,
    simulate_trajectory,
    sme_drift_diffusion,
    write_record,
)

GROUND = BlochVector(0.0, 0.0, -1.0)


def within_errors(estimate, analytic, k=3.0) -> float:
    """Fraction of grid points where the estimate lies within k standard errors."""
    return float(np.mean(np.abs(estimate.S - analytic) <= k * estimate.stderr))


class TestSmeConfig:
    @pytest.mark.parametrize(
        "changes",
        [
            {"dt": 0.0},
            {"dt": 1e-2, "t_final": 0.5},
            {"n_traj": 0},
            {"seed": -1},
            {"record_stride": 3},
            {"initial": "ground"},
            {"initial": BlochVector(1.0, 1.0, 0.0)},
        ],
    )
    def test_rejects(self, changes):
        with pytest.raises(ValueError):
            SmeConfig(**{"dt": 1e-3, "t_final": 1.0, **changes}).validate()

    def test_step_count(self):
        cfg = SmeConfig(dt=1e-3, t_final=2.0, record_stride=4).validate()
        assert cfg.n_steps == 2000


class TestDriftDiffusion:
    def test_trace_free(self):
        rng = np.random.default_rng(5)
        for _ in range(1000):
            p = random_params(rng)
            drift, diff1, diff2 = sme_drift_diffusion(p, rho_from_bloch(random_bloch(rng)))
            for op in (drift, diff1, diff2):
                assert abs(np.trace(op)) < 1e-12
                assert is_hermitian(op)

    def test_no_second_detector(self, params):
        p = params(a0sq=0.55, a1sq=0.45, a2sq=0.0, omega_rabi=0.4)
        _, _, diff2 = sme_drift_diffusion(p, rho_from_bloch(BlochVector(0.3, -0.2, 0.1)))
        assert np.array_equal(diff2, np.zeros((2, 2)))

    @given(model_params(), bloch_vectors())
    def test_bloch_image_of_diffusion(self, p, v):
        _, diff1, diff2 = sme_drift_diffusion(p, rho_from_bloch(v))
        g1, g2 = bloch_diffusion(p, v.as_array())
        assert np.allclose(bloch_of(diff1), g1, atol=1e-12)
        assert np.allclose(bloch_of(diff2), g2, atol=1e-12)

    @given(model_params(strict=False), bloch_vectors(radius=1.0))
    def test_full_detection_keeps_pure_states_pure(self, p, v):
        p = p.replace(c=0.0, n_bar=0.0, k_d=0.0)
        rho = rho_from_bloch(v).matrix
        drift, diff1, diff2 = sme_drift_diffusion(p, rho)
        dt = 1e-5
        # averaging over the four sign choices of dW = +-sqrt(dt) keeps the Ito moments
        purities = []
        for s1 in (-1.0, 1.0):
            for s2 in (-1.0, 1.0):
                step = rho + drift * dt + (s1 * diff1 + s2 * diff2) * math.sqrt(dt)
                purities.append(np.real(np.trace(step @ step)))
        assert abs(1.0 - np.mean(purities)) < 1e-6


class TestSimulation:
    def test_ground_state_is_fixed(self, params):
        cfg = SmeConfig(dt=1e-3, t_final=0.5, seed=3, initial=GROUND)
        record = simulate_trajectory(params(), cfg, 0)
        assert np.array_equal(record.states, np.tile([0.0, 0.0, -1.0], (501, 1)))
        assert record.projections == 0
        assert np.array_equal(record.noise(1), record.dy[:, 0])
        assert np.array_equal(record.noise(2), record.dy[:, 1])

    def test_increments_are_the_generator_draws(self, scenario):
        p = scenario("fig1-line1").params
        cfg = SmeConfig(dt=1e-3, t_final=2.0, seed=42)
        record = simulate_trajectory(p, cfg, 7)
        draws = random_stream(42, 7).standard_normal((cfg.n_steps, 2)) * math.sqrt(cfg.dt)
        assert np.allclose(record.noise(1), draws[:, 0], rtol=0, atol=1e-12)
        assert np.allclose(record.noise(2), draws[:, 1], rtol=0, atol=1e-12)

    def test_reproducible(self, scenario):
        p = scenario("fig1-line2").params
        cfg = SmeConfig(dt=1e-3, t_final=1.0, seed=9)
        a = simulate_trajectory(p, cfg, 4)
        b = simulate_trajectory(p, cfg, 4)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.dy, b.dy)
        c = simulate_trajectory(p, cfg, 5)
        assert not np.array_equal(a.dy, c.dy)

    def test_independent_of_blocks_and_threads(self, scenario):
        p = scenario("fig2-line4").params
        cfg = SmeConfig(dt=1e-3, t_final=0.5, seed=17, n_traj=6)
        serial = simulate_ensemble(p, cfg, workers=1, block_size=6)
        threaded = simulate_ensemble(p, cfg, workers=3, block_size=2)
        for a, b in zip(serial, threaded):
            assert a.traj_index == b.traj_index
            assert np.array_equal(a.states, b.states)
            assert np.array_equal(a.dy, b.dy)
        single = simulate_trajectory(p, cfg, 4)
        assert np.array_equal(single.states, serial[4].states)

    def test_step_matches_operator_form(self, scenario):
        p = scenario("fig1-line4").params
        cfg = SmeConfig(dt=1e-3, t_final=0.01, seed=8)
        record = simulate_trajectory(p, cfg, 2)
        assert record.projections == 0
        draws = random_stream(8, 2).standard_normal((cfg.n_steps, 2)) * math.sqrt(cfg.dt)
        for j in range(10):
            x = record.states[j]
            drift, diff1, diff2 = sme_drift_diffusion(p, rho_from_bloch(BlochVector.from_array(x)))
            expected = x + bloch_of(drift) * cfg.dt + bloch_of(diff1) * draws[j, 0] + bloch_of(diff2) * draws[j, 1]
            assert np.allclose(record.states[j + 1], expected, rtol=0, atol=1e-10)

    def test_block_records_share_one_buffer(self, scenario):
        p = scenario("fig1-line1").params
        cfg = SmeConfig(dt=1e-3, t_final=0.2, seed=4, n_traj=3)
        records = simulate_ensemble(p, cfg, workers=1, block_size=3)
        assert records[0].states.base is records[1].states.base
        assert records[1].dy.base is records[2].dy.base
        for r in records:
            assert r.states.flags.c_contiguous and r.dy.flags.c_contiguous
            assert r.states.shape == (201, 3) and r.dy.shape == (200, 2)

    def test_states_stay_in_ball(self, scenario):
        p = scenario("fig1-line1").params
        cfg = SmeConfig(dt=1e-3, t_final=20.0, seed=1, n_traj=20)
        records = simulate_ensemble(p, cfg)
        steps = cfg.n_steps * cfg.n_traj
        assert sum(r.projections for r in records) < 1e-3 * steps
        assert max(r.max_violation for r in records) < 1e-3
        for r in records:
            assert np.all(np.linalg.norm(r.states, axis=1) <= 1.0 + 1e-9)

    def test_record_stride(self, scenario):
        p = scenario("fig1-line1").params
        full = simulate_trajectory(p, SmeConfig(dt=1e-3, t_final=1.0, seed=2), 0)
        thin = simulate_trajectory(p, SmeConfig(dt=1e-3, t_final=1.0, seed=2, record_stride=10), 0)
        assert thin.states.shape == (101, 3)
        assert np.array_equal(thin.states, full.states[::10])
        assert np.allclose(thin.dy, full.dy.reshape(100, 10, 2).sum(axis=1), atol=1e-15)

    def test_non_finite_state_aborts(self):
        p = ModelParams(omega_rabi=1.7e308)
        cfg = SmeConfig(dt=10.0, t_final=1000.0, initial=GROUND)
        with pytest.raises(IntegrationError, match="non-finite"):
            simulate_trajectory(p, cfg, 0)

    def test_current_increments_are_white(self, scenario):
        p = scenario("fig1-line2").params
        cfg = SmeConfig(dt=1e-3, t_final=100.0, seed=77, n_traj=10)
        noise = np.concatenate([r.noise(1) for r in simulate_ensemble(p, cfg)])
        assert noise.size == 1_000_000
        assert abs(noise.mean()) < 1e-2 * math.sqrt(cfg.dt)
        assert noise.var() / cfg.dt == pytest.approx(1.0, rel=1e-2)

    def test_mean_follows_prior_state(self, scenario):
        p = scenario("fig1-line3").params
        cfg = SmeConfig(dt=1e-3, t_final=5.0, seed=31, n_traj=500, initial=BlochVector(0.0, 0.0, 0.0), record_stride=500)
        times, mean, stderr = ensemble_mean(simulate_ensemble(p, cfg))
        prior = prior_evolution(p, np.zeros(3), times)
        assert len(times) == 11
        assert np.all(np.abs(mean[1:] - prior[1:]) <= 5 * stderr[1:] + 2e-3)

    @pytest.mark.slow
    def test_time_average_matches_equilibrium(self, scenario):
        p = scenario("fig1-line1").params
        cfg = SmeConfig(dt=1e-3, t_final=400.0, seed=404, n_traj=200, record_stride=100)
        records = simulate_ensemble(p, cfg)
        half = len(records[0].times) // 2
        averages = np.array([r.states[half:].mean(axis=0) for r in records])
        mean = averages.mean(axis=0)
        stderr = averages.std(axis=0, ddof=1) / math.sqrt(len(records))
        assert np.all(np.abs(mean - equilibrium(p).as_array()) <= 5 * stderr + 2e-3)


class TestEstimator:
    def test_white_noise(self, scenario):
        p = scenario("ground").params
        cfg = SmeConfig(dt=1e-3, t_final=10.0, seed=8, n_traj=100, initial=GROUND)
        records = simulate_ensemble(p, cfg)
        mus = np.linspace(-3.0, 3.0, 41)
        estimate = estimate_spectrum(records, 1, mus)
        assert estimate.kind == "monte_carlo"
        assert within_errors(estimate, np.ones_like(mus)) >= 0.95

    def test_streaming_matches_records(self, scenario):
        p = scenario("fig1-line1").params
        cfg = SmeConfig(dt=1e-3, t_final=5.0, seed=12, n_traj=8)
        mus = np.linspace(-2.0, 2.0, 9)
        stored = estimate_spectrum(simulate_ensemble(p, cfg), 1, mus)
        streamed = ensemble_spectrum(p, cfg, 1, mus, block_size=3)
        assert np.allclose(streamed.S, stored.S, rtol=1e-9)
        assert np.allclose(streamed.stderr, stored.stderr, rtol=1e-9)

    def test_two_records_have_no_error_bars(self, scenario):
        p = scenario("fig1-line1").params
        records = simulate_ensemble(p, SmeConfig(dt=1e-3, t_final=1.0, n_traj=2))
        estimate = estimate_spectrum(records, 1, [0.0, 1.0])
        assert np.all(np.isfinite(estimate.S))
        assert np.all(np.isnan(estimate.stderr))

    def test_rejects_mixed_records(self, scenario):
        cfg = SmeConfig(dt=1e-3, t_final=1.0, n_traj=2)
        a = simulate_ensemble(scenario("fig1-line1").params, cfg)
        b = simulate_ensemble(scenario("fig1-line2").params, cfg)
        with pytest.raises(RecordMismatchError):
            estimate_spectrum([a[0], b[1]], 1, [0.0])
        with pytest.raises(RecordMismatchError):
            estimate_spectrum(a[:1], 1, [0.0])
        other_grid = simulate_ensemble(scenario("fig1-line1").params, SmeConfig(dt=1e-3, t_final=2.0, n_traj=1))
        with pytest.raises(RecordMismatchError):
            estimate_spectrum([a[0], other_grid[0]], 1, [0.0])

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["fig1-line1", "fig1-line2"])
    def test_cross_validation(self, scenario, name):
        sc = scenario(name)
        mus = np.linspace(-3.0, 3.0, 41)
        estimate = ensemble_spectrum(sc.params, sc.sme, 1, mus)
        assert within_errors(estimate, spectrum_value(sc.params, 1, mus)) >= 0.95

    @pytest.mark.slow
    @pytest.mark.parametrize("name", ["fig1-line1", "fig1-line2"])
    def test_mean_trajectory_from_equilibrium(self, scenario, name):
        p = scenario(name).params
        cfg = SmeConfig(dt=1e-3, t_final=20.0, seed=5, n_traj=2000, initial=BlochVector(0.0, 0.0, 0.0), record_stride=2000)
        times, mean, stderr = ensemble_mean(simulate_ensemble(p, cfg))
        prior = prior_evolution(p, np.zeros(3), times)
        assert np.all(np.abs(mean[1:] - prior[1:]) <= 5 * stderr[1:] + 1e-3)


class TestRecordFiles:
    def test_round_trip(self, scenario, tmp_path):
        p = scenario("fig1-line4").params
        record = simulate_trajectory(p, SmeConfig(dt=1e-3, t_final=0.2, seed=6), 3)
        path = write_record(record, tmp_path / "traj.csv")
        back = read_record(path)
        assert back.params == record.params
        assert back.traj_index == 3 and back.seed == 6
        assert np.array_equal(back.states, record.states)
        assert np.array_equal(back.dy, record.dy)
        assert np.array_equal(back.times, record.times)

    def test_header_is_required(self, tmp_path):
        path = tmp_path / "bare.csv"
        path.write_text("t;x;y;z;dY1;dY2\n0;0;0;-1;0;0\n", encoding="utf-8")
        with pytest.raises(RecordMismatchError):
            read_record(path)

    def test_unknown_parameter_in_header(self, scenario, tmp_path):
        record = simulate_trajectory(scenario("ground").params, SmeConfig(dt=1e-3, t_final=0.1, seed=1), 0)
        path = write_record(record, tmp_path / "traj.csv")
        text = path.read_text(encoding="utf-8")
        assert '"omega_rabi"' in text
        path.write_text(text.replace('"omega_rabi"', '"omega"', 1), encoding="utf-8")
        with pytest.raises(RecordMismatchError, match="traj.csv"):
            read_record(path)


def test_worker_count(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    assert resolve_workers() == 3
    assert resolve_workers(2) == 2
    monkeypatch.delenv(THREADS_ENV)
    assert resolve_workers() >= 1
    assert resolve_workers(0) == 1
