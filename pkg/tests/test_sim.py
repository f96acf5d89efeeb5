import json

import numpy as np
import pytest

from divland import sim
from divland.errors import DomainError
from divland.sim import (
    C1,
    C2,
    NOMINAL_PARAMS,
    TABLE_RANGES,
    BaselinePolicy,
    ParamRanges,
    SensorChannel,
    SimParams,
    Trajectory,
    VehicleState,
    run_episode,
    simulate_batch,
)

from oracles import plant_step

G = 9.81


def _sensor(delay=1, jitter=0.0, sigma_w=0.0, sigma_p=0.0, n=1, seed=0):
    rngs = [np.random.default_rng([seed, i]) for i in range(n)]
    return SensorChannel(delay, jitter, sigma_w, sigma_p, rngs)


class TestDivergence:
    @pytest.mark.parametrize("h,v,d", [(4.0, 0.0, 0.0), (4.0, -1.0, 0.5), (2.0, -1.0, 1.0), (2.0, 1.0, -1.0)])
    def test_values(self, h, v, d):
        assert sim.true_divergence(VehicleState(h, v)) == pytest.approx(d)

    def test_ground_rejected(self):
        with pytest.raises(DomainError):
            sim.true_divergence(VehicleState(0.0, -1.0))


class TestDynamics:
    def test_equilibrium(self):
        s = sim.step_dynamics(VehicleState(3.0, 0.0, 0.0), 0.0, 0.025, 0.02)
        assert s == VehicleState(3.0, 0.0, 0.0)

    def test_thrust_lag(self):
        s = sim.step_dynamics(VehicleState(3.0), 1.0, 0.025, 0.02)
        assert s.T == pytest.approx(0.025 / 0.045)

    @pytest.mark.parametrize("cmd,bound", [(-20.0, -0.8 * G), (50.0, 0.5 * G)])
    def test_saturation(self, cmd, bound):
        s = VehicleState(5.0)
        for _ in range(200):
            s = sim.step_dynamics(s, cmd, 0.02, 0.005)
        assert s.T == pytest.approx(bound)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        h, v, T = 5.0, 0.0, 0.0
        s = VehicleState(h, v, T)
        for _ in range(500):
            cmd, dt, tau = rng.uniform(-15, 10), rng.uniform(0.02, 0.034), rng.uniform(0.005, 0.04)
            s = sim.step_dynamics(s, cmd, dt, tau)
            h, v, T = plant_step(h, v, T, cmd, dt, tau)
            assert (s.h, s.v, s.T) == pytest.approx((h, v, T), abs=1e-12)

    @pytest.mark.parametrize("bad", [dict(T_sp=float("nan")), dict(dt=0.0), dict(tau=-1.0)])
    def test_invalid_inputs(self, bad):
        kw = {"T_sp": 0.0, "dt": 0.02, "tau": 0.02, **bad}
        with pytest.raises(DomainError):
            sim.step_dynamics(VehicleState(2.0), **kw)


class TestSensor:
    def test_constant_input_noiseless(self):
        s = _sensor(delay=1)
        d, dd = [], []
        for _ in range(5):
            o, r, _ = s.observe(np.array([0.7]), 0.02)
            d.append(o[0])
            dd.append(r[0])
        assert d[0] == 0.0 and d[1:] == [0.7] * 4
        assert dd[2:] == [0.0] * 3

    def test_step_arrives_after_delay(self):
        s = _sensor(delay=3)
        obs = [s.observe(np.array([0.0 if k < 5 else 1.0]), 0.02)[0][0] for k in range(12)]
        assert obs.index(1.0) == 8

    def test_all_frames_missed(self):
        s = _sensor(jitter=1.0, sigma_w=0.1)
        for k in range(50):
            d, dd, missed = s.observe(np.array([float(k)]), 0.02)
            assert missed[0] and d[0] == 0.0 and dd[0] == 0.0

    def test_missed_frame_holds_and_rate_uses_elapsed_time(self):
        s = _sensor(delay=1)
        s.observe(np.array([0.0]), 0.1)
        s.observe(np.array([0.0]), 0.1)
        s.jitter[:] = 1.0
        s.observe(np.array([1.0]), 0.1)
        d, dd, missed = s.observe(np.array([1.0]), 0.1)
        assert missed[0] and d[0] == 0.0 and dd[0] == 0.0
        s.jitter[:] = 0.0
        d, dd, _ = s.observe(np.array([1.0]), 0.1)
        assert d[0] == 1.0
        assert dd[0] == pytest.approx(1.0 / 0.3)

    def test_proportional_noise_scales_with_delayed_magnitude(self):
        s = _sensor(sigma_p=0.2, n=20000, seed=3)
        s.observe(np.full(20000, 2.0), 0.02)
        d, _, _ = s.observe(np.full(20000, 2.0), 0.02)
        assert np.std(d - 2.0) == pytest.approx(0.4, rel=0.03)

    def test_noise_stream_is_batch_independent(self):
        rng_a = [np.random.default_rng([9, 0])]
        rng_b = [np.random.default_rng([9, k]) for k in (5, 0, 6)]
        a = SensorChannel(2, 0.1, 0.1, 0.1, rng_a)
        b = SensorChannel(2, 0.1, 0.1, 0.1, rng_b)
        for k in range(600):
            da = a.observe(np.array([np.sin(k / 10)]), 0.025)[0][0]
            db = b.observe(np.full(3, np.sin(k / 10)), 0.025)[0][1]
            assert da == db


class TestParams:
    def test_sample_within_table(self):
        rng = np.random.default_rng(0)
        draws = [sim.sample_params(rng) for _ in range(10_000)]
        for name in TABLE_RANGES.__dataclass_fields__:
            lo, hi = getattr(TABLE_RANGES, name)
            vals = [getattr(p, name) for p in draws]
            assert lo <= min(vals) and max(vals) <= hi
        counts = np.bincount([p.delay for p in draws], minlength=5)[1:] / len(draws)
        np.testing.assert_allclose(counts, 0.25, atol=0.02)

    def test_sampling_replays(self):
        assert sim.sample_params(sim.make_rng(5)) == sim.sample_params(sim.make_rng(5))

    def test_ranges_cannot_widen(self):
        with pytest.raises(DomainError):
            ParamRanges(freq=(20.0, 50.0))
        assert ParamRanges(delay=(2, 2)).delay == (2, 2)

    def test_physical_sanity(self):
        with pytest.raises(DomainError):
            SimParams(0, 0.0, 0.1, 0.0, 0.02, 40.0)
        with pytest.raises(DomainError):
            SimParams(1, 0.0, 0.1, 0.0, 0.02, 0.0)
        assert not SimParams.noiseless().within()
        assert NOMINAL_PARAMS.within()

    def test_dict_roundtrip(self):
        assert SimParams.from_dict(NOMINAL_PARAMS.to_dict()) == NOMINAL_PARAMS


class TestBaseline:
    def test_on_setpoint(self):
        assert sim.baseline_controller(0.5, 0.5, 4.0) == 0.0

    def test_too_slow_commands_descent(self):
        assert sim.baseline_controller(0.2, 0.5, 3.0) == pytest.approx(-0.9)

    def test_presets(self):
        assert C1.gain > C2.gain and C1.setpoint == C2.setpoint == 0.5


class TestEpisode:
    def test_hover_times_out(self):
        traj = run_episode(lambda d, dd, dt: 0.0, 4.0, SimParams.noiseless())
        assert traj.reason == "timeout"
        assert tuple(sim.fitness(traj)) == pytest.approx((30.0, 4.0, 0.0))

    def test_full_thrust_hits_ceiling(self):
        traj = run_episode(lambda d, dd, dt: 100.0, 4.0, SimParams.noiseless())
        assert traj.reason == "ceiling" and traj.elapsed < 30.0
        assert sim.fitness(traj).height >= 15.0

    def test_activation_delay(self):
        traj = run_episode(lambda d, dd, dt: -5.0, 4.0, SimParams.noiseless(freq=40.0))
        early = traj["t"] < 1.0 - 1e-9
        assert np.all(traj["T_sp"][early] == 0.0) and np.all(traj["h"][early] == 4.0)
        assert traj["T_sp"][np.flatnonzero(~early)[0]] == -5.0

    def test_low_gain_smooth_landing(self):
        traj = run_episode(BaselinePolicy(1.5), 4.0, SimParams.noiseless())
        assert traj.reason == "landed"
        h = traj["h"][traj["t"] > 1.0]
        assert np.all(np.diff(h) <= 0)
        assert sim.fitness(traj).height <= 0.05

    def test_time_grid_and_thrust_bounds(self):
        p = SimParams(4, 0.2, 0.15, 0.25, 0.005, 33.0)
        traj = run_episode(C1, 6.0, p, seed=11)
        np.testing.assert_allclose(np.diff(traj["t"]), p.dt, rtol=1e-9)
        assert np.all((traj["T"] >= -0.8 * G - 1e-12) & (traj["T"] <= 0.5 * G + 1e-12))
        assert traj["t"][-1] == pytest.approx(traj.elapsed)

    @pytest.mark.parametrize("h0", [0.05, 15.0, 20.0])
    def test_bad_start(self, h0):
        with pytest.raises(DomainError):
            run_episode(C2, h0, NOMINAL_PARAMS)

    def test_same_seed_same_trajectory(self):
        a = run_episode(C1, 4.0, NOMINAL_PARAMS, seed=3)
        b = run_episode(C1, 4.0, NOMINAL_PARAMS, seed=3)
        for c in sim.TRAJECTORY_COLUMNS:
            np.testing.assert_array_equal(a[c], b[c])

    def test_csv_roundtrip(self, tmp_path):
        traj = run_episode(C1, 4.0, NOMINAL_PARAMS, seed=1)
        path = tmp_path / "traj.csv"
        traj.to_csv(path)
        assert path.read_text().splitlines()[0] == "t,h,v,T,T_sp,D_true,D_obs,dD_obs,missed"
        back = Trajectory.from_csv(path)
        assert back.reason == traj.reason
        np.testing.assert_allclose(back["h"], traj["h"], rtol=1e-8)
        np.testing.assert_array_equal(back["missed"], traj["missed"])
        assert json.loads(path.with_suffix(".json").read_text())["params"] == NOMINAL_PARAMS.to_dict()


class TestBatch:
    def _setup(self, n=24):
        rng = np.random.default_rng(0)
        h0 = rng.uniform(1.0, 9.0, n)
        params = [sim.sample_params(rng) for _ in range(n)]
        seeds = [(42, i) for i in range(n)]
        return h0, params, seeds

    def test_batch_matches_single_episodes(self):
        h0, params, seeds = self._setup(8)
        out = simulate_batch(C1, h0, params, seeds)
        for i in range(8):
            traj = run_episode(C1, h0[i], params[i], seed=seeds[i])
            assert out.elapsed[i] == traj.elapsed
            assert out.h[i] == traj.final_height and out.v[i] == traj.final_velocity

    @pytest.mark.parametrize("workers", [2, 3, 8])
    def test_workers_do_not_change_results(self, workers):
        h0, params, seeds = self._setup()
        a = simulate_batch(C1, h0, params, seeds, workers=1)
        b = simulate_batch(C1, h0, params, seeds, workers=workers)
        for f in ("h", "v", "T", "elapsed", "reason", "steps"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))

    def test_fitness_is_nonnegative(self):
        h0, params, seeds = self._setup()
        assert np.all(simulate_batch(C1, h0, params, seeds).fitness() >= 0)
