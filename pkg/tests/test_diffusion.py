import numpy as np
import pytest

from sirenrca.diffusion import (
    Trajectory,
    TrajectoryError,
    default_time_grid,
    diffusion_coefficient,
    sample_trajectories,
    sample_trajectory,
)
from sirenrca.scorenet import AnalyticScore, NoiseSchedule, standard_normal_score


def zero_models(d):
    return [AnalyticScore(lambda z, t: np.zeros_like(z)) for _ in range(d)]


class TestDiffusionCoefficient:
    def test_zero_at_t_zero(self):
        for smax in (2.0, 10.0, 25.0):
            assert diffusion_coefficient(0.0, smax) == pytest.approx(0.0)

    def test_value_at_one_with_e(self):
        assert diffusion_coefficient(1.0, np.e) == pytest.approx(
            (np.e**2 - 1) / 2, rel=1e-9
        )
        assert diffusion_coefficient(1.0, np.e) == pytest.approx(3.194528, abs=1e-6)

    def test_half_time_sigma_ten(self):
        assert diffusion_coefficient(0.5, 10.0) == pytest.approx(
            9.0 / (2 * np.log(10.0)), rel=1e-9
        )
        assert diffusion_coefficient(0.5, 10.0) == pytest.approx(1.95433, abs=1e-5)

    def test_sigma_max_at_most_one_rejected(self):
        with pytest.raises(ValueError):
            diffusion_coefficient(0.5, 1.0)

    def test_t_out_of_range(self):
        with pytest.raises(ValueError):
            diffusion_coefficient(1.5, 10.0)


class TestSampleTrajectory:
    def test_single_step_bookkeeping(self):
        traj = sample_trajectory(
            zero_models(2), [1.0, -1.0], time_grid=[0.5], dt=0.01, seed=0
        )
        assert traj.states.shape == (2, 2)
        assert traj.scores.shape == (1, 2)
        assert traj.steps.shape == (1, 2)

    def test_zero_score_mean_displacement(self):
        # drift-free integration: mean final displacement ~ 0
        grid, dt = default_time_grid(1000)
        finals = []
        for k in range(200):
            traj = sample_trajectory(
                zero_models(2), [0.3, -0.8], time_grid=grid, dt=dt, seed=k
            )
            finals.append(traj.end - traj.start)
        finals = np.array(finals)
        se = finals.std(axis=0) / np.sqrt(len(finals))
        assert np.all(np.abs(finals.mean(axis=0)) <= 3 * se)

    def test_outlier_contracts_toward_data(self):
        sched = NoiseSchedule(10.0)
        models = [standard_normal_score(sched)]
        grid, dt = default_time_grid(100)
        hits = 0
        finals = []
        for k in range(200):
            traj = sample_trajectory(models, [5.0], time_grid=grid, dt=dt, seed=k)
            finals.append(abs(traj.end[0]))
            if finals[-1] < 5.0:
                hits += 1
        assert hits >= 184
        assert np.median(finals) < 0.7 * 5.0

    def test_states_steps_exact_identity(self):
        sched = NoiseSchedule(10.0)
        models = [standard_normal_score(sched) for _ in range(3)]
        grid, dt = default_time_grid(50)
        traj = sample_trajectory(models, [2.0, -3.0, 0.5], time_grid=grid, dt=dt, seed=7)
        for i in range(len(traj.steps)):
            assert np.array_equal(traj.states[i] + traj.steps[i], traj.states[i + 1])

    def test_seed_determinism(self):
        sched = NoiseSchedule(10.0)
        models = [standard_normal_score(sched) for _ in range(2)]
        a = sample_trajectory(models, [1.0, 2.0], seed=3)
        b = sample_trajectory(models, [1.0, 2.0], seed=3)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.scores, b.scores)

    def test_frozen_nodes_without_models(self):
        sched = NoiseSchedule(10.0)
        models = {0: standard_normal_score(sched)}
        traj = sample_trajectory(models, [2.0, 5.0], seed=1)
        assert np.all(traj.states[:, 1] == 5.0)
        assert np.all(traj.steps[:, 1] == 0.0)

    def test_non_finite_state_raises(self):
        bad = [AnalyticScore(lambda z, t: np.full_like(z, np.inf))]
        with pytest.raises(TrajectoryError, match="step"):
            sample_trajectory(bad, [1.0], seed=0)

    def test_batch_matches_seeded_runs_in_shape(self):
        sched = NoiseSchedule(10.0)
        models = [standard_normal_score(sched) for _ in range(2)]
        trajs = sample_trajectories(models, [1.0, -2.0], 5, seed=11)
        assert len(trajs) == 5
        assert all(t.states.shape == (101, 2) for t in trajs)
        assert not np.array_equal(trajs[0].states, trajs[1].states)


class TestDeterministicModeConvergence:
    def test_euler_order_on_analytic_field(self):
        # deterministic mode reduces to explicit Euler; global error O(dt)
        sched = NoiseSchedule(10.0)
        models = [standard_normal_score(sched)]
        z0 = [4.0]

        def endpoint(n):
            grid, dt = default_time_grid(n)
            traj = sample_trajectory(
                models, z0, time_grid=grid, dt=dt, seed=0, deterministic=True
            )
            return traj.end[0]

        ns = [50, 100, 200, 400]
        ref = endpoint(12800)
        errs = np.array([abs(endpoint(n) - ref) for n in ns])
        dts = 1.0 / np.array(ns)
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert 0.8 <= slope <= 1.2


def test_default_time_grid_descends():
    grid, dt = default_time_grid(100)
    assert grid[0] == pytest.approx(1.0)
    assert grid[-1] == pytest.approx(1e-3)
    assert np.all(np.diff(grid) < 0)
    assert dt == pytest.approx((1.0 - 1e-3) / 100)


def test_trajectory_csv_dump():
    traj = Trajectory(
        states=np.array([[1.0, 2.0], [0.5, 1.5]]),
        scores=np.array([[-1.0, -2.0]]),
        steps=np.array([[-0.5, -0.5]]),
        times=np.array([0.7]),
    )
    text = traj.to_csv()
    lines = text.strip().splitlines()
    assert lines[0] == "t,node,z,score,dz"
    assert len(lines) == 3
