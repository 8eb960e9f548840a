import numpy as np
import pytest

from lazypsrl.config import AgentConfig, parse_config
from lazypsrl.env import random_tabular, web_server_instance
from lazypsrl.harness import (
    EpisodeError,
    ExperimentResult,
    assumption_monitors,
    fit_regret_exponent,
    optimal_average_cost,
    run_episode,
    run_experiment,
)
from lazypsrl.planner import brute_force_avg_cost, stationary_distribution


def test_record_structure_web_server():
    env = web_server_instance(0.1)
    rec = run_episode(env, AgentConfig(), 1000, seed=0)
    assert rec.losses.shape == (1000,) and rec.cum_regret.shape == (1000,)
    assert len(rec.log) == 1000
    assert rec.resample_times[0] == 1
    assert all(b > a for a, b in zip(rec.resample_times, rec.resample_times[1:]))
    assert rec.clip_events == []
    assert rec.j_star == pytest.approx(optimal_average_cost(env))


def test_regret_increment_identity():
    env = random_tabular(3, 2, np.random.default_rng(0))
    rec = run_episode(env, AgentConfig(), 500, seed=1)
    inc = np.diff(np.concatenate([[0.0], rec.cum_regret]))
    # one rounding of the running sum per step
    assert np.allclose(inc, rec.losses - rec.j_star, rtol=0, atol=1e-12 * max(1.0, np.abs(rec.cum_regret).max()))


def test_log_matches_record():
    env = random_tabular(3, 2, np.random.default_rng(2))
    rec = run_episode(env, AgentConfig(), 50, seed=3)
    assert [e["t"] for e in rec.log] == list(range(1, 51))
    assert [e["t"] for e in rec.log if e["resampled"]] == rec.resample_times
    assert np.allclose([e["loss"] for e in rec.log], rec.losses)
    for prev, cur in zip(rec.log, rec.log[1:]):
        assert cur["x"] == prev["x_next"]


def test_oracle_regret_vanishes():
    env = random_tabular(5, 2, np.random.default_rng(4))
    cfg = AgentConfig(kind="oracle")
    finals = np.array([run_episode(env, cfg, 2000, seed=s, log=False).cum_regret[-1] for s in range(50)])
    se = finals.std(ddof=1) / np.sqrt(finals.size)
    assert abs(finals.mean()) <= 3 * se


def test_random_agent_slope_matches_policy_evaluation():
    env = random_tabular(4, 2, np.random.default_rng(5))
    # uniform-random policy: average the transition kernels and losses over actions
    P = env.theta_star.reshape(2, 4, 4).mean(axis=0)
    mu = stationary_distribution(P)
    slope = mu @ env.loss.mean(axis=1) - brute_force_avg_cost(env.theta_star, env.loss)
    assert slope > 0
    T = 20_000
    rec = run_episode(env, AgentConfig(kind="random"), T, seed=6, log=False)
    assert rec.cum_regret[-1] / T == pytest.approx(slope, abs=0.02)


def test_single_seed_std_is_zero():
    cfg = parse_config({"env": "random-tabular", "T": 50, "seeds": [3]})
    res = run_experiment(cfg)
    assert np.all(res.std_regret == 0)
    assert res.mean_regret.shape == (50,)


def test_experiment_is_deterministic_and_parallel_safe():
    cfg = parse_config({"env": "webserver-1.0", "T": 100, "seeds": [0, 1, 2]})
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    c = run_experiment(cfg, threads=2)
    assert np.array_equal(a.mean_regret, b.mean_regret)
    assert np.array_equal(a.mean_regret, c.mean_regret)
    assert np.array_equal(a.std_regret, c.std_regret)
    assert a.fingerprint == c.fingerprint
    assert [r.seed for r in c.records] == [0, 1, 2]
    assert np.all(a.std_regret >= 0)


def test_noise_scales_regret_exactly():
    # whitened features make the sigma=1 run a rescaled copy of the sigma=0.1 run
    lo = run_episode(web_server_instance(0.1), AgentConfig(), 200, seed=7, log=False)
    hi = run_episode(web_server_instance(1.0), AgentConfig(), 200, seed=7, log=False)
    assert lo.resample_times == hi.resample_times
    assert np.allclose(hi.cum_regret, 100 * lo.cum_regret, rtol=1e-6)


def test_episode_error_names_seed():
    cfg = parse_config({"env": "random-tabular", "T": 10, "seeds": [11]})
    cfg.agent.x0 = 99
    with pytest.raises(EpisodeError, match="seed 11"):
        run_experiment(cfg)


def test_fit_exponent_synthetic():
    t = np.arange(1, 1001, dtype=float)
    assert fit_regret_exponent(3.0 * np.sqrt(t)) == pytest.approx(0.5, abs=1e-6)
    assert fit_regret_exponent(0.2 * t) == pytest.approx(1.0, abs=1e-6)
    curve = np.sqrt(t)
    curve[700] = -1.0
    assert fit_regret_exponent(curve) is None
    res = ExperimentResult(np.sqrt(t), np.zeros_like(t), "x", 0.0, [0])
    assert fit_regret_exponent(res) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(ValueError):
        fit_regret_exponent(curve, window=(5.5, 5.6))


def test_monitors_tabular():
    env = random_tabular(3, 2, np.random.default_rng(8))
    rec = run_episode(env, AgentConfig(), 500, seed=9, log=False)
    rep = assumption_monitors(rec)
    assert rep["max_trace"] == 1.0 and rep["mean_trace"] == 1.0
    assert rep["det_ratio_ok"] and rep["switching_bound_ok"]
    assert rep["switches"] == len(rec.resample_times) - 1
    assert rep["outside_fraction"] == 0.0
    assert not rep["trace_growth"]


def test_monitors_stabilized_outside_fraction():
    cfg = AgentConfig(kind="stabilized-lazy-psrl", safe_region={"kind": "ball", "bound": 1.0}, x0=[6.0, 8.0])
    rec = run_episode(web_server_instance(1.0), cfg, 200, seed=10)
    rep = assumption_monitors(rec)
    assert 0.0 < rep["outside_fraction"] <= 1.0
    assert np.array_equal(rec.outside, rec.overridden)


def test_monitor_flags_trace_growth_without_stabilizer():
    cfg = AgentConfig(x0=[6.0, 8.0])
    rec = run_episode(web_server_instance(0.1), cfg, 300, seed=11, log=False)
    assert assumption_monitors(rec)["trace_growth"]
