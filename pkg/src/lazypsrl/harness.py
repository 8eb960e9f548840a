"""Regret measurement, multi-seed orchestration and assumption monitors."""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agent import (
    LazyPSRL,
    LinearFeedback,
    LinearModel,
    OracleAgent,
    RandomAgent,
    SafeRegion,
    StabilizedLazyPSRL,
    TabularModel,
    default_stabilizer,
)
from .config import AgentConfig, ExperimentConfig
from .env import TabularEnv, quadratic_loss
from .planner import PlanningError, solve_acoe_tabular, solve_dare

logger = logging.getLogger(__name__)

J_STAR_EPS = 1e-9
TRACE_GROWTH_RATIO = 10.0


class EpisodeError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"seed {seed}: {type(cause).__name__}: {cause}")
        self.seed = seed


@dataclass
class RegretRecord:
    seed: int
    losses: np.ndarray
    j_star: float
    cum_regret: np.ndarray
    resample_times: list
    clip_events: list
    log_det: np.ndarray  # log det V_t seen by the agent when acting at step t
    log_det_prior: float
    log_det_final: float
    trace_prior: float
    trace_increments: np.ndarray  # trace(M(x_t, a_t))
    sigmas: np.ndarray  # planner slack sigma_t
    outside: np.ndarray  # x_t outside the safe region (all False without one)
    overridden: np.ndarray
    m: int
    switches: int
    log: Optional[list] = None

    @property
    def T(self) -> int:
        return self.losses.shape[0]

    @property
    def sigma_total(self) -> float:
        return float(self.sigmas.sum())


@dataclass
class ExperimentResult:
    mean_regret: np.ndarray
    std_regret: np.ndarray
    fingerprint: str
    wall_time: float
    seeds: list
    records: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.mean_regret.shape[0]


def make_model(env, cfg: AgentConfig):
    if isinstance(env, TabularEnv):
        return TabularModel(env.n, env.d, env.loss, alpha=cfg.alpha, eps_span=cfg.eps_span)
    return LinearModel(
        env.n, env.d, env.Q, env.R, env.sigma,
        prior_scale=cfg.prior_scale,
        support_radius=cfg.support_radius,
        dare_tol=cfg.dare_tol,
        dare_max_iter=cfg.dare_max_iter,
    )


def make_region(cfg: AgentConfig) -> Optional[SafeRegion]:
    if cfg.safe_region is None:
        return None
    return SafeRegion(cfg.safe_region["kind"], cfg.safe_region.get("bound", 1.0))


def make_agent(env, cfg: AgentConfig):
    model = make_model(env, cfg)
    kind = cfg.kind
    if kind == "lazy-psrl":
        return LazyPSRL(model, cfg.resample_factor)
    if kind == "certainty-equivalence":
        return LazyPSRL(model, cfg.resample_factor, certainty_equivalence=True)
    if kind == "oracle":
        return OracleAgent(model, env.theta_star)
    if kind == "random":
        if not isinstance(model, TabularModel):
            raise ValueError("the random agent needs a tabular environment")
        return RandomAgent(model)
    if kind == "stabilized-lazy-psrl":
        if not isinstance(model, LinearModel):
            raise ValueError("the stabilized agent needs a linear environment")
        region = make_region(cfg) or SafeRegion("ball", 1.0)
        if cfg.stabilizer_gain is not None:
            stab = LinearFeedback(cfg.stabilizer_gain)
        else:
            stab = default_stabilizer(model, cfg.stabilizer_r_scale)
        return StabilizedLazyPSRL(LazyPSRL(model, cfg.resample_factor), region, stab)
    raise ValueError(f"unknown agent kind {kind!r}")


def optimal_average_cost(env) -> float:
    """J(Theta*): RVI at a tight span tolerance, or sigma^2 trace(P*) for LQ."""
    if isinstance(env, TabularEnv):
        return solve_acoe_tabular(env.theta_star, env.loss, J_STAR_EPS).J
    return solve_dare(env.A, env.B, env.Q, env.R, env.sigma**2).J


def _initial_state(env, x0):
    if isinstance(env, TabularEnv):
        x = 0 if x0 is None else int(x0)
        if not 0 <= x < env.n:
            raise ValueError(f"initial state {x} out of range")
        return x
    x = np.zeros(env.n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape[0] != env.n:
        raise ValueError(f"initial state must have dimension {env.n}")
    return x


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def run_episode(env, agent_cfg: AgentConfig, T: int, seed: int, x0=None, log: bool = True) -> RegretRecord:
    """Simulate ``T`` act/observe steps against the true environment.

    The environment and the agent draw from separate child streams of
    ``SeedSequence(seed)``, so runs that differ only in agent settings or in
    the noise scale see the same underlying uniforms.
    """
    if T < 1:
        raise ValueError("horizon must be at least 1")
    try:
        j_star = optimal_average_cost(env)
    except PlanningError as err:
        raise PlanningError(f"cannot compute the optimal average cost of the true system: {err}") from err
    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    env_rng = np.random.default_rng(env_ss)
    agent_rng = np.random.default_rng(agent_ss)
    agent = make_agent(env, agent_cfg)
    region = make_region(agent_cfg)
    tabular = isinstance(env, TabularEnv)

    losses = np.empty(T)
    log_det = np.empty(T)
    traces = np.empty(T)
    sigmas = np.empty(T)
    outside = np.zeros(T, dtype=bool)
    overridden = np.zeros(T, dtype=bool)
    clip_events = []
    events = [] if log else None
    log_det_prior = agent.V.log_det
    trace_prior = agent.V.trace

    x = _initial_state(env, x0 if x0 is not None else agent_cfg.x0)
    for i in range(T):
        t = i + 1
        a = agent.act(x, agent_rng)
        info = agent.last
        if tabular:
            x_next = env.step(x, a, env_rng.random())
            clipped = False
            loss = float(env.loss[x, a])
        else:
            a, clipped = env.clip_action(a)
            x_next, _ = env.step(x, a, env_rng.random(env.n))
            loss = quadratic_loss(x, a, env.Q, env.R)
            if clipped:
                clip_events.append(t)
        incs = agent.model.increments(x, a)
        traces[i] = sum(w * float(v @ v) for w, v in incs)
        losses[i] = loss
        log_det[i] = info.log_det
        sigmas[i] = info.sigma
        overridden[i] = info.overridden
        if region is not None:
            outside[i] = not region.contains(x)
        if events is not None:
            events.append({
                "t": t,
                "x": _jsonable(x),
                "a": _jsonable(a),
                "x_next": _jsonable(x_next),
                "loss": loss,
                "resampled": bool(info.resampled),
                "log_det": float(info.log_det),
                "fingerprint": info.fingerprint,
                "overridden": bool(info.overridden),
                "clipped": bool(clipped),
            })
        agent.observe(x, a, x_next)
        x = x_next

    # The increment identity cum[t] - cum[t-1] = losses[t] - j_star holds up
    # to one rounding of the running sum.
    cum = np.cumsum(losses - j_star)
    return RegretRecord(
        seed=seed,
        losses=losses,
        j_star=float(j_star),
        cum_regret=cum,
        resample_times=list(agent.resample_times),
        clip_events=clip_events,
        log_det=log_det,
        log_det_prior=float(log_det_prior),
        log_det_final=float(agent.V.log_det),
        trace_prior=float(trace_prior),
        trace_increments=traces,
        sigmas=sigmas,
        outside=outside,
        overridden=overridden,
        m=agent.V.dim,
        switches=int(agent.switches),
        log=events,
    )


def _episode_job(cfg: ExperimentConfig, seed: int) -> RegretRecord:
    try:
        env = cfg.build_env()
        return run_episode(env, cfg.agent, cfg.T, seed, log=cfg.agent.log_trajectory)
    except Exception as err:  # noqa: BLE001 - re-raised with the seed attached
        raise EpisodeError(seed, err) from err


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentResult:
    """Run every seed and reduce mean/std of cumulative regret in seed order."""
    start = time.perf_counter()
    seeds = list(cfg.seeds)
    if threads > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(seeds))) as pool:
            futures = [pool.submit(_episode_job, cfg, s) for s in seeds]
            records = [f.result() for f in futures]
    else:
        records = [_episode_job(cfg, s) for s in seeds]
    curves = np.stack([r.cum_regret for r in records])
    return ExperimentResult(
        mean_regret=curves.mean(axis=0),
        std_regret=curves.std(axis=0),
        fingerprint=cfg.fingerprint(),
        wall_time=time.perf_counter() - start,
        seeds=seeds,
        records=records,
    )


def fit_regret_exponent(result, window: Optional[tuple] = None) -> Optional[float]:
    """OLS slope of ln(mean cumulative regret) against ln(t) over ``window``.

    ``result`` is an :class:`ExperimentResult` or a 1-D curve indexed from
    t = 1. The default window is ``[T/2, T]``. Returns ``None`` when the curve
    is not strictly positive on the window (below the noise floor).
    """
    curve = result.mean_regret if isinstance(result, ExperimentResult) else np.asarray(result, dtype=float)
    T = curve.shape[0]
    lo, hi = window if window is not None else (T / 2, T)
    t = np.arange(1, T + 1, dtype=float)
    mask = (t >= lo) & (t <= hi)
    if mask.sum() < 2:
        raise ValueError("fit window holds fewer than two points")
    y = curve[mask]
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        return None
    slope, _ = np.polyfit(np.log(t[mask]), np.log(y), 1)
    return float(slope)


def assumption_monitors(record: RegretRecord) -> dict:
    """Boundedness, switching-count and safe-region diagnostics for one run."""
    tr = record.trace_increments
    phi2 = float(tr.max())
    K = record.switches
    log2_ratio = (record.log_det_final - record.log_det_prior) / math.log(2.0)
    bound = record.m * math.log2(record.trace_prior + phi2 * record.T)
    median = float(np.median(tr))
    growth = phi2 > TRACE_GROWTH_RATIO * max(median, np.finfo(float).tiny)
    report = {
        "max_trace": phi2,
        "mean_trace": float(tr.mean()),
        "switches": K,
        "log2_det_ratio": float(log2_ratio),
        "switching_bound": float(bound),
        # 2^K <= det(V_T)/det(V), compared in log space
        "det_ratio_ok": bool(K <= log2_ratio + 1e-9),
        "switching_bound_ok": bool(K <= bound),
        "trace_growth": bool(growth),
        "outside_fraction": float(record.outside.mean()),
        "sigma_total": record.sigma_total,
    }
    return report


def summarize(result: ExperimentResult, cfg: ExperimentConfig) -> dict:
    monitors = [assumption_monitors(r) for r in result.records]
    T = result.T
    return {
        "fingerprint": result.fingerprint,
        "config": cfg.to_dict(),
        "T": T,
        "seeds": result.seeds,
        "j_star": result.records[0].j_star,
        "final_mean_regret": float(result.mean_regret[-1]),
        "final_std_regret": float(result.std_regret[-1]),
        "slope": fit_regret_exponent(result) if T >= 4 else None,
        "switches": [m["switches"] for m in monitors],
        "sigma_total": [m["sigma_total"] for m in monitors],
        "clip_events": [len(r.clip_events) for r in result.records],
        "monitors": monitors,
        "wall_time": result.wall_time,
    }


def write_regret_csv(path: str, result: ExperimentResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,mean,std\n")
        for i, (mu, sd) in enumerate(zip(result.mean_regret, result.std_regret), start=1):
            fh.write(f"{i},{float(mu)!r},{float(sd)!r}\n")


def write_outputs(out_dir: str, result: ExperimentResult, cfg: ExperimentConfig) -> dict:
    """Write regret.csv, summary.json and per-seed trajectory logs."""
    os.makedirs(out_dir, exist_ok=True)
    write_regret_csv(os.path.join(out_dir, "regret.csv"), result)
    summary = summarize(result, cfg)
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    traj_dir = os.path.join(out_dir, "trajectories")
    if any(r.log is not None for r in result.records):
        os.makedirs(traj_dir, exist_ok=True)
    for rec in result.records:
        if rec.log is None:
            continue
        with open(os.path.join(traj_dir, f"seed_{rec.seed}.jsonl"), "w") as fh:
            fh.write(json.dumps({"header": True, "fingerprint": result.fingerprint, "seed": rec.seed}) + "\n")
            for ev in rec.log:
                fh.write(json.dumps(ev) + "\n")
    return summary
