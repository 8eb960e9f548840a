"""Lazy PSRL and its stabilized wrapper.

The agent keeps a sampled parameter until the information matrix determinant
has grown by ``resample_factor`` (2 by default) since the last draw. A model
object bundles everything family-specific: prior, information increments,
planner and greedy action.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .env import feature_map_linear
from .linalg import InfoMatrix, psd_update
from .planner import (
    PlanningError,
    greedy_action_tabular,
    lq_action,
    solve_acoe_tabular,
    solve_dare,
)
from .posterior import DirichletPosterior, GaussianPosterior, concentration_stat

logger = logging.getLogger(__name__)

MAX_PLAN_ATTEMPTS = 10
# Relative slack on the strict determinant test: log det from a Cholesky
# factor can overshoot an exact doubling by a few ulps.
LOGDET_SLACK = 1e-12


def fingerprint(theta: np.ndarray) -> str:
    return hashlib.blake2b(np.ascontiguousarray(theta).tobytes(), digest_size=8).hexdigest()


class TabularModel:
    """Finite MDP with Dirichlet rows and relative value iteration."""

    family = "tabular"

    def __init__(self, n: int, d: int, loss, alpha=None, eps_span: float = 1e-6):
        self.n = n
        self.d = d
        self.loss = np.asarray(loss, dtype=float)
        if self.loss.shape != (n, d):
            raise ValueError(f"loss must have shape {(n, d)}")
        self.alpha = np.ones(n) if alpha is None else np.asarray(alpha, dtype=float)
        self.eps_span = eps_span

    @property
    def m(self) -> int:
        return self.n * self.d

    def prior(self) -> DirichletPosterior:
        return DirichletPosterior.init(self.n, self.d, self.alpha)

    def prior_info(self) -> InfoMatrix:
        # (V_t)_kk equals the total pseudo-count of row k.
        return InfoMatrix.from_matrix(np.eye(self.m) * self.alpha.sum())

    def increments(self, x, a):
        e = np.zeros(self.m)
        e[int(a) * self.n + int(x)] = 1.0
        return [(1.0, e)]

    def update_posterior(self, post: DirichletPosterior, x, a, x_next) -> None:
        post.update(int(x), int(a), int(x_next))

    def plan(self, theta):
        return solve_acoe_tabular(theta, self.loss, self.eps_span)

    def action(self, plan, theta, x):
        return greedy_action_tabular(plan, theta, self.loss, int(x))

    def sigma_at(self, plan, x) -> float:
        return plan.sigma


class LinearModel:
    """Linear dynamics ``x' = A x + B a + w`` with a Gaussian prior on ``[A^T; B^T]``.

    The prior on each column is ``N(0, prior_scale^2 I)``; observations are
    whitened by the known noise scale before reaching the posterior.
    """

    family = "linear"

    def __init__(
        self,
        n: int,
        d: int,
        Q,
        R,
        noise_sigma: float,
        prior_scale: float = 1.0,
        support_radius: Optional[float] = None,
        dare_tol: float = 1e-12,
        dare_max_iter: int = 100_000,
    ):
        self.n = n
        self.d = d
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        if not noise_sigma > 0 or not prior_scale > 0:
            raise ValueError("noise scale and prior scale must be positive")
        self.noise_sigma = float(noise_sigma)
        self.prior_scale = float(prior_scale)
        self.support_radius = support_radius
        self.dare_tol = dare_tol
        self.dare_max_iter = dare_max_iter

    @property
    def m(self) -> int:
        return self.n + self.d

    def prior_info(self) -> InfoMatrix:
        return InfoMatrix.identity(self.m, 1.0 / self.prior_scale**2)

    def prior(self) -> GaussianPosterior:
        return GaussianPosterior.init(self.prior_info(), self.n, self.support_radius)

    def increments(self, x, a):
        return [(1.0, feature_map_linear(x, a) / self.noise_sigma)]

    def update_posterior(self, post: GaussianPosterior, x, a, x_next) -> None:
        s = self.noise_sigma
        post.update(feature_map_linear(x, a) / s, np.asarray(x_next, dtype=float) / s)

    def split(self, theta):
        theta = np.asarray(theta, dtype=float)
        return theta[: self.n].T, theta[self.n :].T

    def plan(self, theta):
        A, B = self.split(theta)
        return solve_dare(A, B, self.Q, self.R, self.noise_sigma**2, self.dare_tol, self.dare_max_iter)

    def action(self, plan, theta, x):
        return lq_action(plan, x)

    def sigma_at(self, plan, x) -> float:
        return plan.sigma_at(x)


def posterior_mean(post) -> np.ndarray:
    return post.mean() if isinstance(post, DirichletPosterior) else post.mean


@dataclass
class StepInfo:
    """Bookkeeping for the most recent ``act`` call."""

    resampled: bool = False
    fingerprint: Optional[str] = None
    sigma: float = 0.0
    log_det: float = 0.0
    concentration: Optional[float] = None
    overridden: bool = False
    plan_attempts: int = 0


class LazyPSRL:
    """Posterior sampling with determinant-doubling resampling.

    Call ``act`` and ``observe`` in strict alternation. With
    ``certainty_equivalence=True`` the posterior mean replaces the posterior
    draw at every trigger.
    """

    def __init__(self, model, resample_factor: float = 2.0, certainty_equivalence: bool = False):
        if not resample_factor > 1.0:
            raise ValueError("resample factor must exceed 1")
        self.model = model
        self.resample_factor = float(resample_factor)
        self.certainty_equivalence = certainty_equivalence
        self.posterior = model.prior()
        self.V = model.prior_info()
        self.log_det_prior = self.V.log_det
        self.log_det_last = self.V.log_det
        self.theta: Optional[np.ndarray] = None
        self.plan = None
        self.theta_fingerprint: Optional[str] = None
        self.plan_fingerprint: Optional[str] = None
        self.resample_times: list[int] = []
        self.t = 1
        self.last = StepInfo()

    def should_resample(self) -> bool:
        # The first step always draws: no parameter exists yet to act on.
        if self.theta is None:
            return True
        threshold = np.log(self.resample_factor) + self.log_det_last
        return self.V.log_det > threshold + LOGDET_SLACK * max(1.0, abs(threshold))

    def _draw(self, rng: np.random.Generator, attempt: int) -> np.ndarray:
        if self.certainty_equivalence and attempt == 0:
            return posterior_mean(self.posterior)
        return self.posterior.sample(rng)

    def _resample(self, rng: np.random.Generator) -> None:
        last_err = None
        for attempt in range(MAX_PLAN_ATTEMPTS):
            theta = self._draw(rng, attempt)
            try:
                plan = self.model.plan(theta)
            except PlanningError as err:
                last_err = err
                logger.debug("planner failed on draw %d at t=%d: %s", attempt, self.t, err)
                continue
            self.theta, self.plan = theta, plan
            self.theta_fingerprint = self.plan_fingerprint = fingerprint(theta)
            self.log_det_last = self.V.log_det
            self.resample_times.append(self.t)
            self.last.plan_attempts = attempt + 1
            mean = posterior_mean(self.posterior)
            self.last.concentration = float(concentration_stat(theta, mean, self.V))
            return
        raise PlanningError(f"planner failed on {MAX_PLAN_ATTEMPTS} posterior draws at t={self.t}: {last_err}")

    def act(self, x, rng: np.random.Generator):
        self.last = StepInfo(log_det=self.V.log_det)
        if self.should_resample():
            self._resample(rng)
            self.last.resampled = True
        self.last.fingerprint = self.theta_fingerprint
        self.last.sigma = self.model.sigma_at(self.plan, x)
        return self.model.action(self.plan, self.theta, x)

    def observe(self, x, a, x_next) -> None:
        self.model.update_posterior(self.posterior, x, a, x_next)
        self.V = psd_update(self.V, self.model.increments(x, a))
        self.t += 1

    @property
    def switches(self) -> int:
        """Resamples triggered by the determinant test (the forced first draw excluded)."""
        return max(len(self.resample_times) - 1, 0)


@dataclass
class SafeRegion:
    kind: str  # "ball" or "box"
    bound: float | np.ndarray

    def __post_init__(self):
        if self.kind not in ("ball", "box"):
            raise ValueError(f"safe region kind must be 'ball' or 'box', got {self.kind!r}")
        b = np.asarray(self.bound, dtype=float)
        if np.any(b <= 0):
            raise ValueError("safe region must contain the origin in its interior")
        if self.kind == "ball" and b.ndim != 0:
            raise ValueError("ball radius must be a scalar")
        self.bound = float(b) if b.ndim == 0 else b

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.kind == "ball":
            return bool(np.linalg.norm(x) <= self.bound)
        return bool(np.all(np.abs(x) <= self.bound))


class LinearFeedback:
    """Deterministic Markov controller ``x -> -K x``."""

    def __init__(self, K):
        self.K = np.atleast_2d(np.asarray(K, dtype=float))

    def __call__(self, x) -> np.ndarray:
        return -(self.K @ np.asarray(x, dtype=float).reshape(-1))


def default_stabilizer(model: LinearModel, r_scale: float = 0.1) -> LinearFeedback:
    """Riccati gain of the prior-mean system solved with control cost ``r_scale * R``.

    The prior mean is zero, so the resulting gain is zero and the stabilizer
    reduces to open-loop operation; pass an explicit gain for systems that
    are not open-loop stable.
    """
    mean = np.zeros((model.m, model.n))
    A, B = model.split(mean)
    sol = solve_dare(A, B, model.Q, r_scale * model.R)
    return LinearFeedback(sol.K)


class StabilizedLazyPSRL:
    """Lazy PSRL that hands control to ``stabilizer`` whenever ``x`` leaves ``region``."""

    def __init__(self, agent: LazyPSRL, region: SafeRegion, stabilizer: Callable):
        self.agent = agent
        self.region = region
        self.stabilizer = stabilizer

    @property
    def last(self) -> StepInfo:
        return self.agent.last

    def act(self, x, rng: np.random.Generator):
        if self.region.contains(x):
            return self.agent.act(x, rng)
        ag = self.agent
        ag.last = StepInfo(log_det=ag.V.log_det, fingerprint=ag.theta_fingerprint, overridden=True)
        return self.stabilizer(x)

    def observe(self, x, a, x_next) -> None:
        self.agent.observe(x, a, x_next)

    def __getattr__(self, name):
        if name == "agent":
            raise AttributeError(name)
        return getattr(self.agent, name)


class OracleAgent:
    """Plans once on the true parameter and acts greedily forever."""

    def __init__(self, model, theta_star):
        self.model = model
        self.theta = np.asarray(theta_star, dtype=float)
        self.plan = model.plan(self.theta)
        self.V = model.prior_info()
        self.log_det_prior = self.V.log_det
        self.resample_times = [1]
        self.t = 1
        self.last = StepInfo()
        self._fp = fingerprint(self.theta)

    def act(self, x, rng):
        self.last = StepInfo(
            resampled=self.t == 1, fingerprint=self._fp, sigma=self.model.sigma_at(self.plan, x), log_det=self.V.log_det
        )
        return self.model.action(self.plan, self.theta, x)

    def observe(self, x, a, x_next) -> None:
        self.V = psd_update(self.V, self.model.increments(x, a))
        self.t += 1

    @property
    def switches(self) -> int:
        return 0


class RandomAgent:
    """Uniformly random actions on a finite MDP."""

    def __init__(self, model: TabularModel):
        self.model = model
        self.V = model.prior_info()
        self.log_det_prior = self.V.log_det
        self.resample_times: list[int] = []
        self.t = 1
        self.last = StepInfo()

    def act(self, x, rng):
        self.last = StepInfo(log_det=self.V.log_det)
        return int(rng.integers(self.model.d))

    def observe(self, x, a, x_next) -> None:
        self.V = psd_update(self.V, self.model.increments(x, a))
        self.t += 1

    @property
    def switches(self) -> int:
        return 0
