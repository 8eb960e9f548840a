"""Property suites behind ``lazypsrl validate``.

Each check runs ``trials`` random instances and stops at the first failure,
keeping the offending instance as a witness. ``theta_hook`` lets tests inject
a corrupted parameter into the coupling check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_discrete_are

from .env import coupled_next_states, feature_map_linear, random_tabular
from .linalg import InfoMatrix, logdet_telescoping_bounds, psd_update, weighted_param_norm
from .planner import PlanningError, acoe_residual, brute_force_avg_cost, solve_acoe_tabular, solve_dare
from .posterior import DirichletPosterior, GaussianPosterior, concentration_stat

LEMMA_TOL = 1e-8
COUPLING_MC_DRAWS = 100_000
COUPLING_MC_TOL = 0.02
CONCENTRATION_DRAWS = 100_000
CONCENTRATION_TOL = 0.05
ORACLE_TOL = 1e-6
TELESCOPING_T = 200


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    witness: Optional[dict] = field(default=None)


def _rand_pd(rng, m, floor=0.1):
    G = rng.standard_normal((m, m))
    return G @ G.T + floor * np.eye(m)


def check_logdet_telescoping(rng, trials: int, family: str) -> CheckResult:
    worst = -np.inf
    for i in range(trials):
        m = int(rng.integers(1, 6))
        V0 = InfoMatrix.from_matrix(_rand_pd(rng, m, floor=float(rng.uniform(0.1, 2.0))))
        L2 = float(rng.uniform(0.5, 5.0))
        seq = []
        for _ in range(TELESCOPING_T):
            if family == "tabular":
                v = np.zeros(m)
                v[rng.integers(m)] = 1.0
                seq.append([(min(1.0, L2), v)])
            else:
                v = rng.standard_normal(m)
                v *= np.sqrt(L2 * rng.uniform()) / np.linalg.norm(v)
                seq.append([(1.0, v)])
        lhs, mid, right = logdet_telescoping_bounds(V0, seq, L2)
        gap = max(lhs - mid, mid - right)
        worst = max(worst, gap)
        if gap > LEMMA_TOL * max(1.0, abs(right)):
            return CheckResult("logdet_telescoping", False, f"violated by {gap:.3e}",
                               {"trial": i, "m": m, "L2": L2, "lhs": lhs, "middle": mid, "right": right})
    return CheckResult("logdet_telescoping", True, f"{trials} sequences, worst gap {worst:.2e}")


def check_det_ratio(rng, trials: int) -> CheckResult:
    for i in range(trials):
        m = int(rng.integers(1, 6))
        k = int(rng.integers(1, 6))
        B = _rand_pd(rng, m)
        H = rng.standard_normal((m, int(rng.integers(1, m + 1))))
        A = B + H @ H.T
        X = rng.standard_normal((m, k))
        lhs = np.linalg.norm(X.T @ A @ X, 2) / np.linalg.norm(X.T @ B @ X, 2)
        rhs = np.exp(np.linalg.slogdet(A)[1] - np.linalg.slogdet(B)[1])
        if lhs > rhs * (1.0 + LEMMA_TOL):
            return CheckResult("det_ratio", False, f"{lhs:.6g} > {rhs:.6g}", {"trial": i, "A": A.tolist(), "B": B.tolist(), "X": X.tolist()})
    return CheckResult("det_ratio", True, f"{trials} instances")


def check_coupling(rng, trials: int, family: str, theta_hook: Optional[Callable] = None,
                   draws: int = COUPLING_MC_DRAWS) -> CheckResult:
    hook = theta_hook or (lambda th: th)
    if family == "linear":
        worst = 0.0
        for i in range(trials):
            n, d = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            theta = hook(rng.standard_normal((n + d, n)))
            theta_p = rng.standard_normal((n + d, n))
            x, a = rng.standard_normal(n), rng.standard_normal(d)
            try:
                y, y_p = coupled_next_states("linear", x, a, theta, theta_p, rng.random(n))
            except ValueError as err:
                return CheckResult("coupling", False, str(err), {"trial": i, "theta": np.asarray(theta).tolist()})
            phi = feature_map_linear(x, a)
            expect = weighted_param_norm(theta - theta_p, np.outer(phi, phi))
            err = abs(np.linalg.norm(y - y_p) - expect)
            worst = max(worst, err / max(1.0, expect))
            if err > 1e-9 * max(1.0, expect):
                return CheckResult("coupling", False, f"|y-y'| differs from the weighted norm by {err:.3e}",
                                   {"trial": i, "x": x.tolist(), "a": a.tolist(), "theta": theta.tolist(), "theta_prime": theta_p.tolist()})
        return CheckResult("coupling", True, f"{trials} exact checks, worst rel err {worst:.1e}")

    worst = 0.0
    for i in range(trials):
        n, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        theta = hook(rng.dirichlet(np.ones(n), size=n * d))
        theta_p = rng.dirichlet(np.ones(n), size=n * d)
        x, a = int(rng.integers(n)), int(rng.integers(d))
        z = rng.random((2, draws))
        try:
            y, y_p = coupled_next_states("tabular", x, a, theta, theta_p, z)
        except ValueError as err:
            k = a * n + x
            bad = int(np.argmax(np.abs(np.asarray(theta).sum(axis=1) - 1.0)))
            return CheckResult("coupling", False, str(err),
                               {"trial": i, "row": bad, "row_sum": float(np.asarray(theta)[bad].sum()), "pair_row": k})
        k = a * n + x
        mc = np.sqrt(2.0) * np.mean(y != y_p)
        closed = np.sqrt(2.0) * (1.0 - theta[k] @ theta_p[k])
        rel = abs(mc - closed) / closed
        worst = max(worst, rel)
        if rel > COUPLING_MC_TOL:
            return CheckResult("coupling", False, f"Monte-Carlo {mc:.5f} vs closed form {closed:.5f}",
                               {"trial": i, "theta_row": theta[k].tolist(), "theta_prime_row": theta_p[k].tolist()})
    return CheckResult("coupling", True, f"{trials} Monte-Carlo checks at {draws} draws, worst rel err {worst:.2%}")


def check_conjugacy(rng, trials: int, family: str) -> CheckResult:
    for i in range(trials):
        if family == "tabular":
            n, d = int(rng.integers(2, 6)), int(rng.integers(1, 4))
            alpha = rng.uniform(0.2, 2.0, n)
            obs = [(int(rng.integers(n)), int(rng.integers(d)), int(rng.integers(n))) for _ in range(50)]
            p1, p2 = DirichletPosterior.init(n, d, alpha), DirichletPosterior.init(n, d, alpha)
            V = InfoMatrix.from_matrix(np.eye(n * d) * alpha.sum())
            for s, a, s2 in obs:
                p1.update(s, a, s2)
                e = np.zeros(n * d)
                e[a * n + s] = 1.0
                V = psd_update(V, [(1.0, e)])
            for j in rng.permutation(len(obs)):
                p2.update(*obs[j])
            sample = p1.sample(rng)
            ok = (np.array_equal(p1.counts, p2.counts)
                  and np.allclose(V.reconstruct(), p1.info_matrix().matrix, atol=1e-8, rtol=0)
                  and np.all(sample >= 0) and np.allclose(sample.sum(axis=1), 1.0, atol=1e-12, rtol=0))
            if not ok:
                return CheckResult("conjugacy", False, "Dirichlet order-invariance or count identity failed",
                                   {"trial": i, "n": n, "d": d, "observations": obs})
        else:
            n, m = int(rng.integers(1, 5)), int(rng.integers(1, 6))
            obs = [(rng.standard_normal(m), rng.standard_normal(n)) for _ in range(30)]
            g1 = GaussianPosterior.init(np.eye(m), n)
            g2 = GaussianPosterior.init(np.eye(m), n)
            for phi, y in obs:
                g1.update(phi, y)
                if not np.allclose(g1.precision.matrix @ g1.mean, g1.moment, atol=1e-8, rtol=0):
                    return CheckResult("conjugacy", False, "precision * mean != moment", {"trial": i})
            for j in rng.permutation(len(obs)):
                g2.update(*obs[j])
            if not np.allclose(g1.mean, g2.mean, atol=1e-8, rtol=0):
                return CheckResult("conjugacy", False, "Gaussian posterior depends on observation order",
                                   {"trial": i, "diff": float(np.abs(g1.mean - g2.mean).max())})
    return CheckResult("conjugacy", True, f"{trials} batches")


def concentration_mc(post, rng, draws: int) -> float:
    """Monte-Carlo mean of the concentration statistic under ``post``."""
    if isinstance(post, DirichletPosterior):
        V = post.info_matrix()
        mean = post.mean()
    else:
        V = post.precision
        mean = post.mean
    thetas = np.stack([post.sample(rng) for _ in range(draws)])
    return float(np.mean(concentration_stat(thetas, mean, V)))


def random_dirichlet_posterior(rng, n, d, steps=30) -> DirichletPosterior:
    post = DirichletPosterior.init(n, d, np.ones(n))
    for _ in range(steps):
        post.update(int(rng.integers(n)), int(rng.integers(d)), int(rng.integers(n)))
    return post


def random_gaussian_posterior(rng, n, m, steps=30) -> GaussianPosterior:
    post = GaussianPosterior.init(np.eye(m), n)
    for _ in range(steps):
        post.update(rng.standard_normal(m), rng.standard_normal(n))
    return post


def check_concentration(rng, instances: int, family: str, draws: int = CONCENTRATION_DRAWS) -> CheckResult:
    ratios = []
    for i in range(instances):
        if family == "tabular":
            n, d = int(rng.integers(2, 6)), int(rng.integers(1, 6))
            post = random_dirichlet_posterior(rng, n, d)
            bound = n * n * d
            shape = {"n": n, "d": d}
        else:
            n, m = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            post = random_gaussian_posterior(rng, n, m)
            bound = 2 * n * m**3
            shape = {"n": n, "m": m}
        est = concentration_mc(post, rng, draws)
        ratios.append(est / bound)
        if est > bound * (1.0 + CONCENTRATION_TOL):
            return CheckResult("concentration", False, f"estimate {est:.4g} exceeds bound {bound}", {"instance": i, **shape})
    return CheckResult("concentration", True, f"{instances} posteriors, max estimate/bound {max(ratios):.3f}")


def check_planner(rng, trials: int, family: str) -> CheckResult:
    if family == "tabular":
        worst = 0.0
        for i in range(trials):
            env = random_tabular(3, 2, rng)
            sol = solve_acoe_tabular(env.theta_star, env.loss, 1e-10)
            ref = brute_force_avg_cost(env.theta_star, env.loss)
            err = abs(sol.J - ref)
            worst = max(worst, err)
            if err > ORACLE_TOL or acoe_residual(sol, env.theta_star, env.loss) > sol.sigma + 1e-12:
                return CheckResult("planner_oracle", False, f"J={sol.J:.10f} vs brute force {ref:.10f}",
                                   {"trial": i, "theta": env.theta_star.tolist(), "loss": env.loss.tolist()})
        return CheckResult("planner_oracle", True, f"{trials} instances vs brute force, worst |dJ| {worst:.1e}")
    worst = 0.0
    for i in range(trials):
        n, d = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        A = rng.standard_normal((n, n)) * 0.5
        B = rng.standard_normal((n, d))
        Q = _rand_pd(rng, n)
        R = _rand_pd(rng, d)
        try:
            sol = solve_dare(A, B, Q, R)
        except PlanningError as err:
            return CheckResult("planner_oracle", False, str(err), {"trial": i, "A": A.tolist(), "B": B.tolist()})
        ref = solve_discrete_are(A, B, Q, R)
        err = np.abs(sol.P - ref).max() / max(1.0, np.abs(ref).max())
        worst = max(worst, err)
        if err > 1e-8:
            return CheckResult("planner_oracle", False, f"P differs from the reference by {err:.3e}",
                               {"trial": i, "A": A.tolist(), "B": B.tolist(), "Q": Q.tolist(), "R": R.tolist()})
    return CheckResult("planner_oracle", True, f"{trials} systems vs scipy DARE, worst rel err {worst:.1e}")


def run_validation(family: str, trials: int, seed: int, theta_hook: Optional[Callable] = None,
                   concentration_draws: int = 20_000) -> list[CheckResult]:
    if family not in ("tabular", "linear"):
        raise ValueError(f"unknown family {family!r}")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)]
    return [
        check_logdet_telescoping(rngs[0], trials, family),
        check_det_ratio(rngs[1], trials),
        check_coupling(rngs[2], trials, family, theta_hook),
        check_conjugacy(rngs[3], trials, family),
        check_concentration(rngs[4], min(trials, 3), family, concentration_draws),
        check_planner(rngs[5], trials, family),
    ]


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        lines.append(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
        if not r.passed and r.witness is not None:
            lines.append(f"{'':<{width}}  witness: {r.witness}")
    return "\n".join(lines)
