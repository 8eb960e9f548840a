"""Average-cost planners.

Tabular problems are solved by relative value iteration on the average cost
optimality equation; linear-quadratic problems by iterating the discrete
algebraic Riccati equation. Both return enough information to bound how far
the greedy action is from the exact minimizer.

Tabular conventions: ``theta`` has shape ``(n * d, n)`` with row
``a * n + s`` holding ``p(. | s, a)``; ``loss`` has shape ``(n, d)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

RVI_MAX_ITER = 1_000_000
# Aperiodicity transform weight: the iteration runs on tau * P + (1 - tau) * I,
# which has the same bias function and gain tau * J.
RVI_TAU = 0.5
TIE_TOL = 1e-12
P_BLOWUP = 1e15


class PlanningError(RuntimeError):
    pass


@dataclass
class AcoeSolution:
    J: float
    h: np.ndarray
    policy: np.ndarray
    sigma: float
    iterations: int = 0

    @property
    def span(self) -> float:
        return float(self.h.max() - self.h.min())


@dataclass
class LqSolution:
    P: np.ndarray
    K: np.ndarray
    J: float
    dare_residual: float
    residual_matrix: np.ndarray
    iterations: int = 0

    def sigma_at(self, x) -> float:
        """ACOE residual at ``x`` for the quadratic bias ``x^T P x``."""
        x = np.asarray(x, dtype=float)
        return float(abs(x @ self.residual_matrix @ x))


def _transitions(theta, loss) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    loss = np.asarray(loss, dtype=float)
    if loss.ndim != 2:
        raise ValueError(f"loss must have shape (n, d), got {loss.shape}")
    n, d = loss.shape
    if theta.shape != (n * d, n):
        raise ValueError(f"theta has shape {theta.shape}, expected {(n * d, n)}")
    if not np.all(np.isfinite(loss)):
        raise ValueError("losses must be finite")
    if np.any(theta < -1e-12) or not np.allclose(theta.sum(axis=1), 1.0, atol=1e-9, rtol=0):
        raise ValueError("theta rows must be probability vectors")
    return theta.reshape(d, n, n), loss


def _q_values(P: np.ndarray, loss: np.ndarray, h: np.ndarray) -> np.ndarray:
    # q[s, a] = loss[s, a] + sum_y P[a, s, y] h[y]
    return loss + (P @ h).T


def _first_argmin(q: np.ndarray) -> np.ndarray:
    q = np.atleast_2d(q)
    lo = q.min(axis=1, keepdims=True)
    return np.argmax(q <= lo + TIE_TOL * np.maximum(1.0, np.abs(lo)), axis=1)


def solve_acoe_tabular(theta, loss, eps_span: float = 1e-6, max_iter: int = RVI_MAX_ITER) -> AcoeSolution:
    """Relative value iteration with reference state 0.

    Stops when ``span(h_{k+1} - h_k) < eps_span``. ``J`` is the midpoint of the
    resulting bracket and the ACOE residual of the returned ``h`` is at most
    ``sigma = eps_span``.
    """
    if not eps_span > 0:
        raise ValueError("eps_span must be positive")
    P, loss = _transitions(theta, loss)
    d, n, _ = P.shape
    P_t = RVI_TAU * P + (1.0 - RVI_TAU) * np.eye(n)
    loss_t = RVI_TAU * loss
    h = np.zeros(n)
    for k in range(1, max_iter + 1):
        w = _q_values(P_t, loss_t, h).min(axis=1)
        diff = w - h
        lo, hi = diff.min(), diff.max()
        if hi - lo < eps_span:
            J = 0.5 * (lo + hi) / RVI_TAU
            h = h - h.min()
            policy = _first_argmin(_q_values(P, loss, h))
            return AcoeSolution(float(J), h, policy, float(eps_span), k)
        h = w - w[0]
    raise PlanningError(
        f"relative value iteration did not converge in {max_iter} iterations "
        f"(n={n}, d={d}); the instance may be multichain"
    )


def greedy_action_tabular(sol: AcoeSolution, theta, loss, x: int) -> int:
    """Lowest-index minimizer of ``loss(x, a) + sum_y p(y | x, a) h(y)``."""
    P, loss = _transitions(theta, loss)
    n = loss.shape[0]
    if not 0 <= x < n:
        raise IndexError(f"state {x} out of range for n={n}")
    q = loss[x] + P[:, x, :] @ sol.h
    return int(_first_argmin(q)[0])


def acoe_residual(sol: AcoeSolution, theta, loss) -> float:
    P, loss = _transitions(theta, loss)
    Th = _q_values(P, loss, sol.h).min(axis=1)
    return float(np.max(np.abs(sol.J + sol.h - Th)))


def stationary_distribution(P: np.ndarray, max_iter: int = 100_000, tol: float = 1e-12) -> np.ndarray:
    """Stationary distribution of a unichain transition matrix.

    Power iteration from the uniform distribution on the lazy chain
    ``(P + I) / 2``, which has the same stationary distribution and is
    aperiodic.
    """
    n = P.shape[0]
    lazy = 0.5 * (P + np.eye(n))
    mu = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = mu @ lazy
        if np.abs(nxt - mu).sum() < tol:
            return nxt
        mu = nxt
    return mu


def policy_average_cost(theta, loss, policy) -> float:
    P, loss = _transitions(theta, loss)
    n = loss.shape[0]
    policy = np.asarray(policy, dtype=int)
    states = np.arange(n)
    chain = P[policy, states, :]
    mu = stationary_distribution(chain)
    return float(mu @ loss[states, policy])


def brute_force_avg_cost(theta, loss, limit: int = 1_000_000) -> float:
    """Minimum average cost over all deterministic stationary policies."""
    P, loss = _transitions(theta, loss)
    n, d = loss.shape
    if d**n > limit:
        raise ValueError(f"{d}^{n} policies exceed the enumeration limit {limit}")
    states = np.arange(n)
    best = np.inf
    for policy in itertools.product(range(d), repeat=n):
        pol = np.array(policy)
        mu = stationary_distribution(P[pol, states, :])
        best = min(best, float(mu @ loss[states, pol]))
    return best


def _check_symmetric(name: str, M: np.ndarray) -> None:
    if not np.allclose(M, M.T, rtol=1e-12, atol=1e-14):
        raise ValueError(f"{name} must be symmetric")


def _riccati_map(A, B, Q, R, P):
    BtP = B.T @ P
    G = R + BtP @ B
    K = np.linalg.solve(G, BtP @ A)
    nxt = Q + A.T @ P @ A - (A.T @ P @ B) @ K
    return 0.5 * (nxt + nxt.T), K


def solve_dare(A, B, Q, R, noise_var: float = 1.0, tol: float = 1e-12, max_iter: int = 100_000) -> LqSolution:
    """Fixed-point Riccati iteration from ``P_0 = Q``.

    Convergence is declared when ``||P_{k+1} - P_k||_F < tol * max(1, ||P_{k+1}||_F)``.
    ``J = noise_var * trace(P)``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n, d = B.shape
    if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (d, d):
        raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} Q{Q.shape} R{R.shape}")
    _check_symmetric("Q", Q)
    _check_symmetric("R", R)
    P = Q.copy()
    for k in range(1, max_iter + 1):
        nxt, _ = _riccati_map(A, B, Q, R, P)
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max() > P_BLOWUP:
            break
        step = np.linalg.norm(nxt - P)
        P = nxt
        if step < tol * max(1.0, np.linalg.norm(P)):
            after, K = _riccati_map(A, B, Q, R, P)
            resid = after - P
            return LqSolution(P, K, float(noise_var * np.trace(P)), float(np.linalg.norm(resid)), resid, k)
    raise PlanningError(f"Riccati iteration did not converge in {max_iter} iterations; (A, B) may be unstabilizable")


def lq_action(sol: LqSolution, x) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != sol.K.shape[1]:
        raise ValueError(f"state has dimension {x.shape[0]}, expected {sol.K.shape[1]}")
    return -(sol.K @ x)
