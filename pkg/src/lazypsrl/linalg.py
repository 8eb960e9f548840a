"""Positive-definite information matrices and weighted parameter norms.

The information matrix ``V_t = V + sum_s M(x_s, a_s)`` is carried around as a
lower Cholesky factor together with cached ``log det`` and ``trace`` so the
determinant-doubling test and the switching-count bookkeeping stay O(m^2) per
step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

REFACTOR_EVERY = 1000
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class InfoMatrix:
    """Immutable PD matrix with a maintained Cholesky factor.

    ``matrix`` is the exactly accumulated dense matrix; ``chol`` is updated by
    rank-1 modifications and rebuilt from ``matrix`` every ``REFACTOR_EVERY``
    rank-1 updates.
    """

    matrix: np.ndarray
    chol: np.ndarray
    log_det: float
    trace: float
    pending: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, V) -> "InfoMatrix":
        V = np.array(V, dtype=float, ndmin=2)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {V.shape}")
        if not np.allclose(V, V.T, rtol=1e-12, atol=1e-12):
            raise ValueError("information matrix must be symmetric")
        V = 0.5 * (V + V.T)
        try:
            L = np.linalg.cholesky(V)
        except np.linalg.LinAlgError:
            raise ValueError("information matrix must be positive definite") from None
        if not np.all(np.diag(L) > 0):
            raise ValueError("information matrix must be positive definite")
        return cls(V, L, _log_det_from_chol(L), float(np.trace(V)))

    @classmethod
    def identity(cls, m: int, scale: float = 1.0) -> "InfoMatrix":
        return cls.from_matrix(scale * np.eye(m))

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Return ``V^{-1} b`` via two triangular solves."""
        y = solve_triangular(self.chol, b, lower=True, check_finite=False)
        return solve_triangular(self.chol.T, y, lower=False, check_finite=False)

    def reconstruct(self) -> np.ndarray:
        return self.chol @ self.chol.T


def _log_det_from_chol(L: np.ndarray) -> float:
    return float(2.0 * np.sum(np.log(np.diag(L))))


def _chol_rank1_update(L: np.ndarray, x: np.ndarray) -> None:
    """In-place ``L L^T + x x^T`` update of a lower Cholesky factor."""
    nz = np.flatnonzero(x)
    if nz.size == 0:
        return
    m = L.shape[0]
    # Leading zeros of x leave the corresponding columns untouched.
    for k in range(nz[0], m):
        xk = x[k]
        if xk == 0.0:
            continue
        lkk = L[k, k]
        r = np.hypot(lkk, xk)
        c = r / lkk
        s = xk / lkk
        L[k, k] = r
        if k + 1 < m:
            L[k + 1 :, k] = (L[k + 1 :, k] + s * x[k + 1 :]) / c
            x[k + 1 :] = c * x[k + 1 :] - s * L[k + 1 :, k]


def psd_update(V: InfoMatrix, increments: Iterable[tuple[float, Sequence[float]]]) -> InfoMatrix:
    """Return ``V + sum_i w_i v_i v_i^T`` as a new :class:`InfoMatrix`.

    ``increments`` is an iterable of ``(weight, vector)`` pairs with
    nonnegative weights.
    """
    items = []
    for w, v in increments:
        v = np.asarray(v, dtype=float).reshape(-1)
        if v.shape[0] != V.dim:
            raise DimensionError(f"increment has dimension {v.shape[0]}, expected {V.dim}")
        w = float(w)
        if w < 0 or not np.isfinite(w):
            raise ValueError(f"increment weight must be a nonnegative finite number, got {w}")
        items.append((w, v))
    if not items:
        return V

    matrix = V.matrix.copy()
    L = V.chol.copy()
    trace = V.trace
    pending = V.pending
    for w, v in items:
        if w == 0.0 or not np.any(v):
            continue
        matrix += w * np.outer(v, v)
        trace += w * float(v @ v)
        _chol_rank1_update(L, np.sqrt(w) * v)
        pending += 1
    if pending >= REFACTOR_EVERY:
        matrix = 0.5 * (matrix + matrix.T)
        L = np.linalg.cholesky(matrix)
        pending = 0
    return InfoMatrix(matrix, L, _log_det_from_chol(L), trace, pending)


def _power_top_eig(S: np.ndarray, start: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Largest-eigenvalue estimate of a batch of symmetric PSD matrices.

    ``S`` has shape (..., k, k). Converged entries drop out of the working set.
    """
    batch = S.shape[:-2]
    k = S.shape[-1]
    flat = S.reshape(-1, k, k)
    v = np.broadcast_to(start, (flat.shape[0], k)).copy()
    lam = np.zeros(flat.shape[0])
    idx = np.arange(flat.shape[0])
    for _ in range(max_iter):
        w = np.einsum("bij,bj->bi", flat[idx], v[idx])
        lam_new = np.einsum("bi,bi->b", v[idx], w)
        norm = np.linalg.norm(w, axis=-1)
        # A zero image means the iterate is in the null space; the Rayleigh
        # quotient is then exactly 0.
        dead = norm == 0.0
        done = np.abs(lam_new - lam[idx]) <= tol * np.maximum(np.abs(lam_new), np.finfo(float).tiny)
        lam[idx] = lam_new
        v[idx] = np.where(dead[:, None], v[idx], w / np.where(dead, 1.0, norm)[:, None])
        idx = idx[~(done | dead)]
        if idx.size == 0:
            break
    return lam.reshape(batch)


def top_eigenvalue_psd(S: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> np.ndarray:
    """Spectral norm of symmetric PSD matrices by power iteration.

    Starts from the normalized all-ones vector. A second fixed start vector
    (alternating signs, decaying weights) guards against an all-ones start
    that is orthogonal to the leading eigenvector; the larger estimate wins.
    """
    S = np.asarray(S, dtype=float)
    k = S.shape[-1]
    ones = np.ones(k) / np.sqrt(k)
    alt = np.array([(-1.0) ** i / (i + 1) for i in range(k)])
    alt /= np.linalg.norm(alt)
    first = _power_top_eig(S, ones, tol, max_iter)
    if k == 1:
        return first
    second = _power_top_eig(S, alt, tol, max_iter)
    return np.maximum(first, second)


def weighted_param_norm(theta, M) -> float:
    """``||Theta||_M = sqrt(||Theta^T M Theta||_2)`` for PSD ``M``."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (theta.shape[0], theta.shape[0]):
        raise DimensionError(f"M has shape {M.shape}, expected {(theta.shape[0],) * 2}")
    S = theta.T @ M @ theta
    S = 0.5 * (S + S.T)
    return float(np.sqrt(max(float(top_eigenvalue_psd(S)), 0.0)))


def half_weighted_norm(delta, V: InfoMatrix) -> float | np.ndarray:
    """``||delta^T V^{1/2}||_2`` without forming a matrix square root.

    Uses ``||delta^T V^{1/2}||_2^2 = ||delta^T V delta||_2 = ||L^T delta||_2^2``.
    ``delta`` may carry leading batch axes, shape (..., m, n).
    """
    delta = np.asarray(delta, dtype=float)
    if delta.ndim == 1:
        delta = delta[:, None]
    if delta.shape[-2] != V.dim:
        raise DimensionError(f"delta has {delta.shape[-2]} rows, expected {V.dim}")
    G = np.einsum("ji,...jk->...ik", V.chol, delta)  # L^T delta
    S = np.einsum("...ij,...ik->...jk", G, G)
    lam = np.maximum(top_eigenvalue_psd(S), 0.0)
    out = np.sqrt(lam)
    return float(out) if out.ndim == 0 else out


def whitened_norm_sq(V: InfoMatrix, M) -> float:
    """``||V^{-1/2}||_M^2 = ||V^{-1/2} M V^{-1/2}||_2``.

    ``L^{-1} M L^{-T}`` is orthogonally similar to ``V^{-1/2} M V^{-1/2}``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (V.dim, V.dim):
        raise DimensionError(f"M has shape {M.shape}, expected {(V.dim, V.dim)}")
    X = solve_triangular(V.chol, M, lower=True, check_finite=False)
    S = solve_triangular(V.chol, X.T, lower=True, check_finite=False)
    S = 0.5 * (S + S.T)
    return float(max(float(top_eigenvalue_psd(S)), 0.0))


def increment_matrix(increments: Iterable[tuple[float, Sequence[float]]], m: int) -> np.ndarray:
    out = np.zeros((m, m))
    for w, v in increments:
        v = np.asarray(v, dtype=float).reshape(-1)
        out += w * np.outer(v, v)
    return out


def logdet_telescoping_bounds(V0: InfoMatrix, increments_seq, L2: float) -> tuple[float, float, float]:
    """Evaluate the three sides of the log-det telescoping inequality.

    Returns ``(lhs, middle, right)`` where ``lhs = sum_t min(1, ||V_t^{-1/2}||^2_{M_t})``,
    ``middle = 2 (log det V_{T+1} - log det V)`` and
    ``right = 2 (m log((trace V + T L2) / m) - log det V)``.
    """
    V = V0
    lhs = 0.0
    T = 0
    for incs in increments_seq:
        incs = list(incs)
        M = increment_matrix(incs, V.dim)
        lhs += min(1.0, whitened_norm_sq(V, M))
        V = psd_update(V, incs)
        T += 1
    m = V0.dim
    middle = 2.0 * (V.log_det - V0.log_det)
    right = 2.0 * (m * np.log((V0.trace + T * L2) / m) - V0.log_det)
    return lhs, middle, float(right)
