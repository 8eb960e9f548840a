"""Conjugate posteriors over the system parameter matrix.

Two families are supported:

* :class:`DirichletPosterior` for finite MDPs. Row ``k = a * n + s`` of the
  parameter matrix is the next-state distribution of the pair ``(s, a)``
  (0-based), each row carrying an independent Dirichlet belief.
* :class:`GaussianPosterior` for linearly parameterized dynamics
  ``x' = Theta^T phi + w`` with identity noise covariance (observations are
  whitened by the caller). Columns of ``Theta`` share the precision ``V_t``.
"""

from __future__ import annotations

import json
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import DimensionError, InfoMatrix, half_weighted_norm, psd_update

SCHEMA_VERSION = 1
MAX_REJECTIONS = 100


class DirichletPosterior:
    """Independent Dirichlet beliefs over the ``n * d`` transition rows."""

    def __init__(self, n: int, d: int, counts: np.ndarray, alpha: np.ndarray):
        self.n = n
        self.d = d
        self.counts = counts
        self.alpha = alpha

    @classmethod
    def init(cls, n: int, d: int, alpha) -> "DirichletPosterior":
        alpha = np.asarray(alpha, dtype=float).reshape(-1)
        if n < 1 or d < 1:
            raise ValueError("state and action counts must be positive")
        if alpha.shape != (n,):
            raise DimensionError(f"alpha must have length {n}, got {alpha.shape[0]}")
        if not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
            raise ValueError("Dirichlet parameters must be strictly positive")
        return cls(n, d, np.tile(alpha, (n * d, 1)), alpha.copy())

    def row(self, s: int, a: int) -> int:
        if not (0 <= s < self.n) or not (0 <= a < self.d):
            raise IndexError(f"pair (s={s}, a={a}) out of range for n={self.n}, d={self.d}")
        return a * self.n + s

    def update(self, s: int, a: int, s_next: int) -> None:
        k = self.row(s, a)
        if not 0 <= s_next < self.n:
            raise IndexError(f"next state {s_next} out of range for n={self.n}")
        self.counts[k, s_next] += 1.0

    def mean(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        g = rng.standard_gamma(self.counts)
        tot = g.sum(axis=1, keepdims=True)
        # Every gamma draw of a row can underflow to zero for tiny shapes.
        bad = tot[:, 0] == 0.0
        if bad.any():
            g[bad] = self.counts[bad] / self.counts[bad].sum(axis=1, keepdims=True)
            tot[bad] = 1.0
        return g / tot

    def info_matrix(self) -> InfoMatrix:
        """Diagonal ``V_t`` whose entry ``k`` is the total pseudo-count of row ``k``."""
        return InfoMatrix.from_matrix(np.diag(self.counts.sum(axis=1)))

    def copy(self) -> "DirichletPosterior":
        return DirichletPosterior(self.n, self.d, self.counts.copy(), self.alpha.copy())

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": SCHEMA_VERSION,
                "family": "dirichlet",
                "n": self.n,
                "d": self.d,
                "alpha": self.alpha.tolist(),
                "counts": self.counts.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DirichletPosterior":
        doc = json.loads(text)
        _check_header(doc, "dirichlet")
        counts = np.asarray(doc["counts"], dtype=float)
        n, d = int(doc["n"]), int(doc["d"])
        if counts.shape != (n * d, n) or not np.all(counts > 0):
            raise ValueError("malformed Dirichlet counts")
        return cls(n, d, counts, np.asarray(doc["alpha"], dtype=float))


class GaussianPosterior:
    """Column-wise Gaussian posterior ``Theta[:, i] ~ N(mean[:, i], V_t^{-1})``.

    ``moment`` accumulates ``sum_s phi_s x_{s+1}^T`` so that
    ``V_t mean = moment`` holds after every update (the prior mean is zero).
    An optional Frobenius ball of radius ``support_radius`` truncates the
    support.
    """

    def __init__(self, precision: InfoMatrix, moment: np.ndarray, support_radius: Optional[float] = None):
        self.precision = precision
        self.moment = moment
        self.support_radius = support_radius
        self.mean = precision.solve(moment)

    @classmethod
    def init(cls, V: InfoMatrix | np.ndarray, n: int, support_radius: Optional[float] = None) -> "GaussianPosterior":
        if not isinstance(V, InfoMatrix):
            V = InfoMatrix.from_matrix(V)
        if n < 1:
            raise ValueError("output dimension must be positive")
        if support_radius is not None and not support_radius > 0:
            raise ValueError("support radius must be positive (an empty support has no posterior)")
        return cls(V, np.zeros((V.dim, n)), support_radius)

    @property
    def m(self) -> int:
        return self.precision.dim

    @property
    def n(self) -> int:
        return self.moment.shape[1]

    def update(self, phi, x_next) -> None:
        phi = np.asarray(phi, dtype=float).reshape(-1)
        x_next = np.asarray(x_next, dtype=float).reshape(-1)
        if phi.shape[0] != self.m or x_next.shape[0] != self.n:
            raise DimensionError(
                f"expected phi in R^{self.m} and x_next in R^{self.n}, "
                f"got {phi.shape[0]} and {x_next.shape[0]}"
            )
        self.precision = psd_update(self.precision, [(1.0, phi)])
        self.moment = self.moment + np.outer(phi, x_next)
        self.mean = self.precision.solve(self.moment)

    def _draw(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.m, self.n))
        return self.mean + solve_triangular(self.precision.chol.T, z, lower=False, check_finite=False)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        theta = self._draw(rng)
        r = self.support_radius
        if r is None:
            return theta
        for _ in range(MAX_REJECTIONS - 1):
            if np.linalg.norm(theta) <= r:
                return theta
            theta = self._draw(rng)
        norm = np.linalg.norm(theta)
        if norm > r:
            theta = theta * (r / norm)
        return theta

    def copy(self) -> "GaussianPosterior":
        return GaussianPosterior(self.precision, self.moment.copy(), self.support_radius)

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": SCHEMA_VERSION,
                "family": "gaussian",
                "m": self.m,
                "n": self.n,
                "precision": self.precision.matrix.tolist(),
                "moment": self.moment.tolist(),
                "mean": self.mean.tolist(),
                "support_radius": self.support_radius,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "GaussianPosterior":
        doc = json.loads(text)
        _check_header(doc, "gaussian")
        V = InfoMatrix.from_matrix(doc["precision"])
        moment = np.asarray(doc["moment"], dtype=float).reshape(int(doc["m"]), int(doc["n"]))
        return cls(V, moment, doc.get("support_radius"))


def _check_header(doc: dict, family: str) -> None:
    if doc.get("version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported posterior snapshot version {doc.get('version')!r}")
    if doc.get("family") != family:
        raise ValueError(f"snapshot family is {doc.get('family')!r}, expected {family!r}")


def concentration_stat(theta, mean, V: InfoMatrix):
    """Squared ``||(Theta - mean)^T V^{1/2}||_2``.

    ``theta`` may be a stack of draws with shape (N, m, n); the result is then
    one value per draw.
    """
    theta = np.asarray(theta, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if theta.shape[-2:] != mean.shape:
        raise DimensionError(f"theta has shape {theta.shape[-2:]}, mean has {mean.shape}")
    return np.square(half_weighted_norm(theta - mean, V))
