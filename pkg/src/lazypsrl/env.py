"""Ground-truth simulators for finite MDPs and linear systems.

Both families are driven by uniforms so that two systems can be coupled
through the same randomness: tabular steps use the inverse CDF over states in
index order, linear steps push each uniform through the inverse standard
normal CDF.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np
from scipy.special import ndtri

from .linalg import DimensionError

UNICHAIN_MIX = 0.05
# Scale of the tabular smoothness map M(x, a) = sqrt(2) * diag(phi(x, a)).
# Information-matrix updates use unit weight instead.
TABULAR_SMOOTHNESS_SCALE = np.sqrt(2.0)
_Z_EPS = np.finfo(float).eps


@dataclass
class TabularEnv:
    theta_star: np.ndarray  # (n * d, n), row a * n + s is p(. | s, a)
    loss: np.ndarray  # (n, d), values in [0, 1]

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        self.loss = np.asarray(self.loss, dtype=float)
        n, d = self.loss.shape
        if self.theta_star.shape != (n * d, n):
            raise DimensionError(f"theta_star has shape {self.theta_star.shape}, expected {(n * d, n)}")
        check_stochastic(self.theta_star)

    @property
    def n(self) -> int:
        return self.loss.shape[0]

    @property
    def d(self) -> int:
        return self.loss.shape[1]

    family = "tabular"

    def step(self, x: int, a: int, z: float) -> int:
        return tabular_step(self, x, a, z)


@dataclass
class LinearEnv:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    sigma: float
    action_box: Optional[np.ndarray] = None  # (d, 2) rows of [low, high]
    name: str = "linear"

    family = "linear"

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, d = self.B.shape
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.R.shape != (d, d):
            raise DimensionError("inconsistent A, B, Q, R shapes")
        if not (np.allclose(self.Q, self.Q.T) and np.allclose(self.R, self.R.T)):
            raise ValueError("Q and R must be symmetric")
        if np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be positive definite")
        if not self.sigma > 0:
            raise ValueError("noise standard deviation must be positive")
        if self.action_box is not None:
            self.action_box = np.asarray(self.action_box, dtype=float).reshape(d, 2)

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]

    @property
    def theta_star(self) -> np.ndarray:
        return np.vstack([self.A.T, self.B.T])

    def clip_action(self, a) -> tuple[np.ndarray, bool]:
        a = np.asarray(a, dtype=float).reshape(-1)
        if self.action_box is None:
            return a, False
        a_c = np.clip(a, self.action_box[:, 0], self.action_box[:, 1])
        return a_c, bool(np.any(a_c != a))

    def step(self, x, a, z) -> tuple[np.ndarray, bool]:
        return linear_step(self, x, a, z)


def check_stochastic(theta: np.ndarray, tol: float = 1e-12) -> None:
    if np.any(theta < 0) or not np.allclose(theta.sum(axis=1), 1.0, atol=tol, rtol=0):
        raise ValueError("rows of the transition matrix must be probability vectors")


def feature_map_tabular(x: int, a: int, n: int, d: int) -> np.ndarray:
    """Unit vector in R^{n d} with its single 1 at index ``a * n + x`` (0-based)."""
    if not (0 <= x < n and 0 <= a < d):
        raise IndexError(f"pair (x={x}, a={a}) out of range for n={n}, d={d}")
    phi = np.zeros(n * d)
    phi[a * n + x] = 1.0
    return phi


def feature_map_linear(x, a) -> np.ndarray:
    return np.concatenate([np.asarray(x, dtype=float).reshape(-1), np.asarray(a, dtype=float).reshape(-1)])


def _inverse_cdf(row: np.ndarray, z):
    """Smallest index whose CDF exceeds ``z``; vectorized over array ``z``."""
    cdf = np.cumsum(row)
    idx = np.minimum(np.searchsorted(cdf, z, side="right"), row.shape[0] - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def tabular_step(env: TabularEnv, x: int, a: int, z: float) -> int:
    if not (0 <= x < env.n and 0 <= a < env.d):
        raise IndexError(f"pair (x={x}, a={a}) out of range")
    return _inverse_cdf(env.theta_star[a * env.n + x], z)


def linear_step(env: LinearEnv, x, a, z) -> tuple[np.ndarray, bool]:
    """Next state and whether the action was clipped to ``action_box``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(-1)
    if x.shape[0] != env.n or a.shape[0] != env.d or z.shape[0] != env.n:
        raise DimensionError(f"expected x, z in R^{env.n} and a in R^{env.d}")
    a, clipped = env.clip_action(a)
    w = env.sigma * ndtri(np.clip(z, _Z_EPS, 1.0 - _Z_EPS))
    return env.A @ x + env.B @ a + w, clipped


def coupled_next_states(family: str, x, a, theta, theta_prime, z):
    """Next states under two parameters sharing the randomness ``z``.

    ``linear``: ``theta`` is ``[A^T; B^T]``, ``z`` holds n uniforms and both
    systems see identical Gaussian noise. ``tabular``: ``theta`` has shape
    ``(n d, n)``, ``x`` and ``a`` are indices, and ``z = (z1, z2)`` drives two
    independent inverse-CDF draws (``z1`` and ``z2`` may be arrays of
    uniforms, giving arrays of next states).
    """
    theta = np.asarray(theta, dtype=float)
    theta_prime = np.asarray(theta_prime, dtype=float)
    if theta.shape != theta_prime.shape:
        raise DimensionError("parameters have different shapes")
    if family == "linear":
        phi = feature_map_linear(x, a)
        if theta.shape[0] != phi.shape[0]:
            raise DimensionError(f"theta has {theta.shape[0]} rows, feature has {phi.shape[0]}")
        w = ndtri(np.clip(np.asarray(z, dtype=float), _Z_EPS, 1.0 - _Z_EPS))
        return theta.T @ phi + w, theta_prime.T @ phi + w
    if family == "tabular":
        check_stochastic(theta, tol=1e-9)
        check_stochastic(theta_prime, tol=1e-9)
        n = theta.shape[1]
        k = int(a) * n + int(x)
        z1, z2 = z
        return _inverse_cdf(theta[k], z1), _inverse_cdf(theta_prime[k], z2)
    raise ValueError(f"unknown family {family!r}")


def tabular_smoothness_matrix(x: int, a: int, n: int, d: int) -> np.ndarray:
    return TABULAR_SMOOTHNESS_SCALE * np.diag(feature_map_tabular(x, a, n, d))


def quadratic_loss(x, a, Q, R) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    a = np.asarray(a, dtype=float).reshape(-1)
    Q = np.atleast_2d(Q)
    R = np.atleast_2d(R)
    if Q.shape != (x.shape[0],) * 2 or R.shape != (a.shape[0],) * 2:
        raise DimensionError("dimension mismatch in quadratic loss")
    return float(x @ Q @ x + a @ R @ a)


def random_tabular(n: int, d: int, rng: np.random.Generator, eta: float = UNICHAIN_MIX) -> TabularEnv:
    """Random instance whose every deterministic policy induces a unichain.

    Each row is ``(1 - eta) * Dirichlet(1) + eta * uniform``; with ``eta > 0``
    every chain is irreducible. Losses are uniform on [0, 1].
    """
    raw = rng.dirichlet(np.ones(n), size=n * d)
    theta = (1.0 - eta) * raw + eta / n
    theta /= theta.sum(axis=1, keepdims=True)
    loss = rng.uniform(0.0, 1.0, size=(n, d))
    return TabularEnv(theta, loss)


# Operating point: KeepAlive 11 s, MaxClients 600.
_WEB_OPERATING_POINT = np.array([11.0, 600.0])
_WEB_RAW_BOUNDS = np.array([[1.0, 1024.0], [1.0, 20.0]])


def _load_bundled(name: str) -> dict:
    return json.loads(resources.files("lazypsrl.data").joinpath(name).read_text())


def web_server_instance(sigma: float = 0.1, action_box: bool = False) -> LinearEnv:
    """Linearized Apache web-server model around its operating point.

    State: (CPU load, memory usage) deviations. Action: (KeepAlive,
    MaxClients) deviations. ``action_box`` applies the raw parameter bounds
    shifted by the operating point.
    """
    if not sigma > 0:
        raise ValueError("noise standard deviation must be positive")
    doc = _load_bundled("webserver.json")
    box = None
    if action_box:
        box = _WEB_RAW_BOUNDS - _WEB_OPERATING_POINT[:, None]
    return LinearEnv(doc["A"], doc["B"], doc["Q"], doc["R"], float(sigma), box, name=f"webserver-{sigma}")


def env_from_dict(doc: dict):
    family = doc.get("family")
    if family == "tabular":
        return TabularEnv(np.asarray(doc["theta"], dtype=float), np.asarray(doc["loss"], dtype=float))
    if family == "linear":
        box = doc.get("action_box")
        return LinearEnv(
            doc["A"], doc["B"], doc["Q"], doc["R"], float(doc["sigma"]),
            None if box is None else np.asarray(box, dtype=float),
            name=doc.get("name", "linear"),
        )
    raise ValueError(f"unknown environment family {family!r}")


def env_to_dict(env) -> dict:
    if isinstance(env, TabularEnv):
        return {"family": "tabular", "theta": env.theta_star.tolist(), "loss": env.loss.tolist()}
    return {
        "family": "linear",
        "name": env.name,
        "A": env.A.tolist(),
        "B": env.B.tolist(),
        "Q": env.Q.tolist(),
        "R": env.R.tolist(),
        "sigma": env.sigma,
        "action_box": None if env.action_box is None else env.action_box.tolist(),
    }


def load_env(path) -> TabularEnv | LinearEnv:
    with open(path) as fh:
        return env_from_dict(json.load(fh))
