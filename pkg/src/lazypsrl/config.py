"""Experiment configuration: parsing, validation and fingerprinting."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

import numpy as np

from .env import load_env, random_tabular, web_server_instance

AGENTS = ("lazy-psrl", "stabilized-lazy-psrl", "certainty-equivalence", "oracle", "random")
BUILTIN_ENVS = ("webserver-0.1", "webserver-1.0", "random-tabular")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class AgentConfig:
    kind: str = "lazy-psrl"
    prior_scale: float = 1.0
    alpha: Optional[list] = None
    support_radius: Optional[float] = None
    eps_span: float = 1e-6
    dare_tol: float = 1e-12
    dare_max_iter: int = 100_000
    resample_factor: float = 2.0
    safe_region: Optional[dict] = None
    stabilizer_gain: Optional[list] = None
    stabilizer_r_scale: float = 0.1
    x0: Any = None
    log_trajectory: bool = True


@dataclass
class ExperimentConfig:
    env: str
    agent: AgentConfig
    T: int
    seeds: list
    env_params: dict = field(default_factory=dict)
    noise_sigma: Optional[float] = None
    output_dir: str = "out"
    base_dir: str = "."

    def build_env(self):
        return build_env(self.env, self.env_params, self.noise_sigma, self.base_dir)

    def fingerprint(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc.pop("base_dir")
        return doc


def build_env(name: str, params: dict | None = None, noise_sigma: float | None = None, base_dir: str = "."):
    params = dict(params or {})
    if name in ("webserver-0.1", "webserver-1.0"):
        sigma = float(name.split("-")[1]) if noise_sigma is None else noise_sigma
        return web_server_instance(sigma, action_box=bool(params.get("action_box", False)))
    if name == "random-tabular":
        if noise_sigma is not None:
            raise ConfigError("noise_sigma", "only linear environments have a noise scale")
        rng = np.random.default_rng(int(params.get("instance_seed", 0)))
        return random_tabular(int(params.get("n", 5)), int(params.get("d", 2)), rng)
    path = name if os.path.isabs(name) else os.path.join(base_dir, name)
    if not os.path.exists(path):
        raise ConfigError("env", f"unknown builtin or missing spec file {name!r}")
    env = load_env(path)
    if noise_sigma is not None:
        if env.family != "linear":
            raise ConfigError("noise_sigma", "only linear environments have a noise scale")
        env.sigma = float(noise_sigma)
    return env


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ConfigError(field_name, message)


def parse_config(doc: dict, base_dir: str = ".") -> ExperimentConfig:
    """Validate a config document; raises :class:`ConfigError` naming the bad field."""
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)} | {"prior", "planner", "safe_region", "stabilizer",
                                                          "resample_factor", "x0", "log_trajectory"}
    for key in doc:
        _require(key in known, key, "unknown field")

    _require("env" in doc, "env", "missing")
    env = doc["env"]
    _require(isinstance(env, str), "env", "must be a builtin name or a path")
    if env not in BUILTIN_ENVS:
        path = env if os.path.isabs(env) else os.path.join(base_dir, env)
        _require(env.endswith(".json") and os.path.exists(path), "env",
                 f"unknown builtin {env!r} (choose from {', '.join(BUILTIN_ENVS)} or a .json spec path)")

    agent_doc = doc.get("agent", "lazy-psrl")
    _require(agent_doc in AGENTS, "agent", f"must be one of {', '.join(AGENTS)}")

    T = doc.get("T")
    _require(isinstance(T, int) and not isinstance(T, bool) and T >= 1, "T", "must be an integer >= 1")

    seeds = doc.get("seeds")
    _require(isinstance(seeds, list) and len(seeds) > 0, "seeds", "must be a nonempty list")
    _require(all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds), "seeds",
             "must be nonnegative integers")
    _require(len(set(seeds)) == len(seeds), "seeds", "must be distinct")

    prior = doc.get("prior", {}) or {}
    _require(isinstance(prior, dict), "prior", "must be an object")
    scale = prior.get("scale", 1.0)
    _require(isinstance(scale, (int, float)) and scale > 0, "prior.scale", "must be positive")
    alpha = prior.get("alpha")
    if alpha is not None:
        _require(isinstance(alpha, list) and all(isinstance(a, (int, float)) and a > 0 for a in alpha),
                 "prior.alpha", "must be a list of positive numbers")
    radius = prior.get("support_radius")
    if radius is not None:
        _require(isinstance(radius, (int, float)) and radius > 0, "prior.support_radius", "must be positive")

    planner = doc.get("planner", {}) or {}
    eps = planner.get("eps_span", 1e-6)
    _require(isinstance(eps, (int, float)) and eps > 0, "planner.eps_span", "must be positive")
    dare_tol = planner.get("dare_tol", 1e-12)
    _require(isinstance(dare_tol, (int, float)) and dare_tol > 0, "planner.dare_tol", "must be positive")
    dare_max = planner.get("dare_max_iter", 100_000)
    _require(isinstance(dare_max, int) and dare_max >= 1, "planner.dare_max_iter", "must be a positive integer")

    factor = doc.get("resample_factor", 2.0)
    _require(isinstance(factor, (int, float)) and factor > 1, "resample_factor", "must exceed 1")

    region = doc.get("safe_region")
    if region is not None:
        _require(isinstance(region, dict) and region.get("kind") in ("ball", "box"), "safe_region.kind",
                 "must be 'ball' or 'box'")
        b = np.asarray(region.get("bound", 0.0), dtype=float)
        _require(b.size > 0 and np.all(b > 0), "safe_region.bound", "must be positive")
    elif agent_doc == "stabilized-lazy-psrl":
        region = {"kind": "ball", "bound": 1.0}

    stab = doc.get("stabilizer") or {}
    _require(isinstance(stab, dict), "stabilizer", "must be an object")
    r_scale = stab.get("r_scale", 0.1)
    _require(isinstance(r_scale, (int, float)) and r_scale > 0, "stabilizer.r_scale", "must be positive")

    noise_sigma = doc.get("noise_sigma")
    if noise_sigma is not None:
        _require(isinstance(noise_sigma, (int, float)) and noise_sigma > 0, "noise_sigma", "must be positive")

    env_params = doc.get("env_params", {}) or {}
    _require(isinstance(env_params, dict), "env_params", "must be an object")

    agent = AgentConfig(
        kind=agent_doc,
        prior_scale=float(scale),
        alpha=alpha,
        support_radius=radius,
        eps_span=float(eps),
        dare_tol=float(dare_tol),
        dare_max_iter=int(dare_max),
        resample_factor=float(factor),
        safe_region=region,
        stabilizer_gain=stab.get("gain"),
        stabilizer_r_scale=float(r_scale),
        x0=doc.get("x0"),
        log_trajectory=bool(doc.get("log_trajectory", True)),
    )
    cfg = ExperimentConfig(
        env=env,
        agent=agent,
        T=T,
        seeds=list(seeds),
        env_params=env_params,
        noise_sigma=None if noise_sigma is None else float(noise_sigma),
        output_dir=str(doc.get("output_dir", "out")),
        base_dir=base_dir,
    )
    try:
        built = cfg.build_env()
    except ConfigError:
        raise
    except (ValueError, KeyError, OSError) as err:
        raise ConfigError("env", f"could not build environment: {err}") from None
    if agent.kind == "random":
        _require(built.family == "tabular", "agent", "the random agent needs a tabular environment")
    if agent.kind == "stabilized-lazy-psrl":
        _require(built.family == "linear", "agent", "the stabilized agent needs a linear environment")
    if alpha is not None and built.family == "tabular":
        _require(len(alpha) == built.n, "prior.alpha", f"must have length {built.n}")
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise ConfigError("<file>", str(err)) from None
    except json.JSONDecodeError as err:
        raise ConfigError("<file>", f"invalid JSON: {err}") from None
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def with_override(cfg: ExperimentConfig, param: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with one sweepable parameter replaced."""
    import copy

    new = copy.deepcopy(cfg)
    if param == "prior_scale":
        _require(value > 0, "prior_scale", "must be positive")
        new.agent.prior_scale = float(value)
    elif param == "sigma":
        _require(value > 0, "sigma", "must be positive")
        new.noise_sigma = float(value)
        try:
            new.build_env()
        except ConfigError as err:
            raise ConfigError("sigma", str(err)) from None
    elif param == "T":
        _require(float(value).is_integer() and value >= 1, "T", "must be an integer >= 1")
        new.T = int(value)
    elif param == "resample_factor":
        _require(value > 1, "resample_factor", "must exceed 1")
        new.agent.resample_factor = float(value)
    else:
        raise ConfigError("param", f"{param!r} is not sweepable (prior_scale, sigma, T, resample_factor)")
    return new


SWEEPABLE = ("prior_scale", "sigma", "T", "resample_factor")
