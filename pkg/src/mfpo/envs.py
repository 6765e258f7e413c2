"""Desk-scale environments: the 6-mode GMM bandit, a quadratic bandit and a multi-goal point mass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .stats import isotropic_normal_logpdf


@dataclass(frozen=True)
class EnvSpec:
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int
    reward_bounds: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        if np.any(np.asarray(self.action_low) >= np.asarray(self.action_high)):
            raise ValueError("action_low must be < action_high elementwise")


# ---------------------------------------------------------------------------
# GMM bandit


@dataclass(frozen=True)
class GmmParams:
    means: np.ndarray  # (k, 2)
    std: float
    weights: np.ndarray  # (k,)

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")
        if not np.isclose(np.sum(self.weights), 1.0):
            raise ValueError("mixture weights must sum to 1")


def make_gmm_params(radius: float = 2.0, std: float = 0.3, num_components: int = 6) -> GmmParams:
    angles = 2.0 * np.pi * np.arange(num_components) / num_components
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GmmParams(means, float(std), np.full(num_components, 1.0 / num_components))


def gmm_log_density(params: GmmParams, a) -> np.ndarray | float:
    a = np.asarray(a, dtype=np.float64)
    comp = isotropic_normal_logpdf(a[..., None, :], params.means, np.full(len(params.weights), params.std))
    out = logsumexp(comp + np.log(params.weights), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def gmm_bandit_step(params: GmmParams, a) -> tuple[float, bool]:
    return gmm_log_density(params, a), True


def exact_gmm_sampler(params: GmmParams, rng: np.random.Generator, n: int) -> np.ndarray:
    comp = rng.choice(len(params.weights), size=n, p=params.weights)
    return params.means[comp] + params.std * rng.standard_normal((n, 2))


class GmmBandit:
    """Single-step task whose reward is the GMM log-density of the action.

    With temperature ``alpha = 1`` the maximum-entropy optimal policy is the
    GMM itself; other temperatures target the GMM density raised to ``1/alpha``.
    """

    name = "gmm_bandit"

    def __init__(self, radius: float = 2.0, std: float = 0.3, num_components: int = 6, action_bound: float = 5.0):
        self.params = make_gmm_params(radius, std, num_components)
        top = gmm_log_density(self.params, self.params.means[0])
        self.spec = EnvSpec(1, 2, np.full(2, -action_bound), np.full(2, action_bound), 1, (-np.inf, top))
        self._state = np.zeros(1)

    def reset(self, seed: int | None = None) -> np.ndarray:
        return self._state.copy()

    def step(self, action):
        reward, done = gmm_bandit_step(self.params, np.asarray(action, dtype=np.float64))
        return self._state.copy(), float(reward), done, False

    def log_density(self, a, alpha: float = 1.0):
        """Unnormalized log-density of the tempered target ``p^(1/alpha)``."""
        return gmm_log_density(self.params, a) / alpha


# ---------------------------------------------------------------------------
# quadratic bandit


class QuadraticBandit:
    """Single-step task with reward ``-|a - center|^2 / 2``; Boltzmann policy is ``N(center, alpha I)``."""

    name = "quadratic_bandit"

    def __init__(self, center=(0.7,), action_bound: float = 5.0):
        self.center = np.atleast_1d(np.asarray(center, dtype=np.float64))
        d = self.center.size
        self.spec = EnvSpec(1, d, np.full(d, -action_bound), np.full(d, action_bound), 1, (-np.inf, 0.0))
        self._state = np.zeros(1)

    def q(self, a):
        a = np.asarray(a, dtype=np.float64)
        return -0.5 * np.sum((a - self.center) ** 2, axis=-1)

    def reset(self, seed: int | None = None) -> np.ndarray:
        return self._state.copy()

    def step(self, action):
        return self._state.copy(), float(self.q(action)), True, False


# ---------------------------------------------------------------------------
# point mass


@dataclass(frozen=True)
class PointMassConfig:
    dt: float = 0.05
    num_goals: int = 4
    goal_radius: float = 1.0
    goal_sigma: float = 0.3
    success_radius: float = 0.1
    action_cost: float = 0.01
    noise_std: float = 0.01
    max_episode_steps: int = 100
    start_noise: float = 0.05
    action_bound: float = 1.0
    goals: np.ndarray = field(default=None, compare=False)

    def goal_points(self) -> np.ndarray:
        if self.goals is not None:
            return np.asarray(self.goals, dtype=np.float64)
        ang = 2.0 * np.pi * np.arange(self.num_goals) / self.num_goals
        return self.goal_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)


def point_mass_reward(cfg: PointMassConfig, next_state, action) -> float:
    g = cfg.goal_points()
    d2 = np.sum((np.asarray(next_state)[None, :] - g) ** 2, axis=1)
    bonus = float(np.max(np.exp(-d2 / (2.0 * cfg.goal_sigma**2))))
    return bonus - cfg.action_cost * float(np.sum(np.asarray(action) ** 2))


def point_mass_step(state, a, noise, cfg: PointMassConfig | None = None):
    """Pure transition: ``next = state + dt * clip(a) + noise``.

    The action cost is charged on the raw action handed to the environment,
    so the reward keeps decaying outside the action box. ``done`` marks a true
    terminal (within ``success_radius`` of a goal), not a time-limit.
    """
    cfg = cfg or PointMassConfig()
    a = np.asarray(a, dtype=np.float64)
    clipped = np.clip(a, -cfg.action_bound, cfg.action_bound)
    nxt = np.asarray(state, dtype=np.float64) + cfg.dt * clipped + np.asarray(noise, dtype=np.float64)
    reward = point_mass_reward(cfg, nxt, a)
    done = bool(np.min(np.linalg.norm(cfg.goal_points() - nxt[None, :], axis=1)) <= cfg.success_radius)
    return nxt, reward, done


class PointMass:
    name = "point_mass"

    def __init__(self, **kwargs):
        self.cfg = PointMassConfig(**kwargs)
        b = self.cfg.action_bound
        self.spec = EnvSpec(2, 2, np.full(2, -b), np.full(2, b), self.cfg.max_episode_steps, (-np.inf, 1.0))
        self._rng = np.random.default_rng(0)
        self._state = np.zeros(2)
        self._t = 0

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = self.cfg.start_noise * self._rng.standard_normal(2)
        self._t = 0
        return self._state.copy()

    def step(self, action):
        noise = self.cfg.noise_std * self._rng.standard_normal(2)
        self._state, reward, done = point_mass_step(self._state, action, noise, self.cfg)
        self._t += 1
        truncated = (not done) and self._t >= self.cfg.max_episode_steps
        return self._state.copy(), reward, done, truncated


ENVS = {"gmm_bandit": GmmBandit, "quadratic_bandit": QuadraticBandit, "point_mass": PointMass}


def make_env(name: str, **params):
    try:
        cls = ENVS[name]
    except KeyError:
        raise ValueError(f"unknown env {name!r}; choose from {sorted(ENVS)}") from None
    return cls(**params)
