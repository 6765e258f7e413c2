"""MeanFlow policy: average velocity, few-step sampling and the policy regression loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Adam, NonFiniteError
from .divnet import trajectory_log_likelihood
from .networks import AvgDivergenceNet, AvgVelocityNet, as_batch, directional, evaluate, regress
from .stats import std_normal_logpdf


def avg_velocity(net: AvgVelocityNet, s, a_t, r, t) -> np.ndarray:
    return evaluate(net, s, a_t, r, t)


def inst_velocity(net: AvgVelocityNet, s, a, t) -> np.ndarray:
    """Instantaneous velocity, i.e. the average velocity over the empty interval ``r = t``."""
    return avg_velocity(net, s, a, t, t)


@dataclass(frozen=True)
class TimeConfig:
    """Training-time distribution over ``(r, t)``.

    Two uniforms are sorted into ``r <= t``; with probability ``p_equal`` the
    pair collapses to ``r = t``. Both ends are clipped to ``[t_min, t_max]``
    so that ``1/t`` and ``1/(1-t)`` stay bounded downstream.
    """

    p_equal: float = 0.5
    t_min: float = 1e-3
    t_max: float = 1.0 - 1e-3


@dataclass(frozen=True)
class TimePair:
    r: np.ndarray | float
    t: np.ndarray | float


def sample_time_pair(rng: np.random.Generator, config: TimeConfig | None = None, size: int | None = None) -> TimePair:
    cfg = config or TimeConfig()
    n = 1 if size is None else size
    u = rng.uniform(size=(n, 2))
    t = u.max(axis=1)
    r = u.min(axis=1)
    equal = rng.uniform(size=n) < cfg.p_equal
    r = np.where(equal, t, r)
    t = np.clip(t, cfg.t_min, cfg.t_max)
    r = np.clip(r, cfg.t_min, cfg.t_max)
    if size is None:
        return TimePair(float(r[0]), float(t[0]))
    return TimePair(r, t)


@dataclass
class SampledAction:
    action: np.ndarray
    log_likelihood: np.ndarray | float
    trajectory: list = field(default_factory=list)  # [(a_{t_i}, t_i)] for i = T..0


def sample_action(
    net: AvgVelocityNet,
    divnet: AvgDivergenceNet | None,
    s,
    T: int = 2,
    rng: np.random.Generator | None = None,
    prior_sample=None,
) -> SampledAction:
    """Few-step MeanFlow sampling with the divergence-network log-likelihood.

    ``s`` is a single state ``(ds,)`` or a batch ``(B, ds)``. The prior draw
    ``a_1 ~ N(0, I)`` comes from ``rng`` unless ``prior_sample`` is given.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    s = np.asarray(s, dtype=np.float64)
    single = s.ndim == 1
    s2 = np.atleast_2d(s)
    if prior_sample is None:
        a = rng.standard_normal((s2.shape[0], net.action_dim))
    else:
        a = np.atleast_2d(np.asarray(prior_sample, dtype=np.float64)).copy()
    prior_logp = std_normal_logpdf(a)
    trajectory = [(a, 1.0)]
    for i in range(T, 0, -1):
        t_hi, t_lo = i / T, (i - 1) / T
        a = a - avg_velocity(net, s2, a, t_lo, t_hi) / T
        if not np.all(np.isfinite(a)):
            raise NonFiniteError(f"non-finite action at sampling step i={i}", step=i)
        trajectory.append((a, t_lo))
    logp = trajectory_log_likelihood(divnet, s2, trajectory, prior_logp, T)
    if single:
        return SampledAction(a[0], float(logp[0]), [(x[0], tt) for x, tt in trajectory])
    return SampledAction(a, logp, trajectory)


def meanflow_target(net: AvgVelocityNet, s, a_t, r, t, v_hat) -> np.ndarray:
    """``v_hat - (t - r) * (v_hat . d_a u + d_t u)``; treat the result as a constant."""
    _, du = directional(net, s, a_t, r, t, v_hat, 0.0, 1.0)
    _, _, r2, t2, single = as_batch(net, s, a_t, r, t)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    tgt = np.atleast_2d(v_hat) - (t2 - r2)[:, None] * np.atleast_2d(du)
    return tgt[0] if single else tgt


def policy_update(net: AvgVelocityNet, optimizer: Adam, s, a_t, r, t, v_hat) -> float:
    """One regression step of ``u_theta(s, a_t, r, t)`` onto the MeanFlow target built from ``v_hat``."""
    target = meanflow_target(net, s, a_t, r, t, v_hat)
    return regress(net, optimizer, s, a_t, r, t, target)
