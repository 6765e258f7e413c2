"""Average divergence network: Hutchinson divergence, training target and likelihood accumulation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Adam, DimensionError
from .networks import AvgDivergenceNet, AvgVelocityNet, as_batch, directional, evaluate, regress


@dataclass(frozen=True)
class DivergenceEstimate:
    value: np.ndarray | float
    num_probes: int


def sample_probes(rng: np.random.Generator, num_probes: int, shape, kind: str = "gaussian") -> np.ndarray:
    """Draw ``num_probes`` probe vectors of the given shape (zero mean, identity covariance)."""
    size = (num_probes, *np.atleast_1d(shape))
    if kind == "gaussian":
        return rng.standard_normal(size)
    if kind == "rademacher":
        return rng.choice(np.array([-1.0, 1.0]), size=size)
    raise ValueError(f"unknown probe kind {kind!r}")


def hutchinson_divergence(policy: AvgVelocityNet, s, a_t, t, probes) -> DivergenceEstimate:
    """Average of ``eps^T (dv/da) eps`` over the probes, one JVP per probe.

    ``probes`` has shape ``(N, da)`` for a single action or ``(N, B, da)`` for a
    batch; the instantaneous velocity is ``u(s, a, t, t)``.
    """
    s2, a2, _, t2, single = as_batch(policy, s, a_t, 0.0, t)
    probes = np.asarray(probes, dtype=np.float64)
    if probes.ndim == 2 and single:
        probes = probes[:, None, :]
    if probes.ndim != 3 or probes.shape[1:] != a2.shape:
        raise DimensionError(f"probe shape {probes.shape} does not match action batch {a2.shape}")
    n, b, d = probes.shape
    # all probes go through one batched JVP
    _, jv = directional(
        policy,
        np.tile(s2, (n, 1)),
        np.tile(a2, (n, 1)),
        np.tile(t2, n),
        np.tile(t2, n),
        probes.reshape(n * b, d),
        0.0,
        0.0,
    )
    quad = np.sum(probes.reshape(n * b, d) * jv, axis=1).reshape(n, b)
    value = quad.mean(axis=0)
    return DivergenceEstimate(float(value[0]) if single else value, n)


def divnet_target(divnet: AvgDivergenceNet, policy: AvgVelocityNet, s, a_t, r, t, div_hat):
    """``div_hat - (t - r) * (v . d_a delta + d_t delta)`` with ``v = u(s, a_t, t, t)``."""
    v = evaluate(policy, s, a_t, t, t)
    _, dd = directional(divnet, s, a_t, r, t, v, 0.0, 1.0)
    _, _, r2, t2, single = as_batch(divnet, s, a_t, r, t)
    tgt = np.asarray(div_hat, dtype=np.float64).reshape(-1) - (t2 - r2) * np.reshape(dd, (-1,))
    return float(tgt[0]) if single else tgt


def divnet_update(
    divnet: AvgDivergenceNet,
    optimizer: Adam,
    policy: AvgVelocityNet,
    states,
    actions,
    rng: np.random.Generator,
    num_probes: int = 2,
    time_config=None,
    probe_kind: str = "gaussian",
) -> float:
    """Train the divergence network on a batch of ``(s, a_0)`` drawn from the current policy.

    Each element gets its own ``(r, t)``, prior noise ``a_1`` and probes; the
    noisy action is ``a_t = (1 - t) a_0 + t a_1``.
    """
    from .meanflow import TimeConfig, sample_time_pair

    cfg = time_config or TimeConfig()
    s, a0, _, _, _ = as_batch(divnet, states, actions, 0.0, 0.0)
    b = a0.shape[0]
    pair = sample_time_pair(rng, cfg, size=b)
    a1 = rng.standard_normal(a0.shape)
    a_t = (1.0 - pair.t)[:, None] * a0 + pair.t[:, None] * a1
    probes = sample_probes(rng, num_probes, a0.shape, probe_kind)
    div_hat = hutchinson_divergence(policy, s, a_t, pair.t, probes).value
    target = divnet_target(divnet, policy, s, a_t, pair.r, pair.t, div_hat)
    return regress(divnet, optimizer, s, a_t, pair.r, pair.t, np.reshape(target, (b, 1)))


def divergence_increments(divnet: AvgDivergenceNet, s, trajectory, T: int) -> np.ndarray:
    """Per-step terms ``(1/T) * delta(s, a_{t_i}, t_{i-1}, t_i)`` along a sampled trajectory.

    ``trajectory`` is the ``[(a_{t_T}, t_T), ..., (a_{t_0}, t_0)]`` list produced by
    :func:`mfpo.meanflow.sample_action`. Returns shape ``(B, len(trajectory) - 1)``.
    """
    cols = []
    for (a_hi, t_hi), (_, t_lo) in zip(trajectory[:-1], trajectory[1:]):
        delta = evaluate(divnet, s, np.atleast_2d(a_hi), t_lo, t_hi)
        cols.append(delta[:, 0] / T)
    if not cols:
        return np.zeros((np.atleast_2d(trajectory[0][0]).shape[0], 0))
    return np.stack(cols, axis=1)


def trajectory_log_likelihood(divnet: AvgDivergenceNet | None, s, trajectory, prior_logp, T: int):
    """``prior_logp + (1/T) * sum_i delta(s, a_{t_i}, t_{i-1}, t_i)``.

    Passing ``divnet=None`` drops the divergence term (likelihood = prior).
    """
    prior_logp = np.asarray(prior_logp, dtype=np.float64)
    if divnet is None:
        return prior_logp
    total = divergence_increments(divnet, s, trajectory, T).sum(axis=1)
    return prior_logp + (total[0] if prior_logp.ndim == 0 else total)
