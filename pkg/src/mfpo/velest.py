"""Instantaneous-velocity estimation for the Boltzmann policy target.

The target conditional is ``pi(a_0 | a_t, s) ∝ exp(Q(s, a_0)/alpha) N(a_0 | a_t/(1-t), (t/(1-t))^2 I)``
and the marginal velocity is its expectation of ``(a_t - a_0)/t``. Two
proposals feed self-normalized importance sampling (SNIS): the current policy
and the Gaussian factor above. Their estimates are blended with weights
proportional to each one's Kish effective sample size.

Everything works on arrays with arbitrary leading batch axes: samples are
``(..., K, da)``, log-weights ``(..., K)``, ``a_t`` is ``(..., da)`` and ``t``
is ``(...)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .meanflow import sample_action
from .networks import AvgDivergenceNet, AvgVelocityNet
from .stats import isotropic_normal_logpdf

POLICY = "policy"
GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class ProposalBatch:
    samples: np.ndarray
    log_proposal: np.ndarray
    source: str

    @property
    def num_samples(self) -> int:
        return self.samples.shape[-2]


@dataclass(frozen=True)
class SnisResult:
    velocity: np.ndarray
    ess: np.ndarray
    normalized_weights: np.ndarray


@dataclass(frozen=True)
class VelocityEstimate:
    velocity: np.ndarray
    component_ess: np.ndarray  # (..., 2); zero for a skipped proposal
    combination_weights: np.ndarray  # (..., 2)


def conditional_gaussian_params(a_t, t) -> tuple[np.ndarray, np.ndarray]:
    """Mean ``a_t/(1-t)`` and std ``t/(1-t)`` of the Gaussian factor of the target conditional."""
    a_t = np.asarray(a_t, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return a_t / (1.0 - t)[..., None], t / (1.0 - t)


def gaussian_proposal(a_t, t, K: int, rng: np.random.Generator, t_min: float = 1e-3, t_max: float = 1.0 - 1e-3) -> ProposalBatch:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < t_min * (1 - 1e-12)) or np.any(t > t_max * (1 + 1e-12)):
        raise ValueError(f"t must lie in [{t_min}, {t_max}], got range [{t.min()}, {t.max()}]")
    a_t = np.asarray(a_t, dtype=np.float64)
    mean, std = conditional_gaussian_params(a_t, t)
    shape = a_t.shape[:-1] + (K, a_t.shape[-1])
    samples = mean[..., None, :] + std[..., None, None] * rng.standard_normal(shape)
    logq = isotropic_normal_logpdf(samples, mean[..., None, :], np.broadcast_to(std[..., None], shape[:-1]))
    return ProposalBatch(samples, logq, GAUSSIAN)


def policy_proposal(
    policy: AvgVelocityNet,
    divnet: AvgDivergenceNet | None,
    s,
    K: int,
    T: int,
    rng: np.random.Generator,
) -> ProposalBatch:
    """``K`` policy samples per state with their divergence-network log-likelihoods."""
    s = np.asarray(s, dtype=np.float64)
    s2 = np.atleast_2d(s)
    b = s2.shape[0]
    out = sample_action(policy, divnet, np.repeat(s2, K, axis=0), T, rng)
    samples = out.action.reshape(b, K, -1)
    logq = np.asarray(out.log_likelihood).reshape(b, K)
    if s.ndim == 1:
        samples, logq = samples[0], logq[0]
    return ProposalBatch(samples, logq, POLICY)


def conditional_log_weight(q_value, alpha: float, source: str, a_0, a_t, t, log_proposal) -> np.ndarray:
    """Unnormalized log importance weight of ``a_0`` for the target conditional.

    For the Gaussian proposal the Gaussian factor cancels and the weight is
    ``Q/alpha``. For the policy proposal it does not, so the Gaussian
    log-density is added and the proposal log-density subtracted.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    lw = np.asarray(q_value, dtype=np.float64) / alpha
    if source == GAUSSIAN:
        return lw
    if source != POLICY:
        raise ValueError(f"unknown proposal source {source!r}")
    a_0 = np.asarray(a_0, dtype=np.float64)
    mean, std = conditional_gaussian_params(a_t, t)
    log_gauss = isotropic_normal_logpdf(a_0, mean[..., None, :], np.broadcast_to(std[..., None], a_0.shape[:-1]))
    return lw + log_gauss - np.asarray(log_proposal, dtype=np.float64)


def normalize_log_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=np.float64)
    if np.any(np.all(np.isneginf(lw), axis=-1)):
        raise ValueError("all log-weights are -inf; cannot normalize")
    if np.any(np.isnan(lw)) or np.any(np.isposinf(lw)):
        raise ValueError("log-weights contain NaN or +inf")
    return np.exp(lw - logsumexp(lw, axis=-1, keepdims=True))


def kish_ess(weights) -> np.ndarray:
    """``(sum w)^2 / sum w^2`` for raw (unnormalized, non-negative) weights."""
    w = np.asarray(weights, dtype=np.float64)
    return np.sum(w, axis=-1) ** 2 / np.sum(w * w, axis=-1)


def snis_estimate(batch: ProposalBatch, log_weights, a_t, t) -> SnisResult:
    w = normalize_log_weights(log_weights)
    a_t = np.asarray(a_t, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    cond_vel = (a_t[..., None, :] - batch.samples) / t[..., None, None]
    velocity = np.sum(w[..., None] * cond_vel, axis=-2)
    ess = 1.0 / np.sum(w * w, axis=-1)
    # rounding can push 1/sum(w^2) a hair outside [1, K]
    ess = np.clip(ess, 1.0, w.shape[-1])
    return SnisResult(velocity, ess, w)


def combined_velocity(r1: SnisResult, r2: SnisResult) -> VelocityEstimate:
    """ESS-weighted convex combination ``sum_k ESS_k / (ESS_1 + ESS_2) * v_k``."""
    if r1.velocity.shape != r2.velocity.shape:
        raise ValueError("velocity estimates have different shapes")
    ess = np.stack([np.asarray(r1.ess, dtype=np.float64), np.asarray(r2.ess, dtype=np.float64)], axis=-1)
    lam = ess / ess.sum(axis=-1, keepdims=True)
    velocity = lam[..., 0:1] * r1.velocity + lam[..., 1:2] * r2.velocity
    return VelocityEstimate(velocity, ess, lam)


def _q_on_samples(q_fn: Callable, s, samples: np.ndarray) -> np.ndarray:
    lead = samples.shape[:-1]
    s = np.asarray(s, dtype=np.float64)
    s_rep = np.broadcast_to(s[..., None, :], lead + (s.shape[-1],)).reshape(-1, s.shape[-1])
    return np.asarray(q_fn(s_rep, samples.reshape(-1, samples.shape[-1])), dtype=np.float64).reshape(lead)


def velocity_from_proposals(
    q_fn: Callable,
    s,
    a_t,
    t,
    alpha: float,
    proposals: Sequence[ProposalBatch],
) -> tuple[VelocityEstimate, list[SnisResult]]:
    """SNIS per proposal, then the ESS-weighted blend.

    ``proposals`` is ordered ``(policy, gaussian)``; either may be missing. With
    a single proposal the blend degenerates to that proposal's estimate.
    """
    results = []
    for batch in proposals:
        q = _q_on_samples(q_fn, s, batch.samples)
        lw = conditional_log_weight(q, alpha, batch.source, batch.samples, a_t, t, batch.log_proposal)
        results.append(snis_estimate(batch, lw, a_t, t))
    if not results:
        raise ValueError("at least one proposal is required")
    if len(results) == 1:
        only = results[0]
        zeros = np.zeros_like(np.asarray(only.ess, dtype=np.float64))
        ones = np.ones_like(zeros)
        if proposals[0].source == POLICY:
            ess, lam = np.stack([only.ess, zeros], -1), np.stack([ones, zeros], -1)
        else:
            ess, lam = np.stack([zeros, only.ess], -1), np.stack([zeros, ones], -1)
        return VelocityEstimate(only.velocity, ess, lam), results
    return combined_velocity(results[0], results[1]), results


def estimate_instantaneous_velocity(
    policy: AvgVelocityNet,
    divnet: AvgDivergenceNet | None,
    critic: Callable,
    s,
    a_t,
    t,
    alpha: float,
    K1: int = 16,
    K2: int = 32,
    rng: np.random.Generator | None = None,
    T: int = 2,
    t_min: float = 1e-3,
    t_max: float = 1.0 - 1e-3,
) -> VelocityEstimate:
    """Adaptive two-proposal estimate of the target's instantaneous velocity at ``(s, a_t, t)``.

    ``critic`` is any callable ``(states (n, ds), actions (n, da)) -> Q (n,)``;
    a :class:`mfpo.critic.CategoricalCritic` qualifies. Q values are treated as
    constants (no gradient flows through the weights).
    """
    if K1 < 0 or K2 < 0 or K1 + K2 < 1:
        raise ValueError(f"need K1, K2 >= 0 and K1 + K2 >= 1, got {K1}, {K2}")
    proposals = []
    if K1 > 0:
        proposals.append(policy_proposal(policy, divnet, s, K1, T, rng))
    if K2 > 0:
        proposals.append(gaussian_proposal(a_t, t, K2, rng, t_min, t_max))
    est, _ = velocity_from_proposals(critic, s, a_t, t, alpha, proposals)
    return est
