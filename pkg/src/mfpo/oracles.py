"""Closed-form references used by tests, the acceptance suite and the CLI diagnostics.

* Gaussian flow: prior and target both ``N(0, I)`` under the linear path
  ``x_t = (1 - t) x_0 + t x_1``. With ``c_t^2 = (1-t)^2 + t^2`` the marginal is
  ``N(0, c_t^2 I)``, the flow map is ``x_r = (c_r / c_t) x_t`` and everything
  (velocity, average velocity, divergence integrals) is analytic.
* Linear-Gaussian bandit: ``Q(a) = -|a - mu|^2 / (2 sigma^2)``, whose Boltzmann
  policy at temperature ``alpha`` is ``N(mu, alpha sigma^2 I)``.
* Euler likelihood: many-step Euler integration of the learned instantaneous
  velocity with the exact Jacobian trace.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import Adam, MlpSpec, ParamSet
from .divnet import divnet_update
from .meanflow import TimeConfig, policy_update, sample_time_pair
from .networks import AvgDivergenceNet, AvgVelocityNet, directional, evaluate
from .stats import isotropic_normal_logpdf, std_normal_logpdf
from .velest import POLICY, ProposalBatch

# ---------------------------------------------------------------------------
# Gaussian flow


def gaussian_flow_c2(t):
    t = np.asarray(t, dtype=np.float64)
    return (1.0 - t) ** 2 + t**2


def gaussian_flow_velocity(x, t) -> np.ndarray:
    """``v(x, t) = (2t - 1) / c_t^2 * x``."""
    t = np.asarray(t, dtype=np.float64)
    return ((2.0 * t - 1.0) / gaussian_flow_c2(t))[..., None] * np.asarray(x)


def gaussian_flow_avg_velocity(x, r, t) -> np.ndarray:
    """``u(x, r, t) = x (1 - c_r / c_t) / (t - r)``, with the ``r -> t`` limit ``v(x, t)``."""
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    same = np.isclose(r, t, rtol=0, atol=1e-12)
    gap = np.where(same, 1.0, t - r)
    ratio = np.sqrt(gaussian_flow_c2(r) / gaussian_flow_c2(t))
    avg = ((1.0 - ratio) / gap)[..., None] * x
    return np.where(same[..., None], gaussian_flow_velocity(x, t), avg)


def gaussian_flow_avg_divergence(r, t, dim: int = 2) -> np.ndarray:
    """``(1/(t-r)) * integral_r^t dim (2 tau - 1)/c_tau^2 dtau = dim/2 * [ln c^2]_r^t / (t - r)``."""
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    same = np.isclose(r, t, rtol=0, atol=1e-12)
    gap = np.where(same, 1.0, t - r)
    avg = 0.5 * dim * (np.log(gaussian_flow_c2(t)) - np.log(gaussian_flow_c2(r))) / gap
    inst = dim * (2.0 * t - 1.0) / gaussian_flow_c2(t)
    return np.where(same, inst, avg)


def train_on_gaussian_flow(
    policy: AvgVelocityNet,
    divnet: AvgDivergenceNet,
    steps: int,
    batch_size: int,
    rng: np.random.Generator,
    lr: float = 1e-3,
    time_config: TimeConfig | None = None,
    num_probes: int = 2,
    policy_opt: Adam | None = None,
    divnet_opt: Adam | None = None,
) -> dict:
    """Fit both networks to the ``N(0, I) -> N(0, I)`` flow.

    The policy regresses onto the MeanFlow target built from the analytic
    marginal velocity; the divergence network follows its usual training on
    exact target samples, so it learns the divergence of the *learned* flow.
    """
    cfg = time_config or TimeConfig()
    d = policy.action_dim
    s = np.zeros((batch_size, policy.state_dim))
    popt = policy_opt or Adam(policy.params, lr=lr)
    dopt = divnet_opt or Adam(divnet.params, lr=lr)
    ploss, dloss = [], []
    for _ in range(steps):
        pair = sample_time_pair(rng, cfg, size=batch_size)
        x0 = rng.standard_normal((batch_size, d))
        x1 = rng.standard_normal((batch_size, d))
        xt = (1.0 - pair.t)[:, None] * x0 + pair.t[:, None] * x1
        v_hat = gaussian_flow_velocity(xt, pair.t)
        ploss.append(policy_update(policy, popt, s, xt, pair.r, pair.t, v_hat))
        x0 = rng.standard_normal((batch_size, d))
        dloss.append(divnet_update(divnet, dopt, policy, s, x0, rng, num_probes, cfg))
    return {"policy_loss": np.asarray(ploss), "divnet_loss": np.asarray(dloss)}


# ---------------------------------------------------------------------------
# linear-Gaussian bandit


@dataclass(frozen=True)
class LinearGaussianOracle:
    mu: np.ndarray
    sigma: float = 1.0
    alpha: float = 1.0

    @property
    def dim(self) -> int:
        return int(np.size(self.mu))

    @property
    def target_std(self) -> float:
        return float(np.sqrt(self.alpha) * self.sigma)

    def q(self, s, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        return -np.sum((a - self.mu) ** 2, axis=-1) / (2.0 * self.sigma**2)

    def sample_target(self, rng, shape) -> np.ndarray:
        return self.mu + self.target_std * rng.standard_normal((*shape, self.dim))

    def sample_a_t(self, t, rng) -> np.ndarray:
        """Draws ``a_t = (1 - t) a_0 + t a_1`` with ``a_0`` from the Boltzmann target."""
        t = np.asarray(t, dtype=np.float64)
        a0 = self.sample_target(rng, t.shape)
        a1 = rng.standard_normal(a0.shape)
        return (1.0 - t)[..., None] * a0 + t[..., None] * a1

    def marginal_velocity(self, a_t, t) -> np.ndarray:
        """``E[a_1 - a_0 | a_t]`` for ``a_0 ~ N(mu, s^2 I)``, ``a_1 ~ N(0, I)``."""
        t = np.asarray(t, dtype=np.float64)[..., None]
        s2 = self.target_std**2
        var_t = (1.0 - t) ** 2 * s2 + t**2
        gain = (t - (1.0 - t) * s2) / var_t
        return -self.mu + gain * (np.asarray(a_t) - (1.0 - t) * self.mu)

    def exact_policy_proposal(self, rng, batch_shape, K: int) -> ProposalBatch:
        """Stand-in for a perfectly trained policy: exact target draws with exact log-densities."""
        samples = self.sample_target(rng, (*batch_shape, K))
        logq = isotropic_normal_logpdf(samples, self.mu, np.full(samples.shape[:-1], self.target_std))
        return ProposalBatch(samples, logq, POLICY)


# ---------------------------------------------------------------------------
# Euler reference likelihood


def exact_divergence(policy: AvgVelocityNet, s, a, t) -> np.ndarray:
    """Trace of ``d v / d a`` via one JVP per action coordinate."""
    a = np.atleast_2d(a)
    d = policy.action_dim
    total = np.zeros(a.shape[0])
    for j in range(d):
        e = np.zeros_like(a)
        e[:, j] = 1.0
        _, jv = directional(policy, s, a, t, t, e, 0.0, 0.0)
        total += jv[:, j]
    return total


def euler_sample_log_likelihood(policy: AvgVelocityNet, s, prior_sample, steps: int = 1000):
    """Integrate ``da/dt = v(s, a, t)`` from ``t = 1`` to ``0`` with ``steps`` Euler steps.

    Returns ``(a_0, log_likelihood)`` where the log-likelihood accumulates the
    exact instantaneous divergence along the path.
    """
    a = np.atleast_2d(np.asarray(prior_sample, dtype=np.float64)).copy()
    logp = std_normal_logpdf(a)
    h = 1.0 / steps
    for i in range(steps, 0, -1):
        t = i * h
        logp = logp + h * exact_divergence(policy, s, a, t)
        a = a - h * evaluate(policy, s, a, t, t)
    return a, logp


# ---------------------------------------------------------------------------
# linear velocity fields


def linear_velocity_net(A, state_dim: int = 0, shift: float = 50.0) -> AvgVelocityNet:
    """Network computing exactly ``u(s, a, r, t) = A a`` for ``|a_i| < shift``.

    One relu layer copies ``a + shift`` (always active, so its derivative is
    exactly 1) and the output layer applies ``A`` and removes the shift.
    """
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    n_in = state_dim + d + 2
    w1 = np.zeros((d, n_in))
    w1[:, state_dim : state_dim + d] = np.eye(d)
    b1 = np.full(d, shift)
    params = ParamSet(MlpSpec(n_in, (d,), d, "relu"), (w1, A.copy()), (b1, -A @ b1))
    return AvgVelocityNet(state_dim, d, params)


# ---------------------------------------------------------------------------
# categorical projection


def brute_force_projection(atoms, shifted_atoms, probs) -> np.ndarray:
    """Reference projection: loop over every (source, support) pair with the triangular kernel."""
    atoms = np.asarray(atoms, dtype=np.float64)
    dz = atoms[1] - atoms[0]
    out = np.zeros(atoms.size)
    for zj, pj in zip(np.asarray(shifted_atoms, dtype=np.float64), np.asarray(probs, dtype=np.float64)):
        zj = min(max(zj, atoms[0]), atoms[-1])
        for i in range(atoms.size):
            out[i] += pj * max(0.0, 1.0 - abs(zj - atoms[i]) / dz)
    return out
