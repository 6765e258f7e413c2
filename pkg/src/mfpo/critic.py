"""Categorical (C51-style) soft critic.

The scalar soft Bellman target ``r + gamma * (Q(s', a') - alpha * log pi(a'|s'))``
is realized distributionally: every target atom is shifted to
``r + gamma * (1 - done) * (z_j - alpha * log pi(a'|s'))`` and projected back onto
the fixed support, so the projected distribution's mean is the scalar target
(up to clamping at the support edges).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .diffcore import (
    Adam,
    DimensionError,
    MlpSpec,
    NonFiniteError,
    ParamSet,
    backward_from_tape,
    forward_with_tape,
    mlp_forward,
    mlp_init,
)
from .meanflow import sample_action


@dataclass
class CategoricalCritic:
    state_dim: int
    action_dim: int
    atoms: np.ndarray
    params: ParamSet

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        m = self.atoms.size
        if m < 2:
            raise ValueError("need at least two atoms")
        gaps = np.diff(self.atoms)
        if np.any(gaps <= 0) or not np.allclose(gaps, gaps[0], rtol=1e-9, atol=0):
            raise ValueError("atoms must be strictly increasing and uniformly spaced")
        if self.params.spec.input_dim != self.state_dim + self.action_dim or self.params.spec.output_dim != m:
            raise DimensionError("logits network shape does not match (state_dim + action_dim) -> num_atoms")

    @classmethod
    def create(cls, state_dim, action_dim, v_min, v_max, num_atoms=51, hidden=(256, 256, 256), activation="gelu", seed=0):
        spec = MlpSpec(state_dim + action_dim, tuple(hidden), num_atoms, activation)
        return cls(state_dim, action_dim, np.linspace(v_min, v_max, num_atoms), mlp_init(spec, seed))

    @property
    def spacing(self) -> float:
        return float(self.atoms[1] - self.atoms[0])

    def with_params(self, params: ParamSet) -> "CategoricalCritic":
        return CategoricalCritic(self.state_dim, self.action_dim, self.atoms, params)

    def header(self) -> dict:
        return {
            "kind": "categorical_critic",
            "state_dim": self.state_dim,
            "action_dim": self.action_dim,
            "v_min": float(self.atoms[0]),
            "v_max": float(self.atoms[-1]),
            "num_atoms": int(self.atoms.size),
        }

    def __call__(self, s, a) -> np.ndarray:
        return q_value(self, s, a)


def _critic_input(critic: CategoricalCritic, s, a) -> tuple[np.ndarray, bool]:
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape[0] == 1 and a.shape[0] > 1:
        s = np.broadcast_to(s, (a.shape[0], s.shape[1]))
    if s.shape[1] != critic.state_dim or a.shape[1] != critic.action_dim or s.shape[0] != a.shape[0]:
        raise DimensionError(f"critic got states {s.shape} and actions {a.shape}")
    return np.concatenate([s, a], axis=1), single


def critic_logits(critic: CategoricalCritic, s, a) -> np.ndarray:
    x, single = _critic_input(critic, s, a)
    out = mlp_forward(critic.params, x)
    return out[0] if single else out


def return_distribution(critic: CategoricalCritic, s, a) -> np.ndarray:
    return softmax(critic_logits(critic, s, a), axis=-1)


def q_value(critic: CategoricalCritic, s, a):
    """Mean of the return distribution; a float for one action, ``(B,)`` for a batch."""
    q = return_distribution(critic, s, a) @ critic.atoms
    return float(q) if np.ndim(q) == 0 else q


def project_categorical(atoms, shifted_atoms, probs) -> np.ndarray:
    """Project mass sitting on ``shifted_atoms`` onto the uniform support ``atoms``.

    Each shifted atom's mass is split linearly between its two neighbouring
    support atoms; anything outside ``[z_1, z_M]`` is clamped to the edge.
    Works on ``(M,)`` or ``(B, M)`` inputs.
    """
    atoms = np.asarray(atoms, dtype=np.float64)
    shifted = np.asarray(shifted_atoms, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    shifted2 = np.atleast_2d(shifted)
    probs2 = np.atleast_2d(probs)
    shifted2 = np.broadcast_to(shifted2, probs2.shape)
    n, m = probs2.shape
    v_min, v_max = atoms[0], atoms[-1]
    dz = (v_max - v_min) / (m - 1)
    b = (np.clip(shifted2, v_min, v_max) - v_min) / dz
    b = np.clip(b, 0.0, m - 1)
    lo = np.floor(b).astype(np.int64)
    hi = np.minimum(lo + 1, m - 1)
    frac = b - lo
    out = np.zeros((n, m))
    rows = np.repeat(np.arange(n), m)
    np.add.at(out, (rows, lo.ravel()), (probs2 * (1.0 - frac)).ravel())
    np.add.at(out, (rows, hi.ravel()), (probs2 * frac).ravel())
    return out[0] if single else out


def soft_target_distribution(atoms, next_probs, reward, done, gamma, alpha, next_log_prob) -> np.ndarray:
    """Projected distribution of ``r + gamma (1 - done) (Z' - alpha log pi(a'|s'))``."""
    atoms = np.asarray(atoms, dtype=np.float64)
    reward = np.asarray(reward, dtype=np.float64).reshape(-1, 1)
    cont = 1.0 - np.asarray(done, dtype=np.float64).reshape(-1, 1)
    logp = np.asarray(next_log_prob, dtype=np.float64).reshape(-1, 1)
    shifted = reward + gamma * cont * (atoms[None, :] - alpha * logp)
    return project_categorical(atoms, shifted, np.atleast_2d(next_probs))


@dataclass(frozen=True)
class TargetCriticState:
    params: ParamSet
    tau: float = 0.005


def polyak_update(target: TargetCriticState, online: ParamSet) -> TargetCriticState:
    tau = target.tau
    return TargetCriticState(target.params.zip_map(online, lambda tp, op: tau * op + (1.0 - tau) * tp), tau)


@dataclass
class BellmanTarget:
    probs: np.ndarray
    next_actions: np.ndarray
    next_log_prob: np.ndarray


def bellman_target(
    critic: CategoricalCritic,
    target: TargetCriticState,
    policy,
    divnet,
    alpha: float,
    gamma: float,
    batch: dict,
    rng: np.random.Generator,
    T: int = 2,
) -> BellmanTarget:
    """Sample ``a' ~ pi(.|s')`` with its log-likelihood and build the projected soft target.

    ``batch`` holds arrays ``s_next``, ``reward`` and ``done``.
    """
    nxt = sample_action(policy, divnet, batch["s_next"], T, rng)
    next_probs = return_distribution(critic.with_params(target.params), batch["s_next"], nxt.action)
    probs = soft_target_distribution(
        critic.atoms, next_probs, batch["reward"], batch["done"], gamma, alpha, nxt.log_likelihood
    )
    return BellmanTarget(probs, nxt.action, np.asarray(nxt.log_likelihood))


def cross_entropy_loss_and_grad(critic: CategoricalCritic, s, a, target_probs):
    x, _ = _critic_input(critic, s, a)
    logits, tape = forward_with_tape(critic.params, x)
    target_probs = np.atleast_2d(target_probs)
    logp = log_softmax(logits, axis=1)
    loss = float(-np.mean(np.sum(target_probs * logp, axis=1)))
    # d/dlogits of -sum p log softmax = softmax * sum(p) - p
    cot = (np.exp(logp) * target_probs.sum(axis=1, keepdims=True) - target_probs) / x.shape[0]
    grads, _ = backward_from_tape(critic.params, tape, cot)
    return loss, grads


def critic_update(critic: CategoricalCritic, optimizer: Adam, s, a, target_probs) -> float:
    """One Adam step on the mean cross-entropy to the (constant) target distributions."""
    loss, grads = cross_entropy_loss_and_grad(critic, s, a, target_probs)
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite critic loss ({loss})")
    critic.params = optimizer.step(critic.params, grads)
    return loss
