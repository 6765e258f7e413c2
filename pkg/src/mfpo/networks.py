"""Conditional networks ``f(s, a, r, t)`` used by the policy and the divergence model.

Both the average velocity network and the average divergence network take
the same input layout: ``[state, action, r, t]`` concatenated into one vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import (
    DimensionError,
    Adam,
    DualVector,
    MlpSpec,
    NonFiniteError,
    ParamSet,
    backward_from_tape,
    forward_with_tape,
    mlp_forward,
    mlp_init,
    mlp_jvp,
)


@dataclass
class ConditionalNet:
    state_dim: int
    action_dim: int
    params: ParamSet

    @property
    def spec(self) -> MlpSpec:
        return self.params.spec


@dataclass
class AvgVelocityNet(ConditionalNet):
    """Average velocity network ``u_theta(s, a_t, r, t)``; output has action dimension."""

    def __post_init__(self):
        if self.spec.input_dim != self.state_dim + self.action_dim + 2:
            raise DimensionError("input_dim must equal state_dim + action_dim + 2")
        if self.spec.output_dim != self.action_dim:
            raise DimensionError("output_dim must equal action_dim")

    @classmethod
    def create(cls, state_dim, action_dim, hidden=(256, 256, 256), activation="gelu", seed=0):
        spec = MlpSpec(state_dim + action_dim + 2, tuple(hidden), action_dim, activation)
        return cls(state_dim, action_dim, mlp_init(spec, seed))

    def header(self) -> dict:
        return {"kind": "avg_velocity", "state_dim": self.state_dim, "action_dim": self.action_dim}


@dataclass
class AvgDivergenceNet(ConditionalNet):
    """Average divergence network ``delta_omega(s, a_t, r, t)`` with scalar output."""

    def __post_init__(self):
        if self.spec.input_dim != self.state_dim + self.action_dim + 2:
            raise DimensionError("input_dim must equal state_dim + action_dim + 2")
        if self.spec.output_dim != 1:
            raise DimensionError("divergence network must have a scalar output")

    @classmethod
    def create(cls, state_dim, action_dim, hidden=(256, 256, 256), activation="gelu", seed=0):
        spec = MlpSpec(state_dim + action_dim + 2, tuple(hidden), 1, activation)
        return cls(state_dim, action_dim, mlp_init(spec, seed))

    def header(self) -> dict:
        return {"kind": "avg_divergence", "state_dim": self.state_dim, "action_dim": self.action_dim}


def as_batch(net: ConditionalNet, s, a, r, t):
    """Broadcast ``(s, a, r, t)`` to 2-D batch arrays.

    Returns ``(s, a, r, t, single)`` with ``s: (B, ds)``, ``a: (B, da)``,
    ``r, t: (B,)`` and ``single`` telling whether the caller passed one
    un-batched action.
    """
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[1] != net.action_dim:
        raise DimensionError(f"action shape {a.shape} incompatible with action_dim={net.action_dim}")
    n = a.shape[0]
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    if s.shape[1] != net.state_dim:
        raise DimensionError(f"state shape {s.shape} incompatible with state_dim={net.state_dim}")
    if s.shape[0] != n:
        if s.shape[0] != 1:
            raise DimensionError(f"state batch {s.shape[0]} does not match action batch {n}")
        s = np.broadcast_to(s, (n, net.state_dim))
    r = np.broadcast_to(np.asarray(r, dtype=np.float64).reshape(-1), (n,))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (n,))
    return s, a, r, t, single


def net_input(s, a, r, t) -> np.ndarray:
    return np.concatenate([s, a, r[:, None], t[:, None]], axis=1)


def evaluate(net: ConditionalNet, s, a, r, t) -> np.ndarray:
    s, a, r, t, single = as_batch(net, s, a, r, t)
    out = mlp_forward(net.params, net_input(s, a, r, t))
    return out[0] if single else out


def directional(net: ConditionalNet, s, a, r, t, da, dr, dt) -> tuple[np.ndarray, np.ndarray]:
    """Value and directional derivative along ``(ds=0, da, dr, dt)`` in one JVP."""
    s, a, r, t, single = as_batch(net, s, a, r, t)
    n = a.shape[0]
    da = np.broadcast_to(np.asarray(da, dtype=np.float64), a.shape)
    dr = np.broadcast_to(np.asarray(dr, dtype=np.float64).reshape(-1), (n,))
    dt = np.broadcast_to(np.asarray(dt, dtype=np.float64).reshape(-1), (n,))
    tangent = net_input(np.zeros_like(s), da, dr, dt)
    out = mlp_jvp(net.params, DualVector(net_input(s, a, r, t), tangent))
    if single:
        return out.value[0], out.tangent[0]
    return out.value, out.tangent


def regress(net: ConditionalNet, optimizer: Adam, s, a, r, t, target) -> float:
    """One Adam step on ``mean_b |net(s, a, r, t) - target|^2``; returns the pre-step loss.

    ``target`` is a constant here, which is how the stop-gradient in the
    MeanFlow-style losses is realized. Raises :class:`NonFiniteError` without
    touching the parameters if the loss is not finite.
    """
    s, a, r, t, _ = as_batch(net, s, a, r, t)
    out, tape = forward_with_tape(net.params, net_input(s, a, r, t))
    diff = out - np.asarray(target, dtype=np.float64).reshape(out.shape)
    loss = float(np.mean(np.sum(diff * diff, axis=1)))
    if not np.isfinite(loss):
        raise NonFiniteError(f"non-finite regression loss ({loss})")
    grads, _ = backward_from_tape(net.params, tape, 2.0 * diff / out.shape[0])
    net.params = optimizer.step(net.params, grads)
    return loss
