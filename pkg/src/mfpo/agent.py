"""MFPO training loop: replay, soft policy evaluation, MeanFlow policy improvement and temperature tuning."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .critic import (
    CategoricalCritic,
    TargetCriticState,
    bellman_target,
    critic_update,
    polyak_update,
)
from .diffcore import Adam, NonFiniteError, load_params, save_params
from .divnet import divnet_update
from .envs import make_env
from .meanflow import TimeConfig, policy_update, sample_action, sample_time_pair
from .networks import AvgDivergenceNet, AvgVelocityNet
from .velest import estimate_instantaneous_velocity

log = logging.getLogger(__name__)

# Support ranges for the categorical critic; none of these tasks state one.
DEFAULT_ATOM_RANGE = {
    "gmm_bandit": (-25.0, 5.0),
    "quadratic_bandit": (-15.0, 5.0),
    "point_mass": (-20.0, 100.0),
}

METRIC_KEYS = ("step", "critic_loss", "policy_loss", "divnet_loss", "alpha", "entropy", "ess1", "ess2", "eval_return")


@dataclass
class TrainConfig:
    env: str = ""
    env_params: dict = field(default_factory=dict)
    seed: int = 0
    total_steps: int = 50_000
    warmup_steps: int = 1000
    batch_size: int = 256
    utd_ratio: int = 1
    buffer_capacity: int = 100_000
    # policy / likelihood
    T: int = 2
    K1: int = 16
    K2: int = 32
    num_probes: int = 2
    probe_kind: str = "gaussian"
    p_equal: float = 0.5
    t_min: float = 1e-3
    t_max: float = 1.0 - 1e-3
    # optimisation
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    divnet_lr: float = 3e-4
    alpha_lr: float = 3e-4
    # temperature
    alpha_init: float = 0.2
    auto_alpha: bool = True
    rho: float = 0.5
    # networks
    hidden_widths: list = field(default_factory=lambda: [256, 256, 256])
    activation: str = "gelu"
    num_atoms: int = 51
    v_min: float | None = None
    v_max: float | None = None
    # evaluation
    num_candidates: int = 10
    eval_every: int = 0
    eval_episodes: int = 5
    checkpoint_every: int = 0

    def validate(self) -> "TrainConfig":
        if not self.env:
            raise ValueError("config must name an env")
        positive = ["total_steps", "batch_size", "utd_ratio", "buffer_capacity", "T", "num_probes", "num_atoms",
                    "num_candidates", "eval_episodes", "actor_lr", "critic_lr", "divnet_lr", "alpha_init"]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.K1 < 0 or self.K2 < 0 or self.K1 + self.K2 < 1:
            raise ValueError("need K1, K2 >= 0 with K1 + K2 >= 1")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0 < self.t_min < self.t_max < 1:
            raise ValueError("need 0 < t_min < t_max < 1")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        return self

    @property
    def time_config(self) -> TimeConfig:
        return TimeConfig(self.p_equal, self.t_min, self.t_max)

    def atom_range(self) -> tuple[float, float]:
        lo, hi = DEFAULT_ATOM_RANGE.get(self.env, (-100.0, 100.0))
        return (lo if self.v_min is None else self.v_min, hi if self.v_max is None else self.v_max)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# replay


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling over the filled slots."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        for x in (tr.s, tr.a, tr.r, tr.s_next):
            if not np.all(np.isfinite(x)):
                raise ValueError("transition contains non-finite values")
        i = self.cursor
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = tr.s, tr.a, tr.r, tr.s_next, float(tr.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> dict:
        idx = self.sample_indices(n, rng)
        return {"s": self.s[idx], "a": self.a[idx], "reward": self.r[idx], "s_next": self.s_next[idx], "done": self.done[idx]}


# ---------------------------------------------------------------------------
# temperature


@dataclass(frozen=True)
class AlphaState:
    log_alpha: float
    learning_rate: float
    target_entropy: float

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def temperature_update(state: AlphaState, entropy_estimate: float) -> AlphaState:
    """Gradient step on ``L = alpha (H - H_target)`` w.r.t. ``log alpha``."""
    grad = state.alpha * (entropy_estimate - state.target_entropy)
    return dataclasses.replace(state, log_alpha=state.log_alpha - state.learning_rate * grad)


def estimate_entropy(policy: AvgVelocityNet, divnet: AvgDivergenceNet, states, rng: np.random.Generator, T: int = 2) -> float:
    """Negative mean log-likelihood of one fresh policy action per state."""
    states = np.atleast_2d(states)
    if states.shape[0] == 0:
        raise ValueError("need at least one state")
    return float(-np.mean(sample_action(policy, divnet, states, T, rng).log_likelihood))


# ---------------------------------------------------------------------------
# policy improvement


@dataclass(frozen=True)
class ImprovementResult:
    policy_loss: float
    divnet_loss: float
    ess1: float
    ess2: float


def improvement_step(
    policy: AvgVelocityNet,
    policy_opt: Adam,
    divnet: AvgDivergenceNet,
    divnet_opt: Adam,
    q_fn: Callable,
    alpha: float,
    states,
    rng: np.random.Generator,
    *,
    T: int = 2,
    K1: int = 16,
    K2: int = 32,
    num_probes: int = 2,
    time_config: TimeConfig | None = None,
    probe_kind: str = "gaussian",
    velocity_estimator: Callable | None = None,
) -> ImprovementResult:
    """One policy-improvement block: velocity targets, MeanFlow regression, then the divergence net.

    ``a_t`` is formed from a fresh policy sample ``a_0`` and fresh prior noise.
    ``velocity_estimator(s, a_t, t) -> VelocityEstimate`` replaces the SNIS
    estimator when given.
    """
    cfg = time_config or TimeConfig()
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    b = states.shape[0]
    pair = sample_time_pair(rng, cfg, size=b)
    a0 = sample_action(policy, None, states, T, rng).action
    a1 = rng.standard_normal(a0.shape)
    a_t = (1.0 - pair.t)[:, None] * a0 + pair.t[:, None] * a1
    if velocity_estimator is None:
        est = estimate_instantaneous_velocity(
            policy, divnet, q_fn, states, a_t, pair.t, alpha, K1, K2, rng, T, cfg.t_min, cfg.t_max
        )
    else:
        est = velocity_estimator(states, a_t, pair.t)
    ploss = policy_update(policy, policy_opt, states, a_t, pair.r, pair.t, est.velocity)
    fresh = sample_action(policy, None, states, T, rng).action
    dloss = divnet_update(divnet, divnet_opt, policy, states, fresh, rng, num_probes, cfg, probe_kind)
    return ImprovementResult(ploss, dloss, float(np.mean(est.component_ess[..., 0])), float(np.mean(est.component_ess[..., 1])))


def select_action_eval(policy, divnet, critic, s, num_candidates: int, rng: np.random.Generator, T: int = 2) -> np.ndarray:
    """Sample candidates from the policy and keep the one the critic rates highest (first on ties)."""
    if num_candidates < 1:
        raise ValueError("need at least one candidate")
    s = np.asarray(s, dtype=np.float64).reshape(1, -1)
    cands = sample_action(policy, None, np.repeat(s, num_candidates, axis=0), T, rng).action
    if num_candidates == 1:
        return cands[0]
    q = np.asarray(critic(np.repeat(s, num_candidates, axis=0), cands))
    return cands[int(np.argmax(q))]


# ---------------------------------------------------------------------------
# agent


class MFPOAgent:
    def __init__(self, config: TrainConfig, state_dim: int, action_dim: int):
        self.config = config
        seeds = np.random.SeedSequence(config.seed).generate_state(4)
        h, act = tuple(config.hidden_widths), config.activation
        self.policy = AvgVelocityNet.create(state_dim, action_dim, h, act, int(seeds[0]))
        self.divnet = AvgDivergenceNet.create(state_dim, action_dim, h, act, int(seeds[1]))
        v_min, v_max = config.atom_range()
        self.critic = CategoricalCritic.create(state_dim, action_dim, v_min, v_max, config.num_atoms, h, act, int(seeds[2]))
        self.target = TargetCriticState(self.critic.params, config.tau)
        self.policy_opt = Adam(self.policy.params, lr=config.actor_lr)
        self.divnet_opt = Adam(self.divnet.params, lr=config.divnet_lr)
        self.critic_opt = Adam(self.critic.params, lr=config.critic_lr)
        self.alpha_state = AlphaState(float(np.log(config.alpha_init)), config.alpha_lr, -config.rho * action_dim)
        self.rng = np.random.default_rng(int(seeds[3]))
        self.updates = 0

    @property
    def alpha(self) -> float:
        return self.alpha_state.alpha

    def act(self, s) -> np.ndarray:
        return sample_action(self.policy, None, s, self.config.T, self.rng).action

    def act_eval(self, s, rng: np.random.Generator, num_candidates: int | None = None) -> np.ndarray:
        m = self.config.num_candidates if num_candidates is None else num_candidates
        return select_action_eval(self.policy, self.divnet, self.critic, s, m, rng, self.config.T)

    def update(self, batch: dict) -> dict:
        """One full update in the algorithm's order: critic, policy, divergence net, temperature, target."""
        cfg, rng = self.config, self.rng
        phases = []
        alpha = self.alpha

        tgt = bellman_target(self.critic, self.target, self.policy, self.divnet, alpha, cfg.gamma, batch, rng, cfg.T)
        closs = critic_update(self.critic, self.critic_opt, batch["s"], batch["a"], tgt.probs)
        phases.append("critic")
        # next-state log-likelihoods double as the entropy sample
        entropy = float(-np.mean(tgt.next_log_prob))

        imp = improvement_step(
            self.policy, self.policy_opt, self.divnet, self.divnet_opt, self.critic, alpha, batch["s"], rng,
            T=cfg.T, K1=cfg.K1, K2=cfg.K2, num_probes=cfg.num_probes, time_config=cfg.time_config,
            probe_kind=cfg.probe_kind,
        )
        phases += ["policy", "divnet"]

        if cfg.auto_alpha:
            self.alpha_state = temperature_update(self.alpha_state, entropy)
            phases.append("temperature")

        self.target = polyak_update(self.target, self.critic.params)
        phases.append("target")
        self.updates += 1
        return {
            "critic_loss": closs,
            "policy_loss": imp.policy_loss,
            "divnet_loss": imp.divnet_loss,
            "alpha": alpha,
            "entropy": entropy,
            "ess1": imp.ess1,
            "ess2": imp.ess2,
            "phases": phases,
        }

    # -- persistence ---------------------------------------------------------

    def save(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        save_params(os.path.join(directory, "policy.bin"), self.policy.params, {**self.policy.header(), "T": self.config.T})
        save_params(os.path.join(directory, "divnet.bin"), self.divnet.params, {**self.divnet.header(), "T": self.config.T})
        save_params(os.path.join(directory, "critic.bin"), self.critic.params, self.critic.header())
        save_params(os.path.join(directory, "critic_target.bin"), self.target.params, self.critic.header())
        state = {
            "config": self.config.to_dict(),
            "log_alpha": self.alpha_state.log_alpha,
            "updates": self.updates,
            "rng_state": self.rng.bit_generator.state,
        }
        with open(os.path.join(directory, "agent.json"), "w") as f:
            json.dump(state, f, indent=2, sort_keys=True, default=int)

    @classmethod
    def load(cls, directory) -> "MFPOAgent":
        with open(os.path.join(directory, "agent.json")) as f:
            state = json.load(f)
        cfg = TrainConfig.from_dict(state["config"])
        pol, meta = load_params(os.path.join(directory, "policy.bin"))
        agent = cls(cfg, meta["state_dim"], meta["action_dim"])
        agent.policy.params = pol
        agent.divnet.params, _ = load_params(os.path.join(directory, "divnet.bin"))
        agent.critic.params, _ = load_params(os.path.join(directory, "critic.bin"))
        tparams, _ = load_params(os.path.join(directory, "critic_target.bin"))
        agent.target = TargetCriticState(tparams, cfg.tau)
        agent.alpha_state = dataclasses.replace(agent.alpha_state, log_alpha=float(state["log_alpha"]))
        agent.updates = int(state["updates"])
        agent.rng.bit_generator.state = state["rng_state"]
        agent.policy_opt = Adam(agent.policy.params, lr=cfg.actor_lr)
        agent.divnet_opt = Adam(agent.divnet.params, lr=cfg.divnet_lr)
        agent.critic_opt = Adam(agent.critic.params, lr=cfg.critic_lr)
        return agent


# ---------------------------------------------------------------------------
# loop


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, dump_path: str | None = None):
        super().__init__(message)
        self.dump_path = dump_path


def evaluate_policy(agent: MFPOAgent, env, episodes: int, seed: int, num_candidates: int | None = None) -> tuple[float, float]:
    """Mean and std of undiscounted episode returns using critic-based action selection."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    returns = []
    for ep in range(episodes):
        s = env.reset(seed=seed + ep)
        total, done, truncated, steps = 0.0, False, False, 0
        while not (done or truncated) and steps < env.spec.max_episode_steps:
            a = agent.act_eval(s, rng, num_candidates)
            s, r, done, truncated = env.step(a)
            total += r
            steps += 1
        returns.append(total)
    return float(np.mean(returns)), float(np.std(returns))


def train(config: TrainConfig, env=None, dump_dir: str | None = None, agent: MFPOAgent | None = None) -> Iterator[dict]:
    """Run the interaction/update loop and yield one metrics record per update."""
    config.validate()
    env = env or make_env(config.env, **config.env_params)
    spec = env.spec
    agent = agent or MFPOAgent(config, spec.state_dim, spec.action_dim)
    buffer = ReplayBuffer(min(config.buffer_capacity, max(config.total_steps, 1)), spec.state_dim, spec.action_dim)
    explore_rng = np.random.default_rng(np.random.SeedSequence(config.seed).generate_state(5)[4])
    s = env.reset(seed=config.seed)
    episode = 0
    for step in range(1, config.total_steps + 1):
        if step <= config.warmup_steps:
            a = explore_rng.uniform(spec.action_low, spec.action_high)
        else:
            a = agent.act(s)
        s_next, r, done, truncated = env.step(a)
        buffer.add(Transition(np.asarray(s, float), np.asarray(a, float), float(r), np.asarray(s_next, float), bool(done)))
        s = s_next
        if done or truncated:
            episode += 1
            s = env.reset(seed=config.seed + episode)
        if step <= config.warmup_steps or len(buffer) < config.batch_size:
            continue
        for _ in range(config.utd_ratio):
            batch = buffer.sample(config.batch_size, agent.rng)
            try:
                rec = agent.update(batch)
            except NonFiniteError as exc:
                path = None
                if dump_dir is not None:
                    path = os.path.join(dump_dir, f"nan_dump_update{agent.updates}")
                    agent.save(path)
                    with open(os.path.join(path, "batch.json"), "w") as f:
                        json.dump({k: np.asarray(v).tolist() for k, v in batch.items()}, f)
                raise TrainingDiverged(f"non-finite value at update {agent.updates}: {exc}", path) from exc
            rec = {"step": step, "update": agent.updates, **rec, "eval_return": None}
            if config.eval_every and agent.updates % config.eval_every == 0:
                eval_env = make_env(config.env, **config.env_params)
                rec["eval_return"] = evaluate_policy(agent, eval_env, config.eval_episodes, config.seed + 10_000 + agent.updates)[0]
            yield rec
