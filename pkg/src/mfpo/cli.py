"""Command-line driver.

Commands::

    mfpo train     --config run.json --out DIR [--set key=value ...] [--seed N]
    mfpo eval      --checkpoint DIR [--env NAME] [--episodes N] [--candidates M] [--seed N]
    mfpo toy       --out DIR [--config toy.json] [--set key=value ...] [--seed N]
    mfpo diag-ess  --out FILE.csv [--checkpoint DIR] [--t-grid 0.1,0.2,...] [--trials N] [--seed N]
    mfpo selfcheck [--seed N]

Output files:

* ``manifest.json``: config snapshot, seed, package version, start time, output paths.
  Written once before training starts. The end time and final status go to ``status.json``.
* ``metrics.jsonl``: one JSON object per update with keys step, update,
  critic_loss, policy_loss, divnet_loss, alpha, entropy, ess1, ess2,
  eval_return (null off-schedule) and phases.
* ``checkpoints/update_<n>/`` and ``checkpoint/``: parameter blobs plus ``agent.json``.
* toy: ``exact.csv``, ``euler.csv``, ``mfpo.csv`` with columns x,y,log_likelihood,
  and ``summary.json``.
* diag-ess: CSV with columns t,proposal,normalized_ess,variance,mean_abs_error
  (one row per grid point and proposal in policy, gaussian, combined; the error
  column is empty when no closed-form reference exists).

Exit codes: 0 success, 1 failed check or non-finite abort, 2 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from itertools import product

import numpy as np

from . import __version__
from .agent import MFPOAgent, TrainConfig, TrainingDiverged, evaluate_policy, improvement_step, train
from .critic import project_categorical
from .diffcore import Adam, DualVector, MlpSpec, NonFiniteError, ParamSet, mlp_forward, mlp_init, mlp_vjp, relative_error
from .divnet import hutchinson_divergence
from .envs import GmmBandit, exact_gmm_sampler, gmm_log_density, make_env
from .meanflow import sample_action
from .networks import AvgDivergenceNet, AvgVelocityNet
from .oracles import (
    LinearGaussianOracle,
    brute_force_projection,
    euler_sample_log_likelihood,
    linear_velocity_net,
    train_on_gaussian_flow,
)
from .stats import mmd, std_normal_logpdf
from .velest import GAUSSIAN, POLICY, gaussian_proposal, policy_proposal, velocity_from_proposals


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling


def parse_value(text: str):
    """JSON literal when it parses, plain string otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` assignments to a nested dict (copied)."""
    out = json.loads(json.dumps(cfg))
    for item in overrides or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"cannot descend into non-object at {key!r}")
        node[parts[-1]] = parse_value(raw)
    return out


def load_json(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


@contextlib.contextmanager
def run_lock(directory):
    """Exclusive ownership of a run directory for the lifetime of the block."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"run directory {directory} is locked by another process ({path})") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.remove(path)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=True)


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------------------
# train / eval


def cmd_train(args) -> int:
    raw = apply_overrides(load_json(args.config), args.set)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        config = TrainConfig.from_dict(raw).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    try:
        env = make_env(config.env, **config.env_params)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    out = args.out
    with run_lock(out):
        metrics_path = os.path.join(out, "metrics.jsonl")
        manifest = {
            "config": config.to_dict(),
            "seed": config.seed,
            "version": __version__,
            "started": _timestamp(),
            "outputs": {"metrics": metrics_path, "checkpoint": os.path.join(out, "checkpoint"), "status": os.path.join(out, "status.json")},
        }
        with open(os.path.join(out, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)

        agent = MFPOAgent(config, env.spec.state_dim, env.spec.action_dim)
        status = {"status": "ok", "updates": 0}
        code = 0
        with open(metrics_path, "w") as mf:
            try:
                for rec in train(config, env, dump_dir=out, agent=agent):
                    mf.write(_dump(rec) + "\n")
                    status["updates"] = rec["update"]
                    if config.checkpoint_every and rec["update"] % config.checkpoint_every == 0:
                        agent.save(os.path.join(out, "checkpoints", f"update_{rec['update']}"))
            except TrainingDiverged as exc:
                print(f"error: {exc}; state dumped to {exc.dump_path}", file=sys.stderr)
                status.update(status="diverged", message=str(exc), dump=exc.dump_path)
                code = 1
        if code == 0:
            agent.save(os.path.join(out, "checkpoint"))
        status["finished"] = _timestamp()
        with open(os.path.join(out, "status.json"), "w") as f:
            json.dump(status, f, indent=2, sort_keys=True)
    return code


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.candidates < 1:
        raise UsageError("--candidates must be >= 1")
    try:
        agent = MFPOAgent.load(args.checkpoint)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
    name = args.env or agent.config.env
    env = make_env(name, **(agent.config.env_params if name == agent.config.env else {}))
    if (env.spec.state_dim, env.spec.action_dim) != (agent.policy.state_dim, agent.policy.action_dim):
        raise UsageError(f"checkpoint dims ({agent.policy.state_dim}, {agent.policy.action_dim}) do not match env {name}")
    mean, std = evaluate_policy(agent, env, args.episodes, args.seed, args.candidates)
    print(_dump({"env": name, "episodes": args.episodes, "candidates": args.candidates, "seed": args.seed, "mean_return": mean, "std_return": std}))
    return 0


# ---------------------------------------------------------------------------
# GMM toy


@dataclass
class ToyConfig:
    """Settings for the 2-D GMM toy; Q is the exact reward, so no critic is trained."""

    radius: float = 2.0
    std: float = 0.3
    num_components: int = 6
    alpha: float = 1.0
    steps: int = 20_000
    batch_size: int = 128
    hidden_widths: list = field(default_factory=lambda: [64, 64])
    activation: str = "gelu"
    lr: float = 1e-3
    T: int = 2
    K1: int = 16
    K2: int = 32
    num_probes: int = 2
    samples: int = 1000
    euler_steps: int = 1000
    seed: int = 0


@dataclass
class ToyResult:
    exact: np.ndarray  # (n, 3)
    euler: np.ndarray
    mfpo: np.ndarray
    summary: dict


def run_toy(cfg: ToyConfig, progress=None) -> ToyResult:
    env = GmmBandit(cfg.radius, cfg.std, cfg.num_components)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(3)
    h = tuple(cfg.hidden_widths)
    policy = AvgVelocityNet.create(1, 2, h, cfg.activation, int(seeds[0]))
    divnet = AvgDivergenceNet.create(1, 2, h, cfg.activation, int(seeds[1]))
    popt, dopt = Adam(policy.params, lr=cfg.lr), Adam(divnet.params, lr=cfg.lr)
    rng = np.random.default_rng(int(seeds[2]))
    states = np.zeros((cfg.batch_size, 1))

    def q_fn(s, a):
        return gmm_log_density(env.params, a)

    for i in range(cfg.steps):
        improvement_step(policy, popt, divnet, dopt, q_fn, cfg.alpha, states, rng,
                         T=cfg.T, K1=cfg.K1, K2=cfg.K2, num_probes=cfg.num_probes)
        if progress is not None:
            progress(i + 1)

    n = cfg.samples
    s = np.zeros((n, 1))
    a_exact = exact_gmm_sampler(env.params, rng, n)
    ll_exact = gmm_log_density(env.params, a_exact) / cfg.alpha
    prior = rng.standard_normal((n, 2))
    out = sample_action(policy, divnet, s, cfg.T, prior_sample=prior)
    a_euler, ll_euler = euler_sample_log_likelihood(policy, s, prior, cfg.euler_steps)
    dev = np.abs(out.log_likelihood - ll_euler)
    exact_mean = float(np.mean(gmm_log_density(env.params, a_exact)))
    policy_mean = float(np.mean(gmm_log_density(env.params, out.action)))
    summary = {
        "samples": n,
        "T": cfg.T,
        "euler_steps": cfg.euler_steps,
        "ll_mean_abs_deviation_vs_euler": float(np.mean(dev)),
        "gmm_logdensity_exact_samples": exact_mean,
        "gmm_logdensity_policy_samples": policy_mean,
        "gmm_logdensity_gap": abs(exact_mean - policy_mean),
        "config": asdict(cfg),
    }
    pack = lambda a, ll: np.column_stack([a, ll])  # noqa: E731
    return ToyResult(pack(a_exact, ll_exact), pack(a_euler, ll_euler), pack(out.action, out.log_likelihood), summary)


def write_xyl_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["x", "y", "log_likelihood"])
        for x, y, ll in rows:
            w.writerow([repr(float(x)), repr(float(y)), repr(float(ll))])


def cmd_toy(args) -> int:
    raw = apply_overrides(load_json(args.config), args.set)
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = ToyConfig(**raw)
    except TypeError as exc:
        raise UsageError(f"invalid toy config: {exc}") from exc
    if cfg.samples < 1 or cfg.steps < 0 or cfg.euler_steps < 1:
        raise UsageError("samples and euler_steps must be >= 1, steps >= 0")
    os.makedirs(args.out, exist_ok=True)
    try:
        res = run_toy(cfg)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, rows in (("exact", res.exact), ("euler", res.euler), ("mfpo", res.mfpo)):
        write_xyl_csv(os.path.join(args.out, f"{name}.csv"), rows)
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        json.dump(res.summary, f, indent=2, sort_keys=True)
    print(_dump({k: v for k, v in res.summary.items() if k != "config"}))
    return 0


# ---------------------------------------------------------------------------
# ESS / variance diagnostics


@dataclass
class EssRow:
    t: float
    proposal: str
    normalized_ess: float
    variance: float
    mean_abs_error: float | None = None


def ess_diagnostics(
    q_fn,
    policy_sampler,
    s,
    a_t_sampler,
    t_grid,
    alpha: float,
    K1: int,
    K2: int,
    trials: int,
    points: int,
    rng: np.random.Generator,
    reference=None,
) -> list[EssRow]:
    """Per-t normalized ESS and estimator variance of each proposal and the ESS-weighted blend.

    For each ``t``, ``points`` query points ``a_t`` are drawn once and held
    fixed; each is estimated ``trials`` times. Variance is the across-trial
    variance summed over action dimensions and averaged over points.
    ``policy_sampler(rng, batch_shape, K)`` returns a policy :class:`ProposalBatch`.
    ``reference(a_t, t)`` (optional) gives the exact velocity.
    """
    rows = []
    for t in t_grid:
        a_t = a_t_sampler(np.full(points, t), rng)  # (P, d)
        a_rep = np.broadcast_to(a_t, (trials, *a_t.shape)).copy()
        t_rep = np.full(a_rep.shape[:-1], float(t))
        s_rep = np.broadcast_to(np.asarray(s, dtype=np.float64), (*a_rep.shape[:-1], np.size(s))).copy()
        pol = policy_sampler(rng, a_rep.shape[:-1], K1)
        gau = gaussian_proposal(a_rep, t_rep, K2, rng)
        est, (r1, r2) = velocity_from_proposals(q_fn, s_rep, a_rep, t_rep, alpha, [pol, gau])
        truth = None if reference is None else reference(a_t, np.full(points, t))
        for name, vel, ess, k in (
            (POLICY, r1.velocity, r1.ess, K1),
            (GAUSSIAN, r2.velocity, r2.ess, K2),
            ("combined", est.velocity, r1.ess + r2.ess, K1 + K2),
        ):
            var = float(np.mean(np.sum(np.var(vel, axis=0), axis=-1)))
            err = None if truth is None else float(np.mean(np.abs(vel - truth[None])))
            rows.append(EssRow(float(t), name, float(np.mean(ess) / k), var, err))
    return rows


def write_ess_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "proposal", "normalized_ess", "variance", "mean_abs_error"])
        for r in rows:
            w.writerow([repr(r.t), r.proposal, repr(r.normalized_ess), repr(r.variance), "" if r.mean_abs_error is None else repr(r.mean_abs_error)])


# same Boltzmann target as the quadratic bandit at its default center and alpha = 0.2
DEFAULT_ORACLE = {"mu": [0.7], "sigma": 1.0, "alpha": 0.2}


def cmd_diag_ess(args) -> int:
    try:
        grid = [float(x) for x in args.t_grid.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --t-grid: {exc}") from exc
    if not grid or any(not 0 < t < 1 for t in grid):
        raise UsageError("--t-grid needs values strictly inside (0, 1)")
    if args.trials < 2 or args.points < 1:
        raise UsageError("--trials must be >= 2 and --points >= 1")
    rng = np.random.default_rng(args.seed)
    if args.checkpoint is None:
        oracle = LinearGaussianOracle(np.asarray(DEFAULT_ORACLE["mu"]), DEFAULT_ORACLE["sigma"], DEFAULT_ORACLE["alpha"])
        rows = ess_diagnostics(
            oracle.q, oracle.exact_policy_proposal, np.zeros(1), oracle.sample_a_t, grid, oracle.alpha,
            args.K1, args.K2, args.trials, args.points, rng, reference=oracle.marginal_velocity,
        )
    else:
        try:
            agent = MFPOAgent.load(args.checkpoint)
        except (OSError, ValueError, KeyError) as exc:
            raise UsageError(f"cannot load checkpoint {args.checkpoint}: {exc}") from exc
        env = make_env(agent.config.env, **agent.config.env_params)
        s = np.asarray(env.reset(seed=args.seed), dtype=np.float64)
        T = agent.config.T

        def policy_sampler(r, shape, K):
            flat = int(np.prod(shape))
            batch = policy_proposal(agent.policy, agent.divnet, np.repeat(s[None], flat, axis=0), K, T, r)
            return type(batch)(batch.samples.reshape(*shape, K, -1), batch.log_proposal.reshape(*shape, K), POLICY)

        def a_t_sampler(t, r):
            a0 = sample_action(agent.policy, None, np.repeat(s[None], t.size, axis=0), T, r).action
            return (1.0 - t)[:, None] * a0 + t[:, None] * r.standard_normal(a0.shape)

        rows = ess_diagnostics(agent.critic, policy_sampler, s, a_t_sampler, grid, agent.alpha,
                               args.K1, args.K2, args.trials, args.points, rng)
    write_ess_csv(args.out, rows)
    print(_dump({"rows": len(rows), "out": args.out}))
    return 0


# ---------------------------------------------------------------------------
# self-check


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@contextlib.contextmanager
def injected_fault(fault: str | None):
    """Test hook: temporarily corrupt a core primitive so the self-check must catch it."""
    if fault is None:
        yield
        return
    if fault != "jvp-sign":
        raise UsageError(f"unknown fault {fault!r}")
    from . import diffcore, networks

    original = diffcore.mlp_jvp

    def flipped(params, dual):
        out = original(params, dual)
        return DualVector(out.value, -out.tangent)

    diffcore.mlp_jvp = networks.mlp_jvp = flipped
    try:
        yield
    finally:
        diffcore.mlp_jvp = networks.mlp_jvp = original


def check_autodiff(rng, nets: int = 8, h: float = 1e-6, tol: float = 1e-5) -> CheckResult:
    from . import diffcore

    worst = 0.0
    for k in range(nets):
        act = ("gelu", "mish", "relu", "elu")[k % 4]
        spec = MlpSpec(3, (5, 4), 2, act)
        params = mlp_init(spec, int(rng.integers(1 << 31)))
        x = rng.standard_normal((4, 3))
        dx = rng.standard_normal(x.shape)
        jv = diffcore.mlp_jvp(params, DualVector(x, dx)).tangent
        fd = (mlp_forward(params, x + h * dx) - mlp_forward(params, x - h * dx)) / (2 * h)
        worst = max(worst, float(np.max(relative_error(jv, fd))))
        cot = rng.standard_normal((4, 2))
        grads, _ = mlp_vjp(params, x, cot)
        flat, g = params.flat(), grads.flat()
        for j in rng.choice(flat.size, size=6, replace=False):
            e = np.zeros_like(flat)
            e[j] = h
            fp = np.sum(cot * mlp_forward(ParamSet.from_flat(spec, flat + e), x))
            fm = np.sum(cot * mlp_forward(ParamSet.from_flat(spec, flat - e), x))
            worst = max(worst, float(relative_error(g[j], (fp - fm) / (2 * h))))
    return CheckResult("autodiff", worst <= tol, f"max relative error {worst:.2e} (tol {tol:g})")


def check_trace(rng, tol: float = 1e-9) -> CheckResult:
    worst = 0.0
    for d in (2, 4, 6):
        A = rng.standard_normal((d, d))
        probes = np.array(list(product([-1.0, 1.0], repeat=d)))
        est = hutchinson_divergence(linear_velocity_net(A), np.zeros(0), rng.standard_normal(d), 0.5, probes).value
        worst = max(worst, abs(float(est) - np.trace(A)))
    return CheckResult("trace", worst <= tol, f"exhaustive Rademacher error {worst:.2e} (tol {tol:g})")


def check_projection(rng, cases: int = 200, tol: float = 1e-12) -> CheckResult:
    worst, mass = 0.0, 0.0
    for _ in range(cases):
        m = int(rng.integers(2, 12))
        lo = rng.uniform(-5, 0)
        atoms = np.linspace(lo, lo + rng.uniform(0.5, 10), m)
        p = rng.dirichlet(np.ones(m))
        shifted = rng.uniform(atoms[0] - 2, atoms[-1] + 2, size=m)
        got = project_categorical(atoms, shifted, p)
        worst = max(worst, float(np.max(np.abs(got - brute_force_projection(atoms, shifted, p)))))
        mass = max(mass, abs(got.sum() - 1.0))
    ok = worst <= tol and mass <= 1e-9
    return CheckResult("projection", ok, f"max error {worst:.2e}, mass error {mass:.2e}")


def check_gaussian_flow(rng, steps: int = 1500, n: int = 2000) -> CheckResult:
    policy = AvgVelocityNet.create(0, 2, (32, 32), "gelu", int(rng.integers(1 << 31)))
    divnet = AvgDivergenceNet.create(0, 2, (32, 32), "gelu", int(rng.integers(1 << 31)))
    try:
        train_on_gaussian_flow(policy, divnet, steps, 128, rng, lr=2e-3)
        out = sample_action(policy, divnet, np.zeros((n, 0)), 2, rng)
    except NonFiniteError as exc:
        return CheckResult("gaussian_flow", False, f"non-finite values: {exc}")
    err = float(np.mean(np.abs(out.log_likelihood - std_normal_logpdf(out.action))))
    dist = mmd(out.action, rng.standard_normal((n, 2)))
    ok = err <= 0.3 and dist <= 0.1
    return CheckResult("gaussian_flow", ok, f"log-likelihood error {err:.3f} (tol 0.3), MMD {dist:.3f} (tol 0.1)")


SELF_CHECKS = (check_autodiff, check_trace, check_projection, check_gaussian_flow)


def run_selfcheck(seed: int = 0, fault: str | None = None, out=None) -> CheckResult | None:
    """Run every check in order; returns the first failure or ``None``."""
    out = out or sys.stdout
    rng = np.random.default_rng(seed)
    with injected_fault(fault):
        for check in SELF_CHECKS:
            res = check(rng)
            print(f"{'PASS' if res.passed else 'FAIL'} {res.name}: {res.detail}", file=out, flush=True)
            if not res.passed:
                return res
    return None


def cmd_selfcheck(args) -> int:
    failed = run_selfcheck(args.seed, args.inject_fault or os.environ.get("MFPO_SELFCHECK_FAULT"))
    if failed is not None:
        print(f"selfcheck failed at {failed.name}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mfpo", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run training; writes manifest.json, metrics.jsonl, status.json, checkpoints")
    t.add_argument("--config", help="JSON config (TrainConfig keys)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override, repeatable")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint; prints mean/std return as JSON")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--env")
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--candidates", type=int, default=10)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    y = sub.add_parser("toy", help="GMM toy: writes exact.csv, euler.csv, mfpo.csv (x,y,log_likelihood) and summary.json")
    y.add_argument("--config", help="JSON with ToyConfig keys")
    y.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    y.add_argument("--out", required=True)
    y.add_argument("--seed", type=int)
    y.set_defaults(func=cmd_toy)

    d = sub.add_parser("diag-ess", help="ESS/variance CSV (t,proposal,normalized_ess,variance,mean_abs_error)")
    d.add_argument("--checkpoint", help="trained run; omit to use the linear-Gaussian oracle")
    d.add_argument("--t-grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    d.add_argument("--trials", type=int, default=200)
    d.add_argument("--points", type=int, default=16)
    d.add_argument("--K1", type=int, default=16)
    d.add_argument("--K2", type=int, default=32)
    d.add_argument("--out", required=True)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(func=cmd_diag_ess)

    c = sub.add_parser("selfcheck", help="gradient, trace, projection and Gaussian-flow checks")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--inject-fault", choices=["jvp-sign"], help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
