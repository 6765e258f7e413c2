import numpy as np
import pytest
from scipy.special import softmax

from mfpo.critic import (
    CategoricalCritic,
    TargetCriticState,
    bellman_target,
    critic_update,
    polyak_update,
    cross_entropy_loss_and_grad,
    project_categorical,
    q_value,
    return_distribution,
    soft_target_distribution,
)
from mfpo.diffcore import Adam, DimensionError, ParamSet
from mfpo.networks import AvgVelocityNet
from mfpo.oracles import brute_force_projection

ATOMS = np.linspace(-10.0, 10.0, 51)


@pytest.fixture
def critic():
    return CategoricalCritic.create(2, 1, -10.0, 10.0, 51, hidden=(16,), seed=0)


class TestProjection:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            p = rng.dirichlet(np.ones(51))
            shifted = rng.uniform(-0.5, 2.0) + rng.uniform(0.5, 1.0) * ATOMS
            np.testing.assert_allclose(project_categorical(ATOMS, shifted, p), brute_force_projection(ATOMS, shifted, p), atol=1e-12)

    def test_mass_and_mean_preserved_inside_support(self):
        rng = np.random.default_rng(1)
        p = rng.dirichlet(np.ones(51), size=8)
        shifted = 0.3 + 0.9 * ATOMS
        out = project_categorical(ATOMS, shifted, p)
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        # linear splitting keeps the mean exactly when nothing is clamped
        np.testing.assert_allclose(out @ ATOMS, p @ shifted, atol=1e-12)

    def test_clamping_to_edges(self):
        p = np.full(51, 1 / 51)
        np.testing.assert_allclose(project_categorical(ATOMS, ATOMS + 100.0, p)[-1], 1.0)
        np.testing.assert_allclose(project_categorical(ATOMS, ATOMS - 100.0, p)[0], 1.0)

    def test_identity_shift(self):
        p = np.random.default_rng(2).dirichlet(np.ones(51))
        np.testing.assert_allclose(project_categorical(ATOMS, ATOMS, p), p, atol=1e-15)


class TestSoftTarget:
    def test_terminal_puts_mass_at_reward(self):
        out = soft_target_distribution(ATOMS, np.full((1, 51), 1 / 51), [1.2], [1.0], 0.99, 0.5, [3.0])
        np.testing.assert_allclose(out.sum(), 1.0)
        np.testing.assert_allclose(out[0] @ ATOMS, 1.2, atol=1e-12)
        assert np.count_nonzero(out) == 2

    def test_mean_is_scalar_soft_target(self):
        p = softmax(-0.5 * ((ATOMS - 1.0) / 0.8) ** 2)[None]
        r, g, alpha, logp = 0.4, 0.9, 0.2, -1.5
        out = soft_target_distribution(ATOMS, p, [r], [0.0], g, alpha, [logp])
        expected = r + g * (p[0] @ ATOMS - alpha * logp)
        assert abs(out[0] @ ATOMS - expected) < 1e-9


class TestCritic:
    def test_atom_validation(self, critic):
        with pytest.raises(ValueError):
            CategoricalCritic(2, 1, np.array([0.0, 1.0, 3.0]), critic.params)
        with pytest.raises(DimensionError):
            CategoricalCritic(3, 1, ATOMS, critic.params)

    def test_q_is_distribution_mean(self, critic):
        rng = np.random.default_rng(0)
        s, a = rng.standard_normal((4, 2)), rng.standard_normal((4, 1))
        np.testing.assert_allclose(q_value(critic, s, a), return_distribution(critic, s, a) @ ATOMS)
        assert isinstance(critic(s[0], a[0]), float)

    def test_cross_entropy_gradient_matches_fd(self, critic):
        rng = np.random.default_rng(1)
        s, a = rng.standard_normal((3, 2)), rng.standard_normal((3, 1))
        target = rng.dirichlet(np.ones(51), size=3)
        _, grads = cross_entropy_loss_and_grad(critic, s, a, target)
        flat, g = critic.params.flat(), grads.flat()
        h = 1e-6
        for j in rng.choice(flat.size, 12, replace=False):
            e = np.zeros_like(flat)
            e[j] = h
            lp, _ = cross_entropy_loss_and_grad(critic.with_params(ParamSet.from_flat(critic.params.spec, flat + e)), s, a, target)
            lm, _ = cross_entropy_loss_and_grad(critic.with_params(ParamSet.from_flat(critic.params.spec, flat - e)), s, a, target)
            assert abs((lp - lm) / (2 * h) - g[j]) <= 1e-6 * max(1.0, abs(g[j]))

    def test_update_fits_fixed_target(self, critic):
        rng = np.random.default_rng(2)
        s, a = rng.standard_normal((16, 2)), rng.standard_normal((16, 1))
        target = soft_target_distribution(ATOMS, np.full((16, 51), 1 / 51), np.full(16, 3.0), np.ones(16), 0.99, 0.1, np.zeros(16))
        opt = Adam(critic.params, lr=1e-2)
        for _ in range(300):
            critic_update(critic, opt, s, a, target)
        np.testing.assert_allclose(q_value(critic, s, a), 3.0, atol=0.1)

    def test_polyak(self, critic):
        zero = critic.params.map(np.zeros_like)
        out = TargetCriticState(zero, tau=0.25)
        new = polyak_update(out, critic.params)
        np.testing.assert_allclose(new.params.flat(), 0.25 * critic.params.flat())
        assert new.tau == 0.25

    def test_bellman_target_shapes_and_mass(self, critic):
        rng = np.random.default_rng(4)
        policy = AvgVelocityNet.create(2, 1, (8,), seed=1)
        batch = {"s_next": rng.standard_normal((5, 2)), "reward": rng.standard_normal(5), "done": np.array([0, 0, 1, 0, 1.0])}
        out = bellman_target(critic, TargetCriticState(critic.params), policy, None, 0.2, 0.99, batch, rng)
        assert out.probs.shape == (5, 51) and out.next_actions.shape == (5, 1)
        np.testing.assert_allclose(out.probs.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.probs[2] @ ATOMS, batch["reward"][2], atol=1e-12)
