import numpy as np
import pytest

from mfpo.diffcore import (
    ACTIVATIONS,
    Adam,
    DimensionError,
    DualVector,
    MlpSpec,
    NonFiniteError,
    ParamSet,
    adam_init,
    adam_step,
    load_params,
    mlp_forward,
    mlp_init,
    mlp_jvp,
    mlp_vjp,
    params_from_bytes,
    params_to_bytes,
    relative_error,
    save_params,
)


def _fd_jvp(params, x, dx, h=1e-6):
    return (mlp_forward(params, x + h * dx) - mlp_forward(params, x - h * dx)) / (2 * h)


def _fd_param_grad(params, x, cot, h=1e-6):
    flat = params.flat()
    out = np.zeros_like(flat)
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = h
        fp = np.sum(cot * mlp_forward(ParamSet.from_flat(params.spec, flat + e), x))
        fm = np.sum(cot * mlp_forward(ParamSet.from_flat(params.spec, flat - e), x))
        out[j] = (fp - fm) / (2 * h)
    return out


class TestSpec:
    def test_layer_sizes(self):
        spec = MlpSpec(3, (4, 5), 2)
        assert spec.layer_sizes == [3, 4, 5, 2]
        assert MlpSpec.from_dict(spec.to_dict()) == spec

    def test_rejects_bad_activation(self):
        with pytest.raises(ValueError):
            MlpSpec(3, (4,), 2, "tanh_but_wrong")

    def test_rejects_empty_hidden(self):
        with pytest.raises(ValueError):
            MlpSpec(3, (), 2)

    def test_init_is_deterministic(self):
        spec = MlpSpec(3, (8, 8), 2)
        a, b = mlp_init(spec, 7), mlp_init(spec, 7)
        np.testing.assert_array_equal(a.flat(), b.flat())
        assert not np.array_equal(a.flat(), mlp_init(spec, 8).flat())
        for bias in a.biases:
            np.testing.assert_array_equal(bias, 0.0)

    def test_flat_round_trip(self):
        p = mlp_init(MlpSpec(3, (4, 5), 2), 0)
        q = ParamSet.from_flat(p.spec, p.flat())
        np.testing.assert_array_equal(p.flat(), q.flat())
        assert p.size == p.flat().size


class TestForward:
    def test_zero_params_give_zero_output(self):
        p = ParamSet.zeros(MlpSpec(3, (4,), 2))
        np.testing.assert_array_equal(mlp_forward(p, np.ones((5, 3))), 0.0)

    def test_single_and_batch_agree(self):
        p = mlp_init(MlpSpec(3, (6,), 2), 1)
        x = np.random.default_rng(0).standard_normal((4, 3))
        batch = mlp_forward(p, x)
        for i in range(4):
            np.testing.assert_allclose(mlp_forward(p, x[i]), batch[i], rtol=0, atol=1e-14)
        assert mlp_forward(p, x[0]).shape == (2,)

    def test_dimension_error(self):
        p = mlp_init(MlpSpec(3, (4,), 2), 0)
        with pytest.raises(DimensionError):
            mlp_forward(p, np.ones((2, 4)))

    def test_manual_two_layer(self):
        w1 = np.array([[1.0, -1.0], [0.5, 2.0]])
        w2 = np.array([[1.0, 1.0]])
        p = ParamSet(MlpSpec(2, (2,), 1, "relu"), (w1, w2), (np.zeros(2), np.array([0.25])))
        x = np.array([2.0, 1.0])
        # hidden = relu([1, 3]) = [1, 3]; out = 4.25
        np.testing.assert_allclose(mlp_forward(p, x), [4.25])


@pytest.mark.parametrize("activation", ACTIVATIONS)
class TestDerivatives:
    def test_jvp_matches_finite_differences(self, activation):
        rng = np.random.default_rng(3)
        p = mlp_init(MlpSpec(4, (7, 5), 3, activation), 11)
        x = rng.standard_normal((6, 4)) + 0.1
        dx = rng.standard_normal((6, 4))
        out = mlp_jvp(p, DualVector(x, dx))
        np.testing.assert_allclose(out.value, mlp_forward(p, x), rtol=0, atol=1e-14)
        assert np.max(relative_error(out.tangent, _fd_jvp(p, x, dx))) <= 1e-5

    def test_param_gradient_matches_finite_differences(self, activation):
        rng = np.random.default_rng(4)
        p = mlp_init(MlpSpec(3, (5,), 2, activation), 12)
        x = rng.standard_normal((4, 3)) + 0.1
        cot = rng.standard_normal((4, 2))
        grads, _ = mlp_vjp(p, x, cot)
        assert np.max(relative_error(grads.flat(), _fd_param_grad(p, x, cot), floor=1e-6)) <= 1e-5

    def test_jvp_vjp_duality(self, activation):
        rng = np.random.default_rng(5)
        p = mlp_init(MlpSpec(3, (6, 6), 4, activation), 13)
        x = rng.standard_normal((1, 3))
        dx = rng.standard_normal((1, 3))
        cot = rng.standard_normal((1, 4))
        jv = mlp_jvp(p, DualVector(x, dx)).tangent
        _, vj = mlp_vjp(p, x, cot)
        np.testing.assert_allclose(np.sum(cot * jv), np.sum(vj * dx), rtol=1e-12)


def test_gelu_tanh_close_to_gelu():
    x = np.linspace(-4, 4, 41)[:, None]
    a = ParamSet(MlpSpec(1, (1,), 1, "gelu"), (np.eye(1), np.eye(1)), (np.zeros(1), np.zeros(1)))
    b = ParamSet(MlpSpec(1, (1,), 1, "gelu_tanh"), (np.eye(1), np.eye(1)), (np.zeros(1), np.zeros(1)))
    np.testing.assert_allclose(mlp_forward(a, x), mlp_forward(b, x), atol=1e-3)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        # bias-corrected first step is lr * sign(g) (up to eps)
        p = mlp_init(MlpSpec(2, (3,), 1), 0)
        g = p.map(lambda a: np.full_like(a, -2.0))
        state, q = adam_step(adam_init(p, 0.01), p, g)
        np.testing.assert_allclose(q.flat() - p.flat(), 0.01, rtol=1e-6)
        assert state.step == 1

    def test_matches_reference_recursion(self):
        rng = np.random.default_rng(0)
        p = mlp_init(MlpSpec(2, (3,), 1), 0)
        opt = Adam(p, lr=0.05)
        theta, m, v = p.flat().copy(), 0.0, 0.0
        for k in range(1, 6):
            gf = rng.standard_normal(p.size)
            p = opt.step(p, ParamSet.from_flat(p.spec, gf))
            m = 0.9 * m + 0.1 * gf
            v = 0.999 * v + 0.001 * gf**2
            theta = theta - 0.05 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
        np.testing.assert_allclose(p.flat(), theta, rtol=1e-12, atol=1e-14)

    def test_minimizes_quadratic(self):
        p = ParamSet.zeros(MlpSpec(1, (2,), 1))
        target = np.linspace(-1, 1, p.size)
        opt = Adam(p, lr=0.05)
        for _ in range(500):
            p = opt.step(p, ParamSet.from_flat(p.spec, 2 * (p.flat() - target)))
        np.testing.assert_allclose(p.flat(), target, atol=1e-3)

    def test_non_finite_gradient_raises(self):
        p = mlp_init(MlpSpec(2, (3,), 1), 0)
        g = p.map(lambda a: np.full_like(a, np.nan))
        with pytest.raises(NonFiniteError):
            adam_step(adam_init(p), p, g)


class TestSerialization:
    def test_bytes_round_trip_is_exact(self):
        p = mlp_init(MlpSpec(3, (4, 5), 2, "mish"), 9)
        q, meta = params_from_bytes(params_to_bytes(p, {"kind": "x", "T": 2}))
        assert q.spec == p.spec
        np.testing.assert_array_equal(q.flat(), p.flat())
        assert meta == {"kind": "x", "T": 2}

    def test_file_round_trip(self, tmp_path):
        p = mlp_init(MlpSpec(3, (4,), 2), 1)
        save_params(tmp_path / "p.bin", p)
        q, _ = load_params(tmp_path / "p.bin")
        np.testing.assert_array_equal(q.flat(), p.flat())

    def test_truncated_blob_rejected(self):
        data = params_to_bytes(mlp_init(MlpSpec(3, (4,), 2), 1))
        with pytest.raises(DimensionError):
            params_from_bytes(data[:-8])
