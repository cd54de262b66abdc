"""Core network math: forward maps, norms, projection, prox, gradients."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from embalign.errors import DomainError, NumericError, ShapeError
from embalign.nn import (
    Activation,
    MlpParams,
    forward,
    forward_batch,
    loss_and_grad,
    lq_norm,
    project_lq_ball,
    prox_lq,
    rms_row_maxabs,
    spectral_norm,
)
from embalign.oracles import (
    central_difference_grad,
    project_l1_bruteforce,
    project_lq_slsqp,
    prox_first_order_residual,
)


def small_net(rng, dims, activation=None, q=2.0, scale=0.5):
    layers = [
        scale * rng.standard_normal((dims[i + 1], dims[i])) for i in range(len(dims) - 1)
    ]
    return MlpParams(layers, activation or Activation.relu(), q)


class TestActivation:
    def test_zero_fixing(self):
        z = np.zeros(4)
        for act in (Activation.relu(), Activation.leaky_relu(0.3), Activation.tanh()):
            np.testing.assert_array_equal(act.apply(z), z)

    def test_one_lipschitz_on_sampled_pairs(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal(2000) * 5
        b = rng.standard_normal(2000) * 5
        for act in (Activation.relu(), Activation.leaky_relu(0.9), Activation.tanh()):
            assert np.all(np.abs(act.apply(a) - act.apply(b)) <= np.abs(a - b) + 1e-15)

    def test_relu_subgradient_zero_at_kink(self):
        assert Activation.relu().derivative(np.array([0.0]))[0] == 0.0

    def test_leaky_slope_domain(self):
        with pytest.raises(DomainError):
            Activation.leaky_relu(1.5)

    def test_code_round_trip(self):
        for act in (Activation.relu(), Activation.leaky_relu(0.2), Activation.tanh()):
            assert Activation.from_code(act.code, act.slope) == act


class TestMlpParams:
    def test_shape_conformance_checked(self):
        with pytest.raises(ShapeError):
            MlpParams([np.zeros((3, 2)), np.zeros((2, 4))])

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            MlpParams([np.array([[np.nan, 0.0]])])

    def test_bookkeeping(self):
        net = small_net(np.random.default_rng(1), [4, 8, 3, 2])
        assert net.depth == 2
        assert net.in_dim == 4 and net.out_dim == 2
        assert net.dims == [4, 8, 3, 2]
        assert net.total_params == 8 * 4 + 3 * 8 + 2 * 3
        assert net.max_width == 8


class TestForward:
    def test_zero_layers_fix_zero(self):
        net = MlpParams([np.zeros((3, 2)), np.zeros((2, 3))])
        np.testing.assert_array_equal(forward(net, np.array([1.7, -4.0])), np.zeros(2))

    def test_identity_relu(self):
        net = MlpParams([np.eye(2), np.eye(2)], Activation.relu())
        np.testing.assert_array_equal(forward(net, np.array([1.0, -2.0])), [1.0, 0.0])

    def test_hand_traced_net(self):
        # 2 -> 3 -> 2 relu net with dyadic weights; the expected output
        # is a frozen hand trace: z0 = [2, 0, 1.25], relu keeps it,
        # out = [2 + 0.3125, 1 - 1.25].
        t0 = np.array([[0.5, -1.0], [0.25, 0.5], [1.0, 0.75]])
        t1 = np.array([[1.0, -0.5, 0.25], [0.5, 0.0, -1.0]])
        net = MlpParams([t0, t1], Activation.relu())
        np.testing.assert_array_equal(forward(net, np.array([2.0, -1.0])), [2.3125, -0.25])

    def test_pure_function(self):
        rng = np.random.default_rng(2)
        net = small_net(rng, [5, 4, 3])
        x = rng.standard_normal(5)
        np.testing.assert_array_equal(forward(net, x), forward(net, x))

    def test_dimension_mismatch(self):
        net = small_net(np.random.default_rng(3), [4, 3])
        with pytest.raises(ShapeError):
            forward(net, np.zeros(5))


class TestForwardBatch:
    def test_empty_batch(self):
        net = small_net(np.random.default_rng(4), [4, 3, 2])
        out = forward_batch(net, np.zeros((0, 4)))
        assert out.shape == (0, 2)

    def test_single_row_matches_forward(self):
        rng = np.random.default_rng(5)
        net = small_net(rng, [6, 5, 2])
        x = rng.standard_normal((1, 6))
        np.testing.assert_array_equal(forward_batch(net, x)[0], forward(net, x[0]))

    def test_rows_match_independent_forward_calls(self):
        rng = np.random.default_rng(6)
        net = small_net(rng, [7, 6, 4], Activation.tanh())
        x = rng.standard_normal((3, 7))
        batch = forward_batch(net, x)
        for i in range(3):
            np.testing.assert_array_equal(batch[i], forward(net, x[i]))


class TestLqNorm:
    def test_q2(self):
        assert lq_norm(np.array([[3.0, 4.0]]), 2.0) == 5.0

    def test_q1(self):
        assert lq_norm(np.array([[1.0, -2.0], [3.0, 0.0]]), 1.0) == 6.0

    def test_q15_closed_form(self):
        assert lq_norm(np.array([[1.0, 1.0]]), 1.5) == pytest.approx(2.0 ** (2.0 / 3.0), abs=1e-15)

    def test_domain(self):
        with pytest.raises(DomainError):
            lq_norm(np.ones((2, 2)), 2.5)

    def test_norm_chain(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            w = rng.standard_normal((rng.integers(1, 6), rng.integers(1, 6)))
            q = rng.uniform(1.0, 2.0)
            op = spectral_norm(w, iters=200)
            n2 = lq_norm(w, 2.0)
            nq = lq_norm(w, q)
            n1 = lq_norm(w, 1.0)
            assert op <= n2 + 1e-9
            assert n2 <= nq + 1e-9
            assert nq <= n1 + 1e-9


class TestSpectralNorm:
    def test_diagonal(self):
        assert spectral_norm(np.diag([2.0, 1.0])) == pytest.approx(2.0, abs=1e-8)

    def test_zero_matrix(self):
        assert spectral_norm(np.zeros((3, 2))) == 0.0

    def test_matches_dense_eigensolve(self):
        rng = np.random.default_rng(8)
        w = rng.standard_normal((4, 4))
        # independent oracle: largest eigenvalue of the symmetric Gram matrix
        sigma_max = math.sqrt(float(np.linalg.eigvalsh(w.T @ w)[-1]))
        assert spectral_norm(w, iters=500) == pytest.approx(sigma_max, abs=1e-6)

    def test_never_exceeds_true_norm(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            w = rng.standard_normal((5, 3))
            true = float(np.linalg.svd(w, compute_uv=False)[0])
            assert spectral_norm(w, iters=3) <= true + 1e-12


class TestProjection:
    def test_inside_ball_unchanged(self):
        w = np.array([[0.1, -0.2], [0.05, 0.0]])
        for q in (1.0, 1.5, 2.0):
            np.testing.assert_array_equal(project_lq_ball(w, q, 1.0), w)

    def test_q2_rescale(self):
        np.testing.assert_allclose(
            project_lq_ball(np.array([[3.0, 4.0]]), 2.0, 1.0), [[0.6, 0.8]], atol=1e-15
        )

    def test_q1_sort_threshold(self):
        got = project_lq_ball(np.array([[3.0, 1.0]]), 1.0, 1.0)
        np.testing.assert_allclose(got, [[1.0, 0.0]], atol=1e-12)
        oracle = project_l1_bruteforce(np.array([3.0, 1.0]), 1.0)
        np.testing.assert_allclose(got.ravel(), oracle, atol=1e-12)

    def test_idempotent_and_feasible(self):
        rng = np.random.default_rng(10)
        for q in (1.0, 1.3, 1.5, 2.0):
            w = rng.standard_normal((4, 5)) * 3
            p1 = project_lq_ball(w, q, 1.0)
            assert lq_norm(p1, q) <= 1.0 + 1e-9
            p2 = project_lq_ball(p1, q, 1.0)
            np.testing.assert_allclose(p2, p1, atol=1e-9)

    def test_matches_bruteforce_oracles(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            w = rng.standard_normal(n) * 2
            radius = float(rng.uniform(0.3, 1.5))
            got1 = project_lq_ball(w[None, :], 1.0, radius).ravel()
            np.testing.assert_allclose(got1, project_l1_bruteforce(w, radius), atol=1e-8)
            for q in (1.5, 2.0):
                got = project_lq_ball(w[None, :], q, radius).ravel()
                oracle = project_lq_slsqp(w, q, radius)
                assert np.linalg.norm(got - oracle) <= 1e-6

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            project_lq_ball(np.array([[np.inf]]), 2.0, 1.0)


class TestProx:
    def test_soft_threshold(self):
        assert prox_lq(np.array([0.5]), 1.0, 0.2)[0] == pytest.approx(0.3, abs=1e-15)

    def test_q2_shrink(self):
        assert prox_lq(np.array([1.0]), 2.0, 0.5)[0] == pytest.approx(0.5, abs=1e-15)

    def test_q15_matches_grid_search(self):
        # dense two-stage grid search on 0.5*(x-w)^2 + scale*x^1.5
        w, scale = 1.0, 0.1

        def objective(x):
            return 0.5 * (x - w) ** 2 + scale * x**1.5

        grid = np.linspace(0.0, w, 20001)
        x0 = grid[np.argmin(objective(grid))]
        fine = np.linspace(max(x0 - 1e-4, 0.0), x0 + 1e-4, 20001)
        x_star = fine[np.argmin(objective(fine))]
        assert prox_lq(np.array([w]), 1.5, scale)[0] == pytest.approx(x_star, abs=1e-8)

    def test_scale_zero_is_identity(self):
        w = np.array([[0.3, -0.7]])
        np.testing.assert_array_equal(prox_lq(w, 1.5, 0.0), w)

    @given(
        q=st.sampled_from([1.0, 1.25, 1.5, 1.75, 2.0]),
        scale=st.floats(0.0, 2.0),
        seed=st.integers(0, 10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_first_order_conditions(self, q, scale, seed):
        w = np.random.default_rng(seed).standard_normal(6) * 2
        x = prox_lq(w, q, scale)
        assert prox_first_order_residual(w, x, q, scale) <= 1e-8


class TestLossAndGrad:
    def test_zero_loss_zero_grad(self):
        rng = np.random.default_rng(12)
        net = small_net(rng, [4, 3, 2])
        x = rng.standard_normal((5, 4))
        y = forward_batch(net, x)
        loss, grads = loss_and_grad(net, x, y)
        assert loss == 0.0
        for g in grads:
            np.testing.assert_allclose(g, 0.0, atol=1e-14)

    def test_linear_layer_closed_form(self):
        rng = np.random.default_rng(13)
        w = rng.standard_normal((3, 4))
        net = MlpParams([w])
        x = rng.standard_normal((20, 4))
        y = rng.standard_normal((20, 3))
        _, grads = loss_and_grad(net, x, y)
        closed = 2.0 * (x.T @ (x @ w.T - y) / 20).T
        np.testing.assert_allclose(grads[0], closed, rtol=1e-12)

    @pytest.mark.parametrize(
        "activation", [Activation.tanh(), Activation.leaky_relu(0.3), Activation.relu()]
    )
    def test_matches_central_differences(self, activation):
        rng = np.random.default_rng(14)
        net = small_net(rng, [3, 4, 2], activation)
        x = rng.standard_normal((6, 3))
        y = rng.standard_normal((6, 2))
        if activation.kind == "relu":
            # keep pre-activations away from the kink so differences are clean
            x = x + np.sign(x) * 0.5
        _, grads = loss_and_grad(net, x, y)
        fd = central_difference_grad(net, x, y, h=1e-5)
        for g, gf in zip(grads, fd):
            denom = max(float(np.max(np.abs(gf))), 1e-8)
            assert float(np.max(np.abs(g - gf))) / denom <= 1e-5

    def test_shape_errors(self):
        net = small_net(np.random.default_rng(15), [3, 2])
        with pytest.raises(ShapeError):
            loss_and_grad(net, np.zeros((4, 3)), np.zeros((5, 2)))
        with pytest.raises(DomainError):
            loss_and_grad(net, np.zeros((0, 3)), np.zeros((0, 2)))


class TestLipschitz:
    def test_feasible_net_is_nonexpansive(self):
        rng = np.random.default_rng(16)
        layers = [rng.standard_normal((8, 6)), rng.standard_normal((4, 8))]
        q = 1.5
        layers = [project_lq_ball(w, q, 1.0) for w in layers]
        net = MlpParams(layers, Activation.relu(), q)
        assert net.is_feasible()
        a = rng.standard_normal((1000, 6)) * 3
        b = rng.standard_normal((1000, 6)) * 3
        gap_out = np.linalg.norm(forward_batch(net, a) - forward_batch(net, b), axis=1)
        gap_in = np.linalg.norm(a - b, axis=1)
        assert np.all(gap_out <= gap_in * (1 + 1e-9))


class TestRmsRowMaxabs:
    def test_direct_arithmetic(self):
        got = rms_row_maxabs(np.array([[1.0, -2.0], [0.0, 3.0]]))
        assert got == pytest.approx(math.sqrt(6.5), abs=1e-15)

    def test_zero_matrix(self):
        assert rms_row_maxabs(np.zeros((4, 3))) == 0.0

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((100, 5))
        total = 0.0
        for i in range(100):
            peak = 0.0
            for j in range(5):
                peak = max(peak, abs(x[i, j]))
            total += peak * peak
        assert rms_row_maxabs(x) == math.sqrt(total / 100)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            rms_row_maxabs(np.zeros((0, 3)))
