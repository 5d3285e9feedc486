import numpy as np
import pytest

from errors import ShapeError, UsageError
from models import LossConfig, RoutingConfig, RoutingMode
from services.entropy import normalized_tsallis, tsallis_grad
from services.losses import (
    aux_loss_grads,
    auxiliary_loss,
    collect_stats,
    entropy_loss,
    load_balance_loss,
    task_loss,
)
from services.numerics import finite_diff_grad, scaled_error, softmax, softmax_backward
from services.routing import route_distribution

UNIFORM6 = 1.6404  # S_1.1 of the uniform distribution over 6


def stats_for(logits, cfg):
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    decisions = [route_distribution(softmax(row), cfg) for row in logits]
    return collect_stats(decisions, logits)


def collapsed_logits(t, n, expert=0):
    logits = np.zeros((t, n))
    logits[:, expert] = 1000.0
    return logits


class TestEntropyLoss:

    def test_zero_beta(self):
        stats = stats_for(np.zeros((3, 6)), RoutingConfig(n_experts=6))
        assert entropy_loss(stats, LossConfig(beta=0.0)) == 0.0

    def test_uniform(self):
        stats = stats_for(np.zeros((5, 6)), RoutingConfig(n_experts=6))
        assert entropy_loss(stats, LossConfig(beta=1.0, q=1.1)) == pytest.approx(UNIFORM6, abs=1e-4)

    def test_one_hot(self):
        stats = stats_for(collapsed_logits(4, 6), RoutingConfig(n_experts=6))
        assert entropy_loss(stats, LossConfig(beta=1.0)) == 0.0

    def test_sign(self):
        stats = stats_for(np.zeros((2, 6)), RoutingConfig(n_experts=6))
        plus = entropy_loss(stats, LossConfig(beta=0.5, entropy_sign=1))
        minus = entropy_loss(stats, LossConfig(beta=0.5, entropy_sign=-1))
        assert minus == pytest.approx(-plus)

    def test_token_order_invariant(self, rng):
        cfg = RoutingConfig(n_experts=4)
        logits = rng.normal(size=(6, 4))
        a = entropy_loss(stats_for(logits, cfg), LossConfig(beta=1.0))
        b = entropy_loss(stats_for(logits[::-1], cfg), LossConfig(beta=1.0))
        assert a == pytest.approx(b, abs=1e-15)


class TestLoadBalance:

    def test_uniform_is_alpha(self):
        stats = stats_for(np.zeros((6, 6)), RoutingConfig(n_experts=6))
        assert load_balance_loss(stats, LossConfig(alpha=0.3), 6) == pytest.approx(0.3, abs=1e-12)

    def test_collapsed_is_alpha_n(self):
        cfg = RoutingConfig(n_experts=6, mode=RoutingMode.TOP_K, keep_top_k=1)
        stats = stats_for(collapsed_logits(5, 6), cfg)
        assert load_balance_loss(stats, LossConfig(alpha=0.3), 6) == pytest.approx(0.3 * 6, abs=1e-12)

    def test_perturbation_increases(self):
        # every token goes to expert 0 (the tie-break winner at uniform)
        cfg = RoutingConfig(n_experts=4, mode=RoutingMode.TOP_K, keep_top_k=1)
        loss_cfg = LossConfig(alpha=1.0)
        base = load_balance_loss(stats_for(np.zeros((8, 4)), cfg), loss_cfg, 4)
        bias = np.array([0.5, 0.0, 0.0, 0.0])
        skewed = load_balance_loss(stats_for(np.zeros((8, 4)) + bias, cfg), loss_cfg, 4)
        assert base == pytest.approx(1.0, abs=1e-12)
        assert skewed > base

    def test_fractions_sum_to_one(self, rng):
        stats = stats_for(rng.normal(size=(10, 5)), RoutingConfig(n_experts=5))
        assert stats.dispatch_fraction.sum() == pytest.approx(1.0, abs=1e-9)
        assert stats.mean_prob.sum() == pytest.approx(1.0, abs=1e-9)

    def test_activation_counting(self):
        # token 0 -> {0, 1}, token 1 -> {0}: f = [2/3, 1/3, 0]
        cfg2 = RoutingConfig(n_experts=3, mode=RoutingMode.TOP_K, keep_top_k=2)
        cfg1 = RoutingConfig(n_experts=3, mode=RoutingMode.TOP_K, keep_top_k=1)
        logits = np.array([[2.0, 1.0, 0.0], [2.0, 1.0, 0.0]])
        decisions = [route_distribution(softmax(logits[0]), cfg2), route_distribution(softmax(logits[1]), cfg1)]
        stats = collect_stats(decisions, logits)
        np.testing.assert_allclose(stats.dispatch_fraction, [2 / 3, 1 / 3, 0.0])

    def test_expert_count_mismatch(self):
        stats = stats_for(np.zeros((2, 4)), RoutingConfig(n_experts=4))
        with pytest.raises(ShapeError):
            load_balance_loss(stats, LossConfig(), 5)


class TestAuxiliary:

    def test_zero_coefficients(self, rng):
        stats = stats_for(rng.normal(size=(3, 4)), RoutingConfig(n_experts=4))
        assert auxiliary_loss(stats, LossConfig(alpha=0.0, beta=0.0), 4) == 0.0

    def test_uniform_sum(self):
        stats = stats_for(np.zeros((4, 6)), RoutingConfig(n_experts=6))
        value = auxiliary_loss(stats, LossConfig(alpha=1.0, beta=1.0, q=1.1), 6)
        assert value == pytest.approx(1.0 + UNIFORM6, abs=1e-4)

    def test_additive(self, rng):
        stats = stats_for(rng.normal(size=(5, 4)), RoutingConfig(n_experts=4))
        cfg = LossConfig(alpha=0.2, beta=0.7, q=1.3)
        assert auxiliary_loss(stats, cfg, 4) == pytest.approx(
            load_balance_loss(stats, cfg, 4) + entropy_loss(stats, cfg), abs=1e-15
        )

    def test_empty_batch(self):
        with pytest.raises(UsageError):
            collect_stats([], np.zeros((0, 4)))


class TestTaskLoss:

    def test_zero_at_target(self):
        loss, grad = task_loss([1.0, 2.0], [1.0, 2.0])
        assert loss == 0.0
        assert not np.any(grad)

    def test_closed_form(self):
        loss, grad = task_loss([1.0, 0.0], [0.0, 0.0])
        assert loss == 0.5
        np.testing.assert_array_equal(grad, [1.0, 0.0])

    def test_gradient(self, rng):
        target = rng.normal(size=3)
        y = rng.normal(size=3)
        numeric = finite_diff_grad(lambda v: task_loss(v, target)[0], y)
        np.testing.assert_allclose(task_loss(y, target)[1], numeric, atol=1e-7)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            task_loss([1.0], [1.0, 2.0])


class TestAuxGradients:

    def test_zero_coefficients(self, rng):
        stats = stats_for(rng.normal(size=(3, 4)), RoutingConfig(n_experts=4))
        assert not np.any(aux_loss_grads(stats, LossConfig(alpha=0.0, beta=0.0), 4))

    def test_uniform_balance_is_stationary(self):
        cfg = RoutingConfig(n_experts=4, mode=RoutingMode.SOFT)
        stats = stats_for(np.zeros((1, 4)), cfg)
        grads = aux_loss_grads(stats, LossConfig(alpha=1.0, beta=0.0), 4)
        np.testing.assert_allclose(grads, 0.0, atol=1e-15)

    def test_single_token_entropy_chain_rule(self, rng):
        cfg = RoutingConfig(n_experts=5)
        logits = rng.normal(size=(1, 5))
        stats = stats_for(logits, cfg)
        loss_cfg = LossConfig(alpha=0.0, beta=0.4, q=1.2)
        p = softmax(logits[0])
        expected = softmax_backward(p, 0.4 * tsallis_grad(p, 1.2))
        np.testing.assert_allclose(aux_loss_grads(stats, loss_cfg, 5)[0], expected, atol=1e-14)

    @pytest.mark.parametrize("q", [1.0, 0.5])
    def test_saturated_router_has_finite_gradient(self, q):
        # softmax of [800, 0, 0, 0] underflows to exactly [1, 0, 0, 0]
        cfg = RoutingConfig(n_experts=4, keep_top_k=1, entropic_index=q)
        stats = stats_for([[800.0, 0.0, 0.0, 0.0]], cfg)
        assert np.count_nonzero(stats.probs) == 1
        loss_cfg = LossConfig(alpha=0.0, beta=0.01, q=q)
        assert auxiliary_loss(stats, loss_cfg, 4) == 0.0
        grads = aux_loss_grads(stats, loss_cfg, 4)
        assert np.all(np.isfinite(grads))
        np.testing.assert_allclose(grads, 0.0, atol=1e-15)

    def test_partially_saturated_shannon_matches_closed_form(self):
        # -p_i (log p_i + H) on the support, 0 where p underflowed
        cfg = RoutingConfig(n_experts=3, keep_top_k=1, entropic_index=1.0)
        logits = [[0.0, 0.5, -800.0]]
        stats = stats_for(logits, cfg)
        p = stats.probs[0]
        assert p[2] == 0.0
        support = p[:2]
        h = -np.sum(support * np.log(support))
        expected = np.zeros(3)
        expected[:2] = -support * (np.log(support) + h)
        grads = aux_loss_grads(stats, LossConfig(alpha=0.0, beta=1.0, q=1.0), 3)
        np.testing.assert_allclose(grads[0], expected, atol=1e-14)

    @pytest.mark.parametrize("q", [1.0, 1.1, 1.4])
    def test_matches_finite_differences(self, q):
        gen = np.random.default_rng(77)
        for _ in range(20):
            n = int(gen.integers(2, 7))
            t = int(gen.integers(1, 6))
            cfg = RoutingConfig(n_experts=n, keep_top_k=1, entropic_index=q)
            loss_cfg = LossConfig(alpha=0.3, beta=0.2, q=q)
            logits = gen.normal(size=(t, n))
            stats = stats_for(logits, cfg)
            decisions = stats.decisions

            def objective(flat):
                # selections held fixed; only probabilities move
                return auxiliary_loss(collect_stats(decisions, flat.reshape(t, n)), loss_cfg, n)

            numeric = finite_diff_grad(objective, logits.reshape(-1)).reshape(t, n)
            analytic = aux_loss_grads(stats, loss_cfg, n)
            assert np.max(scaled_error(analytic, numeric)) < 1e-5


class TestEntropyMinimisation:

    def test_descent_on_entropy_alone_collapses(self, rng):
        """Gradient steps on the entropy term alone drive one distribution to a peak"""
        cfg = RoutingConfig(n_experts=4, mode=RoutingMode.SOFT)
        loss_cfg = LossConfig(alpha=0.0, beta=1.0, q=1.1)
        logits = rng.normal(scale=0.1, size=(1, 4))
        for _ in range(500):
            logits = logits - 1.0 * aux_loss_grads(stats_for(logits, cfg), loss_cfg, 4)
        assert normalized_tsallis(softmax(logits[0]), 1.1) < 0.05
