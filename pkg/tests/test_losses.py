import math

import numpy as np
import pytest

from otalign.errors import ArgumentError, ShapeError
from otalign.losses import LossWeights, ce_loss, ot_loss, total_loss
from otalign.numerics import finite_difference_grad, make_rng
from otalign.sinkhorn import SinkhornConfig, sinkhorn_solve


def ot_loss_loop_oracle(q, s, tau):
    """Explicit-loop re-implementation: every inner product and softmax by hand."""
    n_a, n_v = q.shape
    total = 0.0
    # audio side: rows of Q against rows of S
    for i in range(n_a):
        logits = [sum(q[i, k] * s[j, k] for k in range(n_v)) / tau for j in range(n_a)]
        m = max(logits)
        lse = m + math.log(sum(math.exp(x - m) for x in logits))
        total += -(logits[i] - lse)
    # visual side: columns of Q against columns of S
    for i in range(n_v):
        logits = [sum(q[k, i] * s[k, j] for k in range(n_a)) / tau for j in range(n_v)]
        m = max(logits)
        lse = m + math.log(sum(math.exp(x - m) for x in logits))
        total += -(logits[i] - lse)
    return total


class TestOtLoss:
    def test_singleton_is_exactly_zero(self):
        for q_val, s_val, tau in [(1.0, 0.3, 0.07), (1.0, -0.9, 1.0), (0.5, 0.0, 0.2)]:
            loss, grad = ot_loss(np.array([[q_val]]), np.array([[s_val]]), tau)
            assert loss == 0.0
            assert np.array_equal(grad, np.zeros((1, 1)))

    def test_constant_similarity_2x2_symmetry(self):
        s = np.full((2, 2), 0.4)
        q = sinkhorn_solve(s, SinkhornConfig(epsilon=0.1)).plan
        loss, _ = ot_loss(q, s, tau=0.07)
        assert loss == pytest.approx(4 * math.log(2), abs=1e-9)

    def test_matches_explicit_loop_oracle(self):
        rng = make_rng(30)
        s = rng.uniform(-1, 1, (3, 4))
        q = sinkhorn_solve(s, SinkhornConfig(epsilon=0.1, tolerance=1e-10)).plan
        loss, _ = ot_loss(q, s, tau=0.07)
        assert loss == pytest.approx(ot_loss_loop_oracle(q, s, 0.07), abs=1e-12)

    def test_loss_is_nonnegative(self):
        rng = make_rng(31)
        for _ in range(20):
            shape = (rng.integers(1, 7), rng.integers(1, 7))
            s = rng.uniform(-1, 1, shape)
            q = sinkhorn_solve(s, SinkhornConfig(epsilon=0.2)).plan
            loss, _ = ot_loss(q, s, tau=0.07)
            assert loss >= 0.0

    @pytest.mark.parametrize("shape", [(3, 4), (6, 9), (5, 5)])
    def test_grad_matches_finite_differences(self, shape):
        rng = make_rng(32)
        s = rng.uniform(-1, 1, shape)
        q = sinkhorn_solve(s, SinkhornConfig(epsilon=0.1)).plan
        tau = 0.07
        _, grad = ot_loss(q, s, tau)
        fd = finite_difference_grad(lambda x: ot_loss(q, x, tau)[0], s, 1e-5)
        denom = max(np.linalg.norm(grad), np.linalg.norm(fd))
        assert np.linalg.norm(grad - fd) / denom < 1e-4

    def test_permutation_invariance(self):
        rng = make_rng(33)
        s = rng.uniform(-1, 1, (4, 5))
        q = sinkhorn_solve(s, SinkhornConfig(epsilon=0.1)).plan
        loss, _ = ot_loss(q, s, tau=0.07)
        row_perm = rng.permutation(4)
        col_perm = rng.permutation(5)
        loss_permuted, _ = ot_loss(
            q[row_perm][:, col_perm], s[row_perm][:, col_perm], tau=0.07
        )
        assert loss_permuted == pytest.approx(loss, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ot_loss(np.ones((2, 3)) / 6, np.ones((3, 2)), tau=0.1)

    def test_bad_tau(self):
        with pytest.raises(ArgumentError):
            ot_loss(np.ones((2, 2)) / 4, np.ones((2, 2)), tau=0.0)


class TestCeLoss:
    def test_confident_correct_prediction_approaches_zero(self):
        logits = np.full((3, 5), -50.0)
        targets = np.array([1, 4, 0])
        logits[np.arange(3), targets] = 50.0
        loss, _ = ce_loss(logits, targets)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_give_log_vocab(self):
        loss, _ = ce_loss(np.zeros((4, 8)), np.array([0, 3, 5, 7]))
        assert loss == pytest.approx(math.log(8), abs=1e-12)

    def test_matches_explicit_oracle(self):
        rng = make_rng(34)
        logits = rng.standard_normal((5, 11))
        targets = rng.integers(0, 11, size=5)
        loss, _ = ce_loss(logits, targets)
        expected = 0.0
        for i in range(5):
            row = logits[i]
            probs = np.exp(row - row.max())
            probs /= probs.sum()
            expected += -math.log(probs[targets[i]])
        assert loss == pytest.approx(expected / 5, abs=1e-12)

    def test_grad_matches_finite_differences(self):
        rng = make_rng(35)
        logits = rng.standard_normal((5, 11))
        targets = rng.integers(0, 11, size=5)
        _, grad = ce_loss(logits, targets)
        fd = finite_difference_grad(lambda x: ce_loss(x, targets)[0], logits, 1e-5)
        denom = max(np.linalg.norm(grad), np.linalg.norm(fd))
        assert np.linalg.norm(grad - fd) / denom < 1e-4

    def test_grad_rows_sum_to_zero(self):
        rng = make_rng(36)
        logits = rng.standard_normal((6, 9))
        targets = rng.integers(0, 9, size=6)
        _, grad = ce_loss(logits, targets)
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-12)

    def test_out_of_range_target_reports_position(self):
        with pytest.raises(ArgumentError, match="position 2"):
            ce_loss(np.zeros((3, 4)), np.array([0, 1, 9]))


class TestTotalLoss:
    def test_ce_only(self):
        b = total_loss(ot=4.0, ce=2.0, w=LossWeights(lambda_ce=1.0, lambda_ot=0.0))
        assert b.total == b.ce == 2.0

    def test_ot_only(self):
        b = total_loss(ot=4.0, ce=2.0, w=LossWeights(lambda_ce=0.0, lambda_ot=1.0))
        assert b.total == b.ot == 4.0

    def test_weighted_sum(self):
        b = total_loss(ot=4.0, ce=2.0, w=LossWeights(lambda_ce=1.0, lambda_ot=0.5))
        assert b.total == pytest.approx(4.0, abs=1e-12)

    def test_weights_validation(self):
        with pytest.raises(ArgumentError):
            LossWeights(lambda_ce=0.0, lambda_ot=0.0).validate()
        with pytest.raises(ArgumentError):
            LossWeights(tau=-0.1).validate()
        with pytest.raises(ArgumentError):
            total_loss(float("inf"), 0.0, LossWeights())
