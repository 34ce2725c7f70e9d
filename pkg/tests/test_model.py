import math

import numpy as np
import pytest

from otalign.errors import ArgumentError, ShapeError, StateError
from otalign.gradcheck import TINY_MODEL, check_model_params, relative_error
from otalign.losses import LossWeights, ce_loss, ot_loss
from otalign.model import (
    ModelState,
    ScheduleConfig,
    adamw_step,
    backward,
    forward,
    init_model,
    lr_at,
    named_parameters,
    zero_grads,
)
from otalign.numerics import make_rng
from otalign.sinkhorn import SinkhornConfig, similarity, sinkhorn_solve


def tiny_state(seed=7):
    rng = make_rng(seed)
    state = init_model(
        rng,
        audio_dim=TINY_MODEL["audio_dim"],
        visual_dim=TINY_MODEL["visual_dim"],
        encoder_dim=TINY_MODEL["encoder_dim"],
        decoder_dim=TINY_MODEL["decoder_dim"],
        vocab_size=TINY_MODEL["vocab_size"],
        n_prefix_tokens=TINY_MODEL["n_audio"] + TINY_MODEL["n_visual"],
    )
    x_a = rng.standard_normal((TINY_MODEL["n_audio"], TINY_MODEL["audio_dim"]))
    x_v = rng.standard_normal((TINY_MODEL["n_visual"], TINY_MODEL["visual_dim"]))
    targets = rng.integers(0, TINY_MODEL["vocab_size"], size=TINY_MODEL["caption_len"])
    return state, x_a, x_v, targets


class TestForward:
    def test_ce_only_equals_decoder_loss(self):
        # identity encoders, no fusion: the total must equal a hand-built
        # decoder-only cross entropy on the same features
        rng = make_rng(50)
        n, c = 3, 4
        state = init_model(
            rng, audio_dim=c, visual_dim=c, encoder_dim=c, decoder_dim=c,
            vocab_size=6, n_prefix_tokens=2 * n,
        )
        state.encoder_a.w[...] = np.eye(c)
        state.encoder_v.w[...] = np.eye(c)
        x_a = rng.standard_normal((n, c))
        x_v = rng.standard_normal((n, c))
        targets = rng.integers(0, 6, size=4)
        weights = LossWeights(lambda_ce=1.0, lambda_ot=0.0)
        breakdown, cache = forward(state, x_a, x_v, targets, weights, fusion_mode="none")

        h_av = np.vstack([x_a, x_v]) @ state.projector.w
        pool = np.exp(state.decoder.prefix_pool_weights)
        pool /= pool.sum()
        pooled = h_av.T @ pool
        emb = np.zeros((4, c))
        emb[1:] = state.decoder.token_embedding[targets[:-1]]
        logits = (emb + pooled) @ state.decoder.output_head.w + state.decoder.output_head.b
        expected, _ = ce_loss(logits, targets)
        assert breakdown.total == pytest.approx(expected, abs=1e-14)
        assert breakdown.total == pytest.approx(breakdown.ce, abs=1e-14)

    def test_ot_only_ignores_decoder(self):
        state, x_a, x_v, targets = tiny_state()
        weights = LossWeights(lambda_ce=0.0, lambda_ot=0.7)
        b1, _ = forward(state, x_a, x_v, targets, weights)
        state.decoder.output_head.w += 5.0  # decoder change must not affect total
        state.version += 1
        b2, _ = forward(state, x_a, x_v, targets, weights)
        assert b1.total == b2.total == pytest.approx(0.7 * b1.ot, abs=1e-12)

    def test_composition_of_module_oracles(self):
        state, x_a, x_v, targets = tiny_state(seed=9)
        weights = LossWeights(lambda_ce=1.0, lambda_ot=0.3, tau=0.07)
        cfg = SinkhornConfig(epsilon=0.1, tolerance=1e-9, max_iters=5000)
        breakdown, cache = forward(
            state, x_a, x_v, targets, weights, fusion_mode="ot", sinkhorn_cfg=cfg
        )
        h_a = x_a @ state.encoder_a.w
        h_v = x_v @ state.encoder_v.w
        s = similarity(h_a, h_v)
        plan = sinkhorn_solve(s, cfg).plan
        ot_val, _ = ot_loss(plan, s, weights.tau)
        att_a = h_a + plan @ h_v
        att_v = h_v + plan.T @ h_a
        h_av = np.vstack([att_a, att_v]) @ state.projector.w
        pool = np.exp(state.decoder.prefix_pool_weights)
        pool /= pool.sum()
        pooled = h_av.T @ pool
        emb = np.zeros((len(targets), h_av.shape[1]))
        emb[1:] = state.decoder.token_embedding[targets[:-1]]
        logits = (emb + pooled) @ state.decoder.output_head.w + state.decoder.output_head.b
        ce_val, _ = ce_loss(logits, targets)
        assert breakdown.ot == pytest.approx(ot_val, abs=1e-12)
        assert breakdown.ce == pytest.approx(ce_val, abs=1e-12)
        assert breakdown.total == pytest.approx(ce_val + 0.3 * ot_val, abs=1e-12)

    def test_deterministic(self):
        state, x_a, x_v, targets = tiny_state(seed=11)
        b1, _ = forward(state, x_a, x_v, targets)
        b2, _ = forward(state, x_a, x_v, targets)
        assert b1 == b2

    def test_validation_errors(self):
        state, x_a, x_v, targets = tiny_state()
        with pytest.raises(ArgumentError):
            forward(state, x_a, x_v, targets, fusion_mode="qformer")
        with pytest.raises(ArgumentError):
            forward(state, x_a, x_v, np.array([], dtype=np.int64))
        with pytest.raises(ShapeError):
            forward(state, x_a[:2], x_v, targets)  # prefix pool size mismatch


class TestBackward:
    def test_zero_loss_configuration_gives_zero_grads(self):
        rng = make_rng(52)
        state = init_model(
            rng, audio_dim=3, visual_dim=3, encoder_dim=4, decoder_dim=4,
            vocab_size=4, n_prefix_tokens=2,
        )
        x_a = rng.standard_normal((1, 3))
        x_v = rng.standard_normal((1, 3))
        weights = LossWeights(lambda_ce=0.0, lambda_ot=0.3)
        breakdown, cache = forward(state, x_a, x_v, np.array([1]), weights)
        assert breakdown.total == 0.0  # 1x1 OT loss is exactly zero
        zero_grads(state)
        backward(state, cache)
        for _, _, grad in named_parameters(state):
            assert np.array_equal(grad, np.zeros_like(grad))

    def test_doubling_lambda_ot_doubles_gradients(self):
        state, x_a, x_v, targets = tiny_state(seed=13)
        grads = {}
        for lam in (0.3, 0.6):
            weights = LossWeights(lambda_ce=0.0, lambda_ot=lam)
            _, cache = forward(state, x_a, x_v, targets, weights)
            zero_grads(state)
            backward(state, cache)
            grads[lam] = {n: g.copy() for n, _, g in named_parameters(state)}
        for name in grads[0.3]:
            assert np.allclose(2 * grads[0.3][name], grads[0.6][name], atol=1e-14)

    @pytest.mark.parametrize("fusion_mode", ["ot", "cross", "none"])
    @pytest.mark.parametrize("lambda_ot", [0.0, 0.3])
    def test_gradients_match_finite_differences(self, fusion_mode, lambda_ot):
        records = check_model_params(fusion_modes=[fusion_mode], lambda_ots=[lambda_ot])
        for record in records:
            assert record.passed, f"{record.name}: rel_error={record.rel_error:.3e}"

    def test_stale_cache_rejected(self):
        state, x_a, x_v, targets = tiny_state()
        _, cache = forward(state, x_a, x_v, targets)
        zero_grads(state)
        backward(state, cache)
        adamw_step(state, lr=1e-3)
        with pytest.raises(StateError):
            backward(state, cache)

    def test_backward_does_not_mutate_parameters(self):
        state, x_a, x_v, targets = tiny_state()
        before = {n: p.copy() for n, p, _ in named_parameters(state)}
        _, cache = forward(state, x_a, x_v, targets)
        zero_grads(state)
        backward(state, cache)
        for name, param, _ in named_parameters(state):
            assert np.array_equal(param, before[name])

    def test_one_small_step_decreases_loss(self):
        state, x_a, x_v, targets = tiny_state(seed=17)
        weights = LossWeights(lambda_ce=1.0, lambda_ot=0.3)
        b0, cache = forward(state, x_a, x_v, targets, weights)
        zero_grads(state)
        backward(state, cache)
        adamw_step(state, lr=1e-4, weight_decay=0.0)
        b1, _ = forward(state, x_a, x_v, targets, weights)
        assert b1.total < b0.total


class TestAdamW:
    def test_zero_gradients_no_decay_is_fixed_point(self):
        state, *_ = tiny_state()
        zero_grads(state)
        before = {n: p.copy() for n, p, _ in named_parameters(state)}
        adamw_step(state, lr=0.1, weight_decay=0.0)
        for name, param, _ in named_parameters(state):
            assert np.array_equal(param, before[name])
        assert state.step_count == 1

    def test_zero_gradients_pure_decay(self):
        state, *_ = tiny_state()
        zero_grads(state)
        lr, wd = 0.05, 0.2
        before = {n: p.copy() for n, p, _ in named_parameters(state)}
        adamw_step(state, lr=lr, weight_decay=wd)
        for name, param, _ in named_parameters(state):
            assert np.allclose(param, before[name] * (1 - lr * wd), atol=1e-15)

    def test_matches_hand_unrolled_recursion(self):
        # single scalar parameter with constant gradient g over 3 steps
        rng = make_rng(55)
        state = init_model(
            rng, audio_dim=1, visual_dim=1, encoder_dim=1, decoder_dim=1,
            vocab_size=2, n_prefix_tokens=2,
        )
        g = 0.37
        lr, b1, b2, eps, wd = 1e-2, 0.9, 0.999, 1e-8, 0.01
        theta = float(state.encoder_a.w[0, 0])
        m = v = 0.0
        for t in range(1, 4):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            theta = theta - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * theta)
        for _ in range(3):
            zero_grads(state)
            for _, _, grad in named_parameters(state):
                grad += g
            adamw_step(state, lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd)
        assert state.encoder_a.w[0, 0] == pytest.approx(theta, abs=1e-15)
        assert state.step_count == 3


class TestSchedule:
    def test_warmup_start_is_zero(self):
        sched = ScheduleConfig(peak_lr=1e-3, warmup_epochs=2, total_epochs=10)
        assert lr_at(sched, 0, 0, 100) == 0.0

    def test_warmup_end_is_peak(self):
        sched = ScheduleConfig(peak_lr=1e-3, warmup_epochs=2, total_epochs=10)
        assert lr_at(sched, 2, 0, 100) == pytest.approx(1e-3)

    def test_cosine_midpoint_is_half_peak(self):
        sched = ScheduleConfig(peak_lr=1e-3, warmup_epochs=2, total_epochs=10)
        assert lr_at(sched, 6, 0, 1) == pytest.approx(0.5e-3)

    def test_continuous_at_warmup_boundary_and_nonnegative(self):
        sched = ScheduleConfig(peak_lr=1.0, warmup_epochs=2, total_epochs=8)
        just_before = lr_at(sched, 1, 999, 1000)
        at_boundary = lr_at(sched, 2, 0, 1000)
        assert abs(at_boundary - just_before) < 1e-2
        for epoch in range(8):
            for step in (0, 5):
                assert lr_at(sched, epoch, step, 10) >= 0.0

    def test_epoch_out_of_range(self):
        sched = ScheduleConfig(peak_lr=1.0, warmup_epochs=1, total_epochs=4)
        with pytest.raises(ArgumentError):
            lr_at(sched, 4, 0, 10)

    def test_warmup_must_precede_total(self):
        with pytest.raises(ArgumentError):
            ScheduleConfig(peak_lr=1.0, warmup_epochs=5, total_epochs=5).validate()
