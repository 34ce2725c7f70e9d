import dataclasses
import json
import math

import numpy as np
import pytest

import otalign.training as training_mod
from otalign.config import ExperimentConfig
from otalign.data import SyntheticDatasetSpec, generate_dataset
from otalign.errors import NumericError
from otalign.fileio import load_checkpoint_tensors
from otalign.losses import LossBreakdown, LossWeights
from otalign.model import ScheduleConfig
from otalign.numerics import make_rng
from otalign.sinkhorn import SinkhornConfig, marginal_residual, sinkhorn_solve
from otalign.training import evaluate, init_model_for, split_dataset, train


def tiny_config(tmp_path, **overrides):
    base = dict(
        dataset=SyntheticDatasetSpec(
            n_samples=30, n_latent_tokens=4, latent_dim=4, audio_dim=5,
            visual_dim=6, noise_sigma=0.1, permute=True, vocab_size=8,
            caption_len=4, seed=2,
        ),
        sinkhorn=SinkhornConfig(epsilon=0.1, tolerance=1e-7, max_iters=2000),
        weights=LossWeights(lambda_ce=1.0, lambda_ot=0.3, tau=0.07),
        schedule=ScheduleConfig(peak_lr=0.01, warmup_epochs=1, total_epochs=3),
        encoder_dim=8, decoder_dim=8, batch_size=8, eval_every=10,
        output_dir=str(tmp_path / "run"), seed=2,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestEvaluate:
    def test_identity_setup_gives_perfect_alignment(self, tmp_path):
        spec = SyntheticDatasetSpec(
            n_samples=12, n_latent_tokens=4, latent_dim=5, audio_dim=5,
            visual_dim=5, noise_sigma=0.0, permute=False, vocab_size=8,
            caption_len=4, seed=4,
        )
        eye = np.eye(5)
        samples = generate_dataset(spec, modality_maps=(eye, eye))
        config = tiny_config(tmp_path, dataset=spec, encoder_dim=5)
        state = init_model_for(config, make_rng(0))
        state.encoder_a.w[...] = np.eye(5)
        state.encoder_v.w[...] = np.eye(5)
        metrics = evaluate(state, samples, config)
        assert metrics.alignment_accuracy == 1.0

    def test_untrained_token_accuracy_near_chance(self, tmp_path):
        config = tiny_config(tmp_path)
        samples = generate_dataset(config.dataset)
        state = init_model_for(config, make_rng(123))
        metrics = evaluate(state, samples, config)
        # vocab_size=8 -> chance is 0.125; generous band for argmax correlations
        assert 0.0 <= metrics.token_accuracy <= 0.4

    def test_evaluated_plans_satisfy_solver_tolerance(self, tmp_path):
        config = tiny_config(tmp_path)
        samples = generate_dataset(config.dataset)[:5]
        state = init_model_for(config, make_rng(5))
        for sample in samples:
            h_a = sample.x_a @ state.encoder_a.w
            h_v = sample.x_v @ state.encoder_v.w
            from otalign.sinkhorn import similarity

            result = sinkhorn_solve(similarity(h_a, h_v), config.sinkhorn)
            assert result.converged
            assert marginal_residual(result.plan) <= config.sinkhorn.tolerance


class TestTrain:
    def test_zero_epochs_is_noop_evaluation(self, tmp_path):
        config = tiny_config(
            tmp_path,
            schedule=ScheduleConfig(peak_lr=0.01, warmup_epochs=0, total_epochs=0),
        )
        samples = generate_dataset(config.dataset)
        _, eval_samples = split_dataset(samples)
        untrained = evaluate(init_model_for(config, make_rng(config.seed)), eval_samples, config)
        metrics = train(config)
        assert metrics == untrained
        tensors, step_count, _, _ = load_checkpoint_tensors(tmp_path / "run" / "checkpoint")
        assert step_count == 0
        fresh = init_model_for(config, make_rng(config.seed))
        assert np.array_equal(tensors["encoder_a.w"], fresh.encoder_a.w)

    def test_step_count_equals_batches_processed(self, tmp_path):
        config = tiny_config(tmp_path)
        train(config)
        n_train = 30 - 3  # 10% of 30 held out
        batches_per_epoch = math.ceil(n_train / config.batch_size)
        _, step_count, _, _ = load_checkpoint_tensors(tmp_path / "run" / "checkpoint")
        assert step_count == 3 * batches_per_epoch

    def test_bitwise_deterministic_across_runs(self, tmp_path):
        c1 = tiny_config(tmp_path, output_dir=str(tmp_path / "r1"))
        c2 = tiny_config(tmp_path, output_dir=str(tmp_path / "r2"))
        m1 = train(c1)
        m2 = train(c2)
        assert m1 == m2  # exact float equality, not approx
        assert (tmp_path / "r1" / "metrics.csv").read_bytes() == (
            tmp_path / "r2" / "metrics.csv"
        ).read_bytes()
        assert (tmp_path / "r1" / "final_metrics.json").read_bytes() == (
            tmp_path / "r2" / "final_metrics.json"
        ).read_bytes()

    def test_seed_changes_outcome(self, tmp_path):
        m1 = train(tiny_config(tmp_path, output_dir=str(tmp_path / "a"), seed=2))
        m2 = train(tiny_config(tmp_path, output_dir=str(tmp_path / "b"), seed=3))
        assert m1 != m2

    def test_metrics_file_schema(self, tmp_path):
        config = tiny_config(tmp_path)
        train(config)
        lines = (tmp_path / "run" / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,step,lr,ot,ce,total"
        first = lines[1].split(",")
        assert len(first) == 6
        assert int(first[0]) == 0 and int(first[1]) == 1

    def test_report_figures_rendered(self, tmp_path):
        config = tiny_config(tmp_path)
        train(config)
        for name in ("loss_curves.png", "lr_schedule.png", "accuracy_curves.png"):
            assert (tmp_path / "run" / name).exists()

    def test_nan_loss_aborts_and_keeps_last_checkpoint(self, tmp_path, monkeypatch):
        config = tiny_config(
        tmp_path,
            schedule=ScheduleConfig(peak_lr=0.01, warmup_epochs=1, total_epochs=6),
            eval_every=1,
        )
        real_forward = training_mod.forward
        calls = {"n": 0}

        def wrapped(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] > 30:  # past the first eval+checkpoint
                nan = float("nan")
                breakdown, cache = real_forward(*args, **kwargs)
                return LossBreakdown(ot=nan, ce=nan, total=nan), cache
            return real_forward(*args, **kwargs)

        monkeypatch.setattr(training_mod, "forward", wrapped)
        with pytest.raises(NumericError, match="non-finite"):
            train(config)
        # checkpoint from the first eval interval survived the abort
        _, step_count, _, _ = load_checkpoint_tensors(tmp_path / "run" / "checkpoint")
        assert step_count > 0

    def test_unwritable_output_fails_before_training(self, tmp_path):
        target = tmp_path / "blocked"
        target.write_text("a file, not a directory")
        config = tiny_config(tmp_path, output_dir=str(target))
        with pytest.raises(OSError):
            train(config)


class TestSplit:
    def test_holds_out_last_tenth(self):
        samples = list(range(40))
        train_part, eval_part = split_dataset(samples)
        assert train_part == list(range(36))
        assert eval_part == [36, 37, 38, 39]

    def test_small_dataset_keeps_one(self):
        train_part, eval_part = split_dataset([1, 2, 3])
        assert eval_part == [3]
