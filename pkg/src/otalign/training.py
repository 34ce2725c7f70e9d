"""Training and evaluation loops for the toy alignment pipeline.

The loop is single-threaded and fully deterministic given the config seed:
dataset, parameter init, and batch shuffling all derive from it. Per-batch
loss records go to ``metrics.csv``, held-out metrics to ``eval.csv``, and
checkpoints are written at every evaluation point so a non-finite loss can
abort without losing the last good state.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig, config_hash, config_to_dict
from .data import Sample, generate_dataset
from .errors import ArgumentError, NumericError
from .fileio import load_checkpoint_tensors, save_checkpoint
from .losses import LossWeights
from .model import (
    LinearLayer,
    ModelState,
    ToyDecoder,
    adamw_step,
    backward,
    forward,
    init_model,
    lr_at,
    named_parameters,
    zero_grads,
)
from .numerics import make_rng

__all__ = [
    "Metrics",
    "evaluate",
    "train",
    "split_dataset",
    "state_tensors",
    "state_from_tensors",
    "save_model_checkpoint",
    "load_model_checkpoint",
]

METRICS_FILE = "metrics.csv"
EVAL_FILE = "eval.csv"
FINAL_METRICS_FILE = "final_metrics.json"
CHECKPOINT_DIR = "checkpoint"


@dataclass(frozen=True)
class Metrics:
    alignment_accuracy: float
    token_accuracy: float
    mean_ot_loss: float
    mean_ce_loss: float

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def split_dataset(samples: list[Sample]) -> tuple[list[Sample], list[Sample]]:
    """Train/held-out split: the last 10% (at least one sample) is held out."""
    if len(samples) < 2:
        raise ArgumentError("need at least 2 samples to split")
    n_eval = max(1, len(samples) // 10)
    return samples[:-n_eval], samples[-n_eval:]


def evaluate(state: ModelState, samples: list[Sample], config: ExperimentConfig) -> Metrics:
    """Held-out metrics, reduced in deterministic sample order.

    Alignment accuracy: fraction of audio tokens whose transport-plan
    row-argmax recovers the ground-truth correspondence. Token accuracy:
    teacher-forced greedy decoding accuracy per caption position.
    """
    aligned = 0
    total_tokens = 0
    correct_tokens = 0
    total_positions = 0
    ot_sum = 0.0
    ce_sum = 0.0
    for sample in samples:
        breakdown, cache = forward(
            state,
            sample.x_a,
            sample.x_v,
            sample.caption,
            weights=config.weights,
            fusion_mode=config.fusion_mode,
            renormalize_rows=config.renormalize_rows,
            sinkhorn_cfg=config.sinkhorn,
        )
        pred_match = np.argmax(cache.plan, axis=1)
        aligned += int(np.sum(pred_match == sample.correspondence))
        total_tokens += sample.correspondence.shape[0]
        pred_tokens = np.argmax(cache.logits, axis=1)
        correct_tokens += int(np.sum(pred_tokens == sample.caption))
        total_positions += sample.caption.shape[0]
        ot_sum += breakdown.ot
        ce_sum += breakdown.ce
    n = len(samples)
    return Metrics(
        alignment_accuracy=aligned / total_tokens,
        token_accuracy=correct_tokens / total_positions,
        mean_ot_loss=ot_sum / n,
        mean_ce_loss=ce_sum / n,
    )


def state_tensors(state: ModelState) -> dict[str, np.ndarray]:
    """Flat name->tensor view of all parameters and optimizer moments."""
    tensors = {}
    for name, param, _ in named_parameters(state):
        tensors[name] = param
    for name in state.opt_m:
        tensors[f"adam_m.{name}"] = state.opt_m[name]
        tensors[f"adam_v.{name}"] = state.opt_v[name]
    return tensors


def state_from_tensors(tensors: dict[str, np.ndarray], step_count: int) -> ModelState:
    def take(name: str) -> np.ndarray:
        return np.ascontiguousarray(tensors[name], dtype=np.float64)

    def maybe(name: str):
        return take(name) if name in tensors else None

    decoder = ToyDecoder(
        token_embedding=take("decoder.token_embedding"),
        output_head=LinearLayer(w=take("decoder.head.w"), b=take("decoder.head.b")),
        prefix_pool_weights=take("decoder.pool_weights"),
    )
    state = ModelState(
        encoder_a=LinearLayer(w=take("encoder_a.w"), b=maybe("encoder_a.b")),
        encoder_v=LinearLayer(w=take("encoder_v.w"), b=maybe("encoder_v.b")),
        projector=LinearLayer(w=take("projector.w"), b=None),
        decoder=decoder,
        opt_m={},
        opt_v={},
        step_count=step_count,
    )
    for name, param, _ in named_parameters(state):
        state.opt_m[name] = take(f"adam_m.{name}")
        state.opt_v[name] = take(f"adam_v.{name}")
        if state.opt_m[name].shape != param.shape:
            raise ArgumentError(f"moment shape mismatch for {name}")
    return state


def save_model_checkpoint(directory, state: ModelState, config: ExperimentConfig) -> None:
    save_checkpoint(
        directory,
        state_tensors(state),
        step_count=state.step_count,
        config_hash=config_hash(config),
        config=config_to_dict(config),
    )


def load_model_checkpoint(
    directory, expected_config_hash: Optional[str] = None
) -> tuple[ModelState, Optional[dict]]:
    tensors, step_count, _, config = load_checkpoint_tensors(directory, expected_config_hash)
    return state_from_tensors(tensors, step_count), config


def _check_writable(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    probe = directory / ".write_probe"
    try:
        probe.write_text("")
    except OSError as exc:
        raise OSError(f"output directory {directory} is not writable: {exc}") from exc
    probe.unlink()


def _batch_indices(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def init_model_for(config: ExperimentConfig, rng: np.random.Generator) -> ModelState:
    ds = config.dataset
    return init_model(
        rng,
        audio_dim=ds.audio_dim,
        visual_dim=ds.visual_dim,
        encoder_dim=config.encoder_dim,
        decoder_dim=config.decoder_dim,
        vocab_size=ds.vocab_size,
        n_prefix_tokens=2 * ds.n_latent_tokens,
    )


def train(
    config: ExperimentConfig,
    samples: Optional[list[Sample]] = None,
    quiet: bool = True,
) -> Metrics:
    """Run the experiment end to end; returns the final held-out metrics.

    Artifacts written under config.output_dir: resolved config, per-batch
    metrics.csv, per-eval eval.csv, checkpoints, final_metrics.json, and
    report figures rendered from the CSVs.
    """
    config.validate()
    out_dir = Path(config.output_dir)
    _check_writable(out_dir)
    (out_dir / "config.json").write_text(json.dumps(config_to_dict(config), indent=2) + "\n")

    if samples is None:
        samples = generate_dataset(config.dataset)
    train_samples, eval_samples = split_dataset(samples)

    rng = make_rng(config.seed)
    state = init_model_for(config, rng)
    weights = config.weights

    metrics_path = out_dir / METRICS_FILE
    eval_path = out_dir / EVAL_FILE
    checkpoint_path = out_dir / CHECKPOINT_DIR

    def run_eval(epoch: int, eval_file) -> Metrics:
        m = evaluate(state, eval_samples, config)
        eval_file.writerow(
            [epoch, state.step_count]
            + [repr(getattr(m, f.name)) for f in fields(Metrics)]
        )
        return m

    total_epochs = config.schedule.total_epochs
    n_train = len(train_samples)
    steps_per_epoch = max(1, math.ceil(n_train / config.batch_size))

    with open(metrics_path, "w", newline="") as mf, open(eval_path, "w", newline="") as ef:
        metrics_csv = csv.writer(mf)
        metrics_csv.writerow(["epoch", "step", "lr", "ot", "ce", "total"])
        eval_csv = csv.writer(ef)
        eval_csv.writerow(["epoch", "step"] + [f.name for f in fields(Metrics)])

        for epoch in range(total_epochs):
            order = rng.permutation(n_train)
            for batch_idx, batch in enumerate(_batch_indices(order, config.batch_size)):
                lr = lr_at(config.schedule, epoch, batch_idx, steps_per_epoch)
                zero_grads(state)
                ot_acc = ce_acc = total_acc = 0.0
                for sample_idx in batch:
                    sample = train_samples[sample_idx]
                    breakdown, cache = forward(
                        state,
                        sample.x_a,
                        sample.x_v,
                        sample.caption,
                        weights=weights,
                        fusion_mode=config.fusion_mode,
                        renormalize_rows=config.renormalize_rows,
                        sinkhorn_cfg=config.sinkhorn,
                    )
                    if not math.isfinite(breakdown.total):
                        raise NumericError(
                            f"non-finite loss at epoch {epoch}, step {state.step_count}; "
                            f"last checkpoint retained at {checkpoint_path}"
                        )
                    backward(state, cache)
                    ot_acc += breakdown.ot
                    ce_acc += breakdown.ce
                    total_acc += breakdown.total
                scale = 1.0 / len(batch)
                for _, _, grad in named_parameters(state):
                    grad *= scale
                adamw_step(
                    state,
                    lr,
                    beta1=config.adam_beta1,
                    beta2=config.adam_beta2,
                    eps=config.adam_eps,
                    weight_decay=config.weight_decay,
                )
                metrics_csv.writerow(
                    [
                        epoch,
                        state.step_count,
                        repr(lr),
                        repr(ot_acc * scale),
                        repr(ce_acc * scale),
                        repr(total_acc * scale),
                    ]
                )
            if (epoch + 1) % config.eval_every == 0 and epoch + 1 < total_epochs:
                m = run_eval(epoch, eval_csv)
                save_model_checkpoint(checkpoint_path, state, config)
                if not quiet:
                    print(
                        f"epoch {epoch + 1}/{total_epochs}: "
                        f"align={m.alignment_accuracy:.3f} token={m.token_accuracy:.3f}"
                    )

        final = run_eval(total_epochs - 1 if total_epochs else 0, eval_csv)

    save_model_checkpoint(checkpoint_path, state, config)
    (out_dir / FINAL_METRICS_FILE).write_text(json.dumps(final.to_dict(), indent=2) + "\n")

    from .report import render_run_figures

    render_run_figures(out_dir)
    return final
