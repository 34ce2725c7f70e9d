"""Toy differentiable pipeline: encoders -> OT alignment -> fusion -> decoder.

Both encoders are single trainable linear layers; the decoder is a
prefix-conditioned bigram head: the logits at position i are

    output_head(token_embedding[y_{i-1}] + pooled)

where pooled is a learned softmax-weighted average of the fused prefix
tokens and a fixed all-zero embedding stands in for the begin-of-sequence
token, so position i conditions only on earlier tokens plus the prefix
(strict causality).

All gradients are analytic and hand-derived; ``backward`` accumulates into
the gradient buffers, with the transport plan treated as a constant
(gradients flow through the similarity matrix, not the Sinkhorn solve).
The optimizer is AdamW with decoupled weight decay, and the schedule is a
linear warmup into cosine decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ArgumentError, ShapeError, StateError
from .fusion import (
    baseline_cross_attention,
    concat_project,
    concat_project_backward,
    cross_attention_backward,
    cross_attention_probs,
    ot_attention,
    ot_attention_backward,
)
from .losses import LossBreakdown, LossWeights, ce_loss, ot_loss, total_loss
from .numerics import as_matrix
from .sinkhorn import SinkhornConfig, SinkhornResult, similarity, sinkhorn_solve

__all__ = [
    "FUSION_MODES",
    "LinearLayer",
    "ToyDecoder",
    "ModelState",
    "ScheduleConfig",
    "ForwardCache",
    "init_model",
    "named_parameters",
    "zero_grads",
    "forward",
    "backward",
    "adamw_step",
    "lr_at",
]

FUSION_MODES = ("ot", "cross", "none")


@dataclass
class LinearLayer:
    """y = x @ w + b with paired gradient buffers; b may be absent."""

    w: np.ndarray
    b: Optional[np.ndarray]
    grad_w: np.ndarray = field(init=False)
    grad_b: Optional[np.ndarray] = field(init=False)

    def __post_init__(self):
        self.grad_w = np.zeros_like(self.w)
        self.grad_b = np.zeros_like(self.b) if self.b is not None else None

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out


@dataclass
class ToyDecoder:
    """Prefix-pooled bigram decoder over a toy vocabulary."""

    token_embedding: np.ndarray  # (V, D)
    output_head: LinearLayer  # D -> V
    prefix_pool_weights: np.ndarray  # one logit per fused prefix token
    grad_token_embedding: np.ndarray = field(init=False)
    grad_pool_weights: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.token_embedding.shape[0] < 2:
            raise ArgumentError("vocabulary size must be >= 2")
        if self.output_head.w.shape != (self.token_embedding.shape[1], self.token_embedding.shape[0]):
            raise ShapeError(
                f"output head {self.output_head.w.shape} inconsistent with "
                f"embedding {self.token_embedding.shape}"
            )
        self.grad_token_embedding = np.zeros_like(self.token_embedding)
        self.grad_pool_weights = np.zeros_like(self.prefix_pool_weights)


@dataclass
class ModelState:
    """All trainable parameters plus AdamW moments and the step counter.

    ``version`` increments whenever parameters are mutated so that a
    cached forward pass can be detected as stale by ``backward``.
    """

    encoder_a: LinearLayer
    encoder_v: LinearLayer
    projector: LinearLayer  # bias-free, encoder channels -> decoder dim
    decoder: ToyDecoder
    opt_m: dict[str, np.ndarray]
    opt_v: dict[str, np.ndarray]
    step_count: int = 0
    version: int = 0


@dataclass(frozen=True)
class ScheduleConfig:
    """Linear warmup across warmup_epochs, cosine decay to zero after."""

    peak_lr: float = 5e-6
    warmup_epochs: int = 2
    total_epochs: int = 100

    def validate(self) -> None:
        if self.peak_lr <= 0:
            raise ArgumentError(f"peak_lr must be positive, got {self.peak_lr}")
        if self.warmup_epochs < 0:
            raise ArgumentError("warmup_epochs must be >= 0")
        if self.total_epochs == 0 and self.warmup_epochs == 0:
            return  # no-op schedule: training loop runs zero epochs
        if not self.warmup_epochs < self.total_epochs:
            raise ArgumentError(
                f"warmup_epochs ({self.warmup_epochs}) must be < total_epochs "
                f"({self.total_epochs})"
            )


def init_model(
    rng: np.random.Generator,
    audio_dim: int,
    visual_dim: int,
    encoder_dim: int,
    decoder_dim: int,
    vocab_size: int,
    n_prefix_tokens: int,
) -> ModelState:
    """Random initialization: 1/sqrt(fan-in) weights, zero biases.

    The encoders and the projector are bias-free: a shared bias across
    tokens only distorts the cosine geometry the alignment loss works on
    (the decoder head's bias already absorbs any constant offset), and
    under Adam's per-parameter step normalization that redundant channel
    is enough to derail alignment on unlucky seeds.
    """

    def linear(d_in: int, d_out: int, bias: bool = True) -> LinearLayer:
        w = rng.standard_normal((d_in, d_out)) / math.sqrt(d_in)
        b = np.zeros(d_out) if bias else None
        return LinearLayer(w=w, b=b)

    decoder = ToyDecoder(
        token_embedding=rng.standard_normal((vocab_size, decoder_dim))
        / math.sqrt(decoder_dim),
        output_head=linear(decoder_dim, vocab_size),
        prefix_pool_weights=np.zeros(n_prefix_tokens),
    )
    state = ModelState(
        encoder_a=linear(audio_dim, encoder_dim, bias=False),
        encoder_v=linear(visual_dim, encoder_dim, bias=False),
        projector=linear(encoder_dim, decoder_dim, bias=False),
        decoder=decoder,
        opt_m={},
        opt_v={},
    )
    for name, param, _ in named_parameters(state):
        state.opt_m[name] = np.zeros_like(param)
        state.opt_v[name] = np.zeros_like(param)
    return state


def named_parameters(state: ModelState) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
    """Deterministic (name, parameter, gradient buffer) iteration.

    Bias-free layers contribute only their weight matrices.
    """
    for prefix, layer in (
        ("encoder_a", state.encoder_a),
        ("encoder_v", state.encoder_v),
        ("projector", state.projector),
    ):
        yield f"{prefix}.w", layer.w, layer.grad_w
        if layer.b is not None:
            yield f"{prefix}.b", layer.b, layer.grad_b
    dec = state.decoder
    yield "decoder.token_embedding", dec.token_embedding, dec.grad_token_embedding
    yield "decoder.head.w", dec.output_head.w, dec.output_head.grad_w
    yield "decoder.head.b", dec.output_head.b, dec.output_head.grad_b
    yield "decoder.pool_weights", dec.prefix_pool_weights, dec.grad_pool_weights


def zero_grads(state: ModelState) -> None:
    for _, _, grad in named_parameters(state):
        grad.fill(0.0)


@dataclass
class ForwardCache:
    """Every intermediate the backward pass needs, pinned to a state version."""

    version: int
    weights: LossWeights
    fusion_mode: str
    renormalize_rows: bool
    x_a: np.ndarray
    x_v: np.ndarray
    targets: np.ndarray
    h_a: np.ndarray
    h_v: np.ndarray
    a_norms: np.ndarray
    v_norms: np.ndarray
    a_hat: np.ndarray
    v_hat: np.ndarray
    s: np.ndarray
    sinkhorn: Optional[SinkhornResult]
    plan: np.ndarray
    grad_s_ot: np.ndarray
    p_av: Optional[np.ndarray]
    p_va: Optional[np.ndarray]
    att_a: np.ndarray
    att_v: np.ndarray
    h_av: np.ndarray
    pool_probs: np.ndarray
    pooled: np.ndarray
    emb_inputs: np.ndarray
    logits: np.ndarray
    grad_logits: np.ndarray


def _decoder_inputs(decoder: ToyDecoder, targets: np.ndarray) -> np.ndarray:
    """Shifted token embeddings; the BOS slot at position 0 is all zeros."""
    t_len = targets.shape[0]
    emb = np.zeros((t_len, decoder.token_embedding.shape[1]))
    if t_len > 1:
        emb[1:] = decoder.token_embedding[targets[:-1]]
    return emb


def forward(
    state: ModelState,
    x_a,
    x_v,
    targets,
    weights: LossWeights = LossWeights(),
    fusion_mode: str = "ot",
    renormalize_rows: bool = False,
    sinkhorn_cfg: SinkhornConfig = SinkhornConfig(),
    frozen_plan: Optional[np.ndarray] = None,
) -> tuple[LossBreakdown, ForwardCache]:
    """Full pipeline pass returning the loss breakdown and cached activations.

    ``frozen_plan`` skips the Sinkhorn solve and uses the given plan
    instead; the gradient checks rely on this to finite-difference the
    loss under the same stop-gradient convention as ``backward``.
    """
    weights.validate()
    if fusion_mode not in FUSION_MODES:
        raise ArgumentError(f"fusion_mode must be one of {FUSION_MODES}, got {fusion_mode!r}")
    x_a = as_matrix(x_a, "x_a")
    x_v = as_matrix(x_v, "x_v")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.shape[0] < 1:
        raise ArgumentError("targets must be a non-empty 1-D token vector")
    if x_a.shape[0] < 1 or x_v.shape[0] < 1:
        raise ArgumentError("each modality needs at least one input token")
    n_prefix = x_a.shape[0] + x_v.shape[0]
    if state.decoder.prefix_pool_weights.shape[0] != n_prefix:
        raise ShapeError(
            f"decoder pools {state.decoder.prefix_pool_weights.shape[0]} prefix "
            f"tokens but inputs provide {n_prefix}"
        )

    h_a = state.encoder_a.forward(x_a)
    h_v = state.encoder_v.forward(x_v)

    a_norms = np.linalg.norm(h_a, axis=1)
    v_norms = np.linalg.norm(h_v, axis=1)
    s = similarity(h_a, h_v)
    a_hat = h_a / a_norms[:, None]
    v_hat = h_v / v_norms[:, None]

    sink_result = None
    if frozen_plan is not None:
        plan = as_matrix(frozen_plan, "frozen_plan")
        if plan.shape != s.shape:
            raise ShapeError(f"frozen plan shape {plan.shape} != similarity shape {s.shape}")
    else:
        sink_result = sinkhorn_solve(s, sinkhorn_cfg)
        plan = sink_result.plan

    ot_value, grad_s_ot = ot_loss(plan, s, weights.tau)

    p_av = p_va = None
    if fusion_mode == "ot":
        att_a, att_v = ot_attention(h_a, h_v, plan, renormalize_rows)
    elif fusion_mode == "cross":
        p_av = cross_attention_probs(h_a, h_v)
        p_va = cross_attention_probs(h_v, h_a)
        att_a, att_v = baseline_cross_attention(h_a, h_v)
    else:
        att_a, att_v = h_a, h_v

    h_av = concat_project(att_a, att_v, state.projector.w)

    pool_logits = state.decoder.prefix_pool_weights
    shifted = pool_logits - pool_logits.max()
    pool_probs = np.exp(shifted) / np.sum(np.exp(shifted))
    pooled = h_av.T @ pool_probs

    emb_inputs = _decoder_inputs(state.decoder, targets)
    z = emb_inputs + pooled[None, :]
    logits = state.decoder.output_head.forward(z)
    ce_value, grad_logits = ce_loss(logits, targets)

    breakdown = total_loss(ot_value, ce_value, weights)
    cache = ForwardCache(
        version=state.version,
        weights=weights,
        fusion_mode=fusion_mode,
        renormalize_rows=renormalize_rows,
        x_a=x_a,
        x_v=x_v,
        targets=targets,
        h_a=h_a,
        h_v=h_v,
        a_norms=a_norms,
        v_norms=v_norms,
        a_hat=a_hat,
        v_hat=v_hat,
        s=s,
        sinkhorn=sink_result,
        plan=plan,
        grad_s_ot=grad_s_ot,
        p_av=p_av,
        p_va=p_va,
        att_a=att_a,
        att_v=att_v,
        h_av=h_av,
        pool_probs=pool_probs,
        pooled=pooled,
        emb_inputs=emb_inputs,
        logits=logits,
        grad_logits=grad_logits,
    )
    return breakdown, cache


def _cosine_backward(cache: ForwardCache, grad_s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # d/dh of s_ij = <a_hat_i, v_hat_j>: project off the radial component,
    # then undo the row normalization.
    g_a = grad_s @ cache.v_hat
    g_a -= cache.a_hat * np.sum(g_a * cache.a_hat, axis=1, keepdims=True)
    g_a /= cache.a_norms[:, None]
    g_v = grad_s.T @ cache.a_hat
    g_v -= cache.v_hat * np.sum(g_v * cache.v_hat, axis=1, keepdims=True)
    g_v /= cache.v_norms[:, None]
    return g_a, g_v


def backward(state: ModelState, cache: ForwardCache) -> None:
    """Accumulate analytic gradients of the cached total loss into state.

    Callers own zeroing (``zero_grads``); repeated calls accumulate, which
    is what mini-batch averaging wants. Parameters are never mutated.
    """
    if cache.version != state.version:
        raise StateError(
            f"stale forward cache (state version {state.version}, cache {cache.version})"
        )
    w = cache.weights
    d_h_a = np.zeros_like(cache.h_a)
    d_h_v = np.zeros_like(cache.h_v)

    if w.lambda_ce != 0.0:
        grad_logits = w.lambda_ce * cache.grad_logits
        z = cache.emb_inputs + cache.pooled[None, :]
        head = state.decoder.output_head
        head.grad_w += z.T @ grad_logits
        head.grad_b += grad_logits.sum(axis=0)
        d_z = grad_logits @ head.w.T

        # BOS slot (position 0) is a constant, so only shifted targets get
        # embedding gradient.
        if cache.targets.shape[0] > 1:
            np.add.at(state.decoder.grad_token_embedding, cache.targets[:-1], d_z[1:])

        d_pooled = d_z.sum(axis=0)
        d_pool_probs = cache.h_av @ d_pooled
        probs = cache.pool_probs
        state.decoder.grad_pool_weights += probs * (
            d_pool_probs - float(d_pool_probs @ probs)
        )
        d_h_av = probs[:, None] * d_pooled[None, :]

        d_att_a, d_att_v, d_w_proj = concat_project_backward(
            cache.att_a, cache.att_v, state.projector.w, d_h_av
        )
        state.projector.grad_w += d_w_proj

        if cache.fusion_mode == "ot":
            d_h_a_f, d_h_v_f = ot_attention_backward(
                cache.plan, cache.renormalize_rows, d_att_a, d_att_v
            )
        elif cache.fusion_mode == "cross":
            d_h_a_f, d_h_v_f = cross_attention_backward(
                cache.h_a, cache.h_v, cache.p_av, cache.p_va, d_att_a, d_att_v
            )
        else:
            d_h_a_f, d_h_v_f = d_att_a, d_att_v
        d_h_a += d_h_a_f
        d_h_v += d_h_v_f

    if w.lambda_ot != 0.0:
        g_a, g_v = _cosine_backward(cache, w.lambda_ot * cache.grad_s_ot)
        d_h_a += g_a
        d_h_v += g_v

    state.encoder_a.grad_w += cache.x_a.T @ d_h_a
    state.encoder_v.grad_w += cache.x_v.T @ d_h_v
    if state.encoder_a.grad_b is not None:
        state.encoder_a.grad_b += d_h_a.sum(axis=0)
    if state.encoder_v.grad_b is not None:
        state.encoder_v.grad_b += d_h_v.sum(axis=0)


def adamw_step(
    state: ModelState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-6,
) -> None:
    """Decoupled weight-decay Adam update with bias-corrected moments."""
    state.step_count += 1
    t = state.step_count
    for name, param, grad in named_parameters(state):
        m = state.opt_m[name]
        v = state.opt_v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        param -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * param)
    state.version += 1


def lr_at(
    schedule: ScheduleConfig, epoch: int, step_in_epoch: int = 0, steps_per_epoch: int = 1
) -> float:
    """Learning rate at a (possibly fractional) epoch position."""
    schedule.validate()
    if steps_per_epoch < 1:
        raise ArgumentError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    if not 0 <= step_in_epoch < steps_per_epoch:
        raise ArgumentError(
            f"step_in_epoch {step_in_epoch} outside [0, {steps_per_epoch})"
        )
    if not 0 <= epoch < schedule.total_epochs:
        raise ArgumentError(
            f"epoch {epoch} outside schedule of {schedule.total_epochs} epochs"
        )
    position = epoch + step_in_epoch / steps_per_epoch
    if schedule.warmup_epochs > 0 and position < schedule.warmup_epochs:
        return schedule.peak_lr * position / schedule.warmup_epochs
    progress = (position - schedule.warmup_epochs) / (
        schedule.total_epochs - schedule.warmup_epochs
    )
    return schedule.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
