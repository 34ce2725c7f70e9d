"""Cross-modal fusion: transport-plan attention, concat+project, baseline.

The plan-as-attention op adds to each token a plan-weighted average of the
other modality's tokens with a residual connection. In its literal form
the plan rows sum to 1/N_a (columns to 1/N_v), so the cross-modal term is
downscaled by the token count; the ``renormalize_rows`` flag rescales each
attention row to sum to 1 instead. Both behaviors are exposed because the
ablation harness compares them; the literal form is the default.

The baseline is parameter-free scaled dot-product cross-attention, so the
comparison against plan attention isolates the choice of attention weights
rather than extra learned capacity.

Each forward op has a matching ``*_backward`` companion used by the manual
backpropagation in the model module; attention weights derived from the
transport plan are treated as constants there (stop-gradient through the
Sinkhorn solve), while the baseline's softmax is differentiated through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError
from .numerics import as_matrix, row_softmax

__all__ = [
    "FusedFeatures",
    "ot_attention",
    "ot_attention_backward",
    "concat_project",
    "concat_project_backward",
    "baseline_cross_attention",
    "cross_attention_probs",
    "cross_attention_backward",
]


@dataclass
class FusedFeatures:
    """Fused prefix: token-wise concat of the attended features, projected."""

    h_av: np.ndarray
    attended_audio: np.ndarray
    attended_visual: np.ndarray


def _attention_rows(plan: np.ndarray, renormalize_rows: bool) -> tuple[np.ndarray, np.ndarray]:
    """Attention matrices for the audio and visual sides (plan and plan^T)."""
    if not renormalize_rows:
        return plan, plan.T
    row_sums = plan.sum(axis=1, keepdims=True)
    col_sums = plan.sum(axis=0, keepdims=True)
    if np.any(row_sums == 0.0) or np.any(col_sums == 0.0):
        raise ArgumentError("cannot renormalize a plan with an all-zero row or column")
    return plan / row_sums, plan.T / col_sums.T


def ot_attention(h_a, h_v, plan, renormalize_rows: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Fuse features using the transport plan as cross-attention weights.

    attended_audio  = h_a + A h_v     with A = plan (or its row-normalized form)
    attended_visual = h_v + A^T h_a   symmetrically on the transposed plan
    """
    h_a = as_matrix(h_a, "h_a")
    h_v = as_matrix(h_v, "h_v")
    plan = as_matrix(plan, "plan")
    if h_a.shape[1] != h_v.shape[1]:
        raise ShapeError(
            f"channel mismatch: h_a has {h_a.shape[1]} columns, h_v has {h_v.shape[1]}"
        )
    if plan.shape != (h_a.shape[0], h_v.shape[0]):
        raise ShapeError(
            f"plan shape {plan.shape} does not match token counts "
            f"({h_a.shape[0]}, {h_v.shape[0]})"
        )
    attn_a, attn_v = _attention_rows(plan, renormalize_rows)
    return h_a + attn_a @ h_v, h_v + attn_v @ h_a


def ot_attention_backward(
    plan, renormalize_rows: bool, grad_audio, grad_visual
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. (h_a, h_v) with the plan held constant."""
    attn_a, attn_v = _attention_rows(as_matrix(plan, "plan"), renormalize_rows)
    d_h_a = grad_audio + attn_v.T @ grad_visual
    d_h_v = grad_visual + attn_a.T @ grad_audio
    return d_h_a, d_h_v


def concat_project(attended_audio, attended_visual, w) -> np.ndarray:
    """Stack the attended tokens row-wise and apply the linear projection."""
    a = as_matrix(attended_audio, "attended_audio")
    v = as_matrix(attended_visual, "attended_visual")
    w = as_matrix(w, "w")
    if a.shape[1] != v.shape[1]:
        raise ShapeError(
            f"channel mismatch: attended_audio has {a.shape[1]} columns, "
            f"attended_visual has {v.shape[1]}"
        )
    if w.shape[0] != a.shape[1]:
        raise ShapeError(
            f"projection expects {a.shape[1]} input channels, w has {w.shape[0]} rows"
        )
    return np.vstack([a, v]) @ w


def concat_project_backward(
    attended_audio, attended_visual, w, grad_out
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients w.r.t. (attended_audio, attended_visual, w)."""
    n_a = attended_audio.shape[0]
    stacked = np.vstack([attended_audio, attended_visual])
    grad_w = stacked.T @ grad_out
    grad_stacked = grad_out @ w.T
    return grad_stacked[:n_a], grad_stacked[n_a:], grad_w


def cross_attention_probs(h_a, h_v) -> np.ndarray:
    """Row-wise softmax of h_a h_v^T / sqrt(C)."""
    scale = math.sqrt(h_a.shape[1])
    return row_softmax(h_a @ h_v.T / scale)


def baseline_cross_attention(h_a, h_v) -> tuple[np.ndarray, np.ndarray]:
    """Parameter-free scaled dot-product cross-attention with residuals."""
    h_a = as_matrix(h_a, "h_a")
    h_v = as_matrix(h_v, "h_v")
    if h_a.shape[1] != h_v.shape[1]:
        raise ShapeError(
            f"channel mismatch: h_a has {h_a.shape[1]} columns, h_v has {h_v.shape[1]}"
        )
    p_av = cross_attention_probs(h_a, h_v)
    p_va = cross_attention_probs(h_v, h_a)
    return h_a + p_av @ h_v, h_v + p_va @ h_a


def _softmax_rows_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    # Jacobian-vector product of a row-wise softmax: p * (g - <g, p>).
    inner = np.sum(grad_probs * probs, axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def cross_attention_backward(
    h_a, h_v, p_av, p_va, grad_audio, grad_visual
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients w.r.t. (h_a, h_v), differentiating through both softmaxes."""
    scale = math.sqrt(h_a.shape[1])
    d_h_a = grad_audio.copy()
    d_h_v = p_av.T @ grad_audio
    d_logits = _softmax_rows_backward(p_av, grad_audio @ h_v.T) / scale
    d_h_a += d_logits @ h_v
    d_h_v += d_logits.T @ h_a

    d_h_v += grad_visual
    d_h_a += p_va.T @ grad_visual
    d_logits = _softmax_rows_backward(p_va, grad_visual @ h_a.T) / scale
    d_h_v += d_logits @ h_a
    d_h_a += d_logits.T @ h_v
    return d_h_a, d_h_v
