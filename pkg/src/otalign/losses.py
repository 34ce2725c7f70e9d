"""Training objectives: OT alignment loss, autoregressive CE, weighted total.

The OT alignment loss is a two-sided contrastive objective over the
transport plan Q and similarity matrix S: for the audio side the i-th row
of Q must match the i-th row of S better (under inner product / tau) than
any other row of S, and symmetrically for columns on the visual side. The
plan is treated as a constant (stop-gradient through the Sinkhorn solve),
so the analytic gradient is taken with respect to S only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError
from .numerics import as_matrix, logsumexp_axis, row_softmax

__all__ = ["LossWeights", "LossBreakdown", "ot_loss", "ce_loss", "total_loss"]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total objective and the contrastive temperature."""

    lambda_ce: float = 1.0
    lambda_ot: float = 0.3
    tau: float = 0.07

    def validate(self) -> None:
        if self.tau <= 0:
            raise ArgumentError(f"tau must be positive, got {self.tau}")
        if self.lambda_ce < 0 or self.lambda_ot < 0:
            raise ArgumentError("loss weights must be nonnegative")
        if self.lambda_ce == 0 and self.lambda_ot == 0:
            raise ArgumentError("at least one loss weight must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    ot: float
    ce: float
    total: float


def _contrastive_side(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Sum of -log softmax(logits_i)[i] over rows, and d(loss)/d(logits)."""
    lse = logsumexp_axis(logits, axis=1)
    loss = float(np.sum(lse - np.diag(logits)))
    grad = row_softmax(logits)
    grad[np.diag_indices_from(grad)] -= 1.0
    return loss, grad


def ot_loss(q, s, tau: float) -> tuple[float, np.ndarray]:
    """Two-sided contrastive alignment loss and its gradient w.r.t. S.

    Rows (audio side): logits A_ij = <row_i(Q), row_j(S)> / tau with the
    diagonal as the positive. Columns (visual side): the same with column
    vectors. Returns (loss, grad_s); Q is held constant, so grad_s is

        grad_s = (softmax(A) - I)^T Q / tau  +  Q (softmax(B) - I) / tau

    The loss is a sum of categorical cross-entropies, hence >= 0, and is
    exactly 0 for 1x1 inputs where each softmax is a singleton.
    """
    if tau <= 0:
        raise ArgumentError(f"tau must be positive, got {tau}")
    q = as_matrix(q, "q")
    s = as_matrix(s, "s")
    if q.shape != s.shape:
        raise ShapeError(f"plan shape {q.shape} does not match similarity shape {s.shape}")

    logits_rows = (q @ s.T) / tau
    logits_cols = (q.T @ s) / tau
    loss_a, grad_a = _contrastive_side(logits_rows)
    loss_v, grad_v = _contrastive_side(logits_cols)
    grad_s = (grad_a.T @ q) / tau + (q @ grad_v) / tau
    return loss_a + loss_v, grad_s


def ce_loss(logits, targets) -> tuple[float, np.ndarray]:
    """Mean autoregressive cross-entropy over T positions.

    logits: (T x V) unnormalized scores, targets: length-T token indices.
    Returns (loss, grad_logits) with grad = (softmax - one_hot) / T per
    row; each gradient row sums to zero.
    """
    logits = as_matrix(logits, "logits")
    t_len, vocab = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.ndim != 1 or targets.shape[0] != t_len:
        raise ShapeError(
            f"targets must be a length-{t_len} vector, got shape {targets.shape}"
        )
    for pos, tok in enumerate(targets):
        if not 0 <= tok < vocab:
            raise ArgumentError(
                f"target {tok} at position {pos} outside vocabulary [0, {vocab})"
            )
    lse = logsumexp_axis(logits, axis=1)
    picked = logits[np.arange(t_len), targets]
    loss = float(np.mean(lse - picked))
    grad = row_softmax(logits)
    grad[np.arange(t_len), targets] -= 1.0
    grad /= t_len
    return loss, grad


def total_loss(ot: float, ce: float, w: LossWeights) -> LossBreakdown:
    """Weighted sum of the two objectives."""
    if not (math.isfinite(ot) and math.isfinite(ce)):
        raise ArgumentError("loss terms must be finite")
    w.validate()
    return LossBreakdown(ot=ot, ce=ce, total=w.lambda_ce * ce + w.lambda_ot * ot)
