"""Entropic optimal transport between token sequences.

Solves, for a similarity matrix S (rows: audio tokens, cols: visual
tokens), the entropy-regularized assignment problem

    maximize  <Q, S> + epsilon * H(Q)
    over      Q >= 0,  row sums = 1/N_a,  column sums = 1/N_v

whose optimum has the scaling form Diag(u) exp(S/epsilon) Diag(v). The
solver runs the Sinkhorn-Knopp alternating updates entirely in the log
domain, which stays stable down to epsilon ~ 1e-2 where the kernel
exp(S/epsilon) itself would overflow the scaling-domain iteration.

``exact_ot_square`` is the brute-force epsilon->0 oracle for small square
instances: with uniform marginals the unregularized optimum is a scaled
permutation matrix, so enumerating permutations is exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError
from .numerics import as_matrix, logsumexp_axis

__all__ = [
    "SinkhornConfig",
    "SinkhornResult",
    "similarity",
    "sinkhorn_solve",
    "marginal_residual",
    "exact_ot_square",
]

EXACT_OT_MAX_SIZE = 8


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver hyperparameters.

    epsilon:   entropy-regularization weight (> 0); smaller values give
               sharper, more permutation-like plans but slower convergence.
    tolerance: stop once the worst row/column marginal deviation falls
               below this.
    max_iters: iteration cap; hitting it yields converged=False, not an
               error, so training can proceed with the best plan found.
    """

    epsilon: float = 0.1
    tolerance: float = 1e-8
    max_iters: int = 1000

    def validate(self) -> None:
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ArgumentError(f"epsilon must be positive, got {self.epsilon}")
        if not (self.tolerance > 0 and math.isfinite(self.tolerance)):
            raise ArgumentError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iters < 1:
            raise ArgumentError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass
class SinkhornResult:
    """Converged (or best-effort) transport plan plus diagnostics.

    The plan is reconstructable from the log-domain scalings:
    q_ij = exp(log_u_i + s_ij/epsilon + log_v_j).
    residual_history holds the marginal residual after each iteration.
    """

    plan: np.ndarray
    iterations: int
    residual: float
    converged: bool
    log_u: np.ndarray
    log_v: np.ndarray
    residual_history: list[float] = field(default_factory=list)


def similarity(h_a, h_v) -> np.ndarray:
    """Pairwise cosine similarity between token rows of two feature matrices.

    Entry (i, j) is the cosine of audio token i and visual token j; values
    lie in [-1, 1] up to rounding. Tokens must share the channel dimension
    and no token row may be all-zero.
    """
    h_a = as_matrix(h_a, "h_a")
    h_v = as_matrix(h_v, "h_v")
    if h_a.shape[1] != h_v.shape[1]:
        raise ShapeError(
            f"channel mismatch: h_a has {h_a.shape[1]} columns, h_v has {h_v.shape[1]}"
        )
    for name, h in (("h_a", h_a), ("h_v", h_v)):
        norms = np.linalg.norm(h, axis=1)
        if np.any(norms == 0.0):
            row = int(np.argmin(norms))
            raise ArgumentError(f"zero-norm token row {row} in {name}")
    a_hat = h_a / np.linalg.norm(h_a, axis=1, keepdims=True)
    v_hat = h_v / np.linalg.norm(h_v, axis=1, keepdims=True)
    return a_hat @ v_hat.T


def marginal_residual(plan) -> float:
    """Worst deviation of any row sum from 1/N_a or column sum from 1/N_v."""
    q = as_matrix(plan, "plan")
    n_a, n_v = q.shape
    row_dev = np.abs(q.sum(axis=1) - 1.0 / n_a)
    col_dev = np.abs(q.sum(axis=0) - 1.0 / n_v)
    return float(max(row_dev.max(), col_dev.max()))


def sinkhorn_solve(s, config: SinkhornConfig = SinkhornConfig()) -> SinkhornResult:
    """Log-domain Sinkhorn-Knopp iteration toward uniform marginals.

    Alternates exact row and column rescalings of exp(S/epsilon); after
    each column update the column sums are exact, so the per-iteration
    residual is driven by the rows. Stops when the residual drops below
    config.tolerance or after config.max_iters iterations.
    """
    config.validate()
    s = as_matrix(s, "s")
    n_a, n_v = s.shape
    log_kernel = s / config.epsilon
    if not np.all(np.isfinite(log_kernel)):
        raise NumericError("S/epsilon is non-finite before iteration 0")

    log_row_target = -math.log(n_a)
    log_col_target = -math.log(n_v)

    log_u = np.zeros(n_a)
    log_v = np.zeros(n_v)
    history: list[float] = []
    iterations = 0
    converged = False

    # The iteration is overhead-bound at token-sequence sizes, so the two
    # log-sum-exp reductions per step run on preallocated buffers.
    work = np.empty_like(log_kernel)

    def lse_rows(v: np.ndarray) -> np.ndarray:
        np.add(log_kernel, v[None, :], out=work)
        shift = work.max(axis=1)
        np.subtract(work, shift[:, None], out=work)
        np.exp(work, out=work)
        acc = work.sum(axis=1)
        np.log(acc, out=acc)
        acc += shift
        return acc

    def lse_cols(u: np.ndarray) -> np.ndarray:
        np.add(log_kernel, u[:, None], out=work)
        shift = work.max(axis=0)
        np.subtract(work, shift[None, :], out=work)
        np.exp(work, out=work)
        acc = work.sum(axis=0)
        np.log(acc, out=acc)
        acc += shift
        return acc

    # lse over j of (log_kernel + log_v); reused as the next row update.
    row_lse = lse_rows(log_v)
    for it in range(1, config.max_iters + 1):
        log_u = log_row_target - row_lse
        log_v = log_col_target - lse_cols(log_u)
        row_lse = lse_rows(log_v)
        # Columns are exact after the column update, so the residual is the
        # row-sum deviation of the current plan.
        residual = float(np.max(np.abs(np.exp(log_u + row_lse) - 1.0 / n_a)))
        history.append(residual)
        iterations = it
        if not math.isfinite(residual):
            raise NumericError(f"non-finite scaling vector at iteration {it}")
        if residual <= config.tolerance:
            converged = True
            break

    plan = np.exp(log_u[:, None] + log_kernel + log_v[None, :])
    final_residual = marginal_residual(plan)
    return SinkhornResult(
        plan=plan,
        iterations=iterations,
        residual=final_residual,
        converged=converged and final_residual <= config.tolerance,
        log_u=log_u,
        log_v=log_v,
        residual_history=history,
    )


def exact_ot_square(s) -> np.ndarray:
    """Brute-force optimal plan for square instances by permutation search.

    Enumerates all n! permutations and returns the plan with mass 1/n on
    the permutation maximizing sum_i s[i, pi(i)]; ties go to the
    lexicographically smallest permutation. Restricted to n <= 8.
    """
    s = as_matrix(s, "s")
    n_a, n_v = s.shape
    if n_a != n_v:
        raise ArgumentError(f"exact_ot_square requires a square matrix, got {s.shape}")
    n = n_a
    if n > EXACT_OT_MAX_SIZE:
        raise ArgumentError(f"exact_ot_square limited to n <= {EXACT_OT_MAX_SIZE}, got {n}")
    best_perm = None
    best_score = -math.inf
    # itertools.permutations yields lexicographic order, so strict
    # improvement keeps the lexicographically smallest argmax.
    for perm in itertools.permutations(range(n)):
        score = float(s[np.arange(n), perm].sum())
        if score > best_score:
            best_score = score
            best_perm = perm
    plan = np.zeros((n, n))
    plan[np.arange(n), best_perm] = 1.0 / n
    return plan
