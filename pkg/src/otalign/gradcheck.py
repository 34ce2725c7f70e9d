"""Finite-difference verification of every analytic gradient.

Each check compares an analytic gradient against the central-difference
oracle and reports a relative error in the Frobenius norm. The model-level
checks pin the transport plan solved at the base point and differentiate
the loss with that plan frozen, matching the stop-gradient convention of
``backward`` (gradients never flow through the Sinkhorn iteration).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import (
    baseline_cross_attention,
    concat_project,
    concat_project_backward,
    cross_attention_backward,
    cross_attention_probs,
    ot_attention,
    ot_attention_backward,
)
from .losses import LossWeights, ce_loss, ot_loss
from .model import FUSION_MODES, backward, forward, init_model, named_parameters, zero_grads
from .numerics import finite_difference_grad, make_rng
from .sinkhorn import SinkhornConfig, sinkhorn_solve

__all__ = ["CheckRecord", "relative_error", "run_full_suite", "TINY_MODEL"]

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4

# Fixed tiny instance for the model-level checks.
TINY_MODEL = dict(
    n_audio=4, n_visual=3, audio_dim=5, visual_dim=4,
    encoder_dim=6, decoder_dim=6, vocab_size=8, caption_len=5,
)


@dataclass(frozen=True)
class CheckRecord:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    scale = max(np.linalg.norm(np.ravel(analytic)), np.linalg.norm(np.ravel(numeric)), 1e-12)
    return float(diff / scale)


def _fd_over_param(param: np.ndarray, run, step: float) -> np.ndarray:
    """Central differences over one (possibly 1-D) parameter array in place."""
    base = param.copy()
    shape = param.shape

    def f(x2d: np.ndarray) -> float:
        param[...] = x2d.reshape(shape)
        return run()

    at = base.reshape(1, -1) if base.ndim == 1 else base
    grad = finite_difference_grad(f, at, step)
    param[...] = base
    return grad.reshape(shape)


def check_ot_loss(rng, step=DEFAULT_STEP, tol=DEFAULT_TOLERANCE) -> list[CheckRecord]:
    records = []
    for shape in [(3, 4), (6, 9)]:
        s = rng.uniform(-1.0, 1.0, size=shape)
        plan = sinkhorn_solve(s, SinkhornConfig(epsilon=0.1)).plan
        tau = 0.07
        _, grad_s = ot_loss(plan, s, tau)
        fd = finite_difference_grad(lambda x: ot_loss(plan, x, tau)[0], s, step)
        records.append(
            CheckRecord(f"ot_loss/grad_s {shape[0]}x{shape[1]}", relative_error(grad_s, fd), tol)
        )
    return records


def check_ce_loss(rng, step=DEFAULT_STEP, tol=DEFAULT_TOLERANCE) -> list[CheckRecord]:
    logits = rng.standard_normal((5, 11))
    targets = rng.integers(0, 11, size=5)
    _, grad = ce_loss(logits, targets)
    fd = finite_difference_grad(lambda x: ce_loss(x, targets)[0], logits, step)
    return [CheckRecord("ce_loss/grad_logits 5x11", relative_error(grad, fd), tol)]


def check_fusion_ops(rng, step=DEFAULT_STEP, tol=DEFAULT_TOLERANCE) -> list[CheckRecord]:
    """Scalar linear readouts through each fusion op, differentiated by hand."""
    n_a, n_v, c, d_out = 4, 3, 6, 5
    h_a = rng.standard_normal((n_a, c))
    h_v = rng.standard_normal((n_v, c))
    plan = sinkhorn_solve(rng.uniform(-1, 1, (n_a, n_v)), SinkhornConfig()).plan
    read_a = rng.standard_normal((n_a, c))
    read_v = rng.standard_normal((n_v, c))
    records = []

    for renorm in (False, True):
        def readout_ot(ha=h_a, hv=h_v, rn=renorm):
            att_a, att_v = ot_attention(ha, hv, plan, rn)
            return float(np.sum(att_a * read_a) + np.sum(att_v * read_v))

        d_h_a, d_h_v = ot_attention_backward(plan, renorm, read_a, read_v)
        fd_a = finite_difference_grad(lambda x: readout_ot(ha=x), h_a, step)
        fd_v = finite_difference_grad(lambda x: readout_ot(hv=x), h_v, step)
        tag = "renorm" if renorm else "literal"
        records.append(
            CheckRecord(f"ot_attention/{tag}/h_a", relative_error(d_h_a, fd_a), tol)
        )
        records.append(
            CheckRecord(f"ot_attention/{tag}/h_v", relative_error(d_h_v, fd_v), tol)
        )

    def readout_cross(ha=h_a, hv=h_v):
        att_a, att_v = baseline_cross_attention(ha, hv)
        return float(np.sum(att_a * read_a) + np.sum(att_v * read_v))

    p_av = cross_attention_probs(h_a, h_v)
    p_va = cross_attention_probs(h_v, h_a)
    d_h_a, d_h_v = cross_attention_backward(h_a, h_v, p_av, p_va, read_a, read_v)
    fd_a = finite_difference_grad(lambda x: readout_cross(ha=x), h_a, step)
    fd_v = finite_difference_grad(lambda x: readout_cross(hv=x), h_v, step)
    records.append(CheckRecord("cross_attention/h_a", relative_error(d_h_a, fd_a), tol))
    records.append(CheckRecord("cross_attention/h_v", relative_error(d_h_v, fd_v), tol))

    w = rng.standard_normal((c, d_out))
    read_out = rng.standard_normal((n_a + n_v, d_out))

    def readout_proj(aa=h_a, av=h_v, ww=w):
        return float(np.sum(concat_project(aa, av, ww) * read_out))

    d_a, d_v, d_w = concat_project_backward(h_a, h_v, w, read_out)
    fd_a = finite_difference_grad(lambda x: readout_proj(aa=x), h_a, step)
    fd_v = finite_difference_grad(lambda x: readout_proj(av=x), h_v, step)
    fd_w = finite_difference_grad(lambda x: readout_proj(ww=x), w, step)
    records.append(CheckRecord("concat_project/attended_audio", relative_error(d_a, fd_a), tol))
    records.append(CheckRecord("concat_project/attended_visual", relative_error(d_v, fd_v), tol))
    records.append(CheckRecord("concat_project/w", relative_error(d_w, fd_w), tol))
    return records


def check_model_params(
    seed: int = 7,
    sinkhorn_cfg: SinkhornConfig = SinkhornConfig(),
    tau: float = 0.07,
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOLERANCE,
    fusion_modes=FUSION_MODES,
    lambda_ots=(0.0, 0.3),
) -> list[CheckRecord]:
    """Every parameter of the fixed tiny model, per fusion mode and OT weight."""
    dims = TINY_MODEL
    records = []
    for fusion_mode in fusion_modes:
        for lambda_ot in lambda_ots:
            rng = make_rng(seed)
            state = init_model(
                rng,
                audio_dim=dims["audio_dim"],
                visual_dim=dims["visual_dim"],
                encoder_dim=dims["encoder_dim"],
                decoder_dim=dims["decoder_dim"],
                vocab_size=dims["vocab_size"],
                n_prefix_tokens=dims["n_audio"] + dims["n_visual"],
            )
            x_a = rng.standard_normal((dims["n_audio"], dims["audio_dim"]))
            x_v = rng.standard_normal((dims["n_visual"], dims["visual_dim"]))
            targets = rng.integers(0, dims["vocab_size"], size=dims["caption_len"])
            weights = LossWeights(lambda_ce=1.0, lambda_ot=lambda_ot, tau=tau)

            _, cache = forward(
                state, x_a, x_v, targets,
                weights=weights, fusion_mode=fusion_mode, sinkhorn_cfg=sinkhorn_cfg,
            )
            frozen = cache.plan.copy()
            zero_grads(state)
            backward(state, cache)
            analytic = {name: grad.copy() for name, _, grad in named_parameters(state)}

            def run() -> float:
                loss, _ = forward(
                    state, x_a, x_v, targets,
                    weights=weights, fusion_mode=fusion_mode,
                    sinkhorn_cfg=sinkhorn_cfg, frozen_plan=frozen,
                )
                return loss.total

            for name, param, _ in named_parameters(state):
                fd = _fd_over_param(param, run, step)
                records.append(
                    CheckRecord(
                        f"model[{fusion_mode},lambda_ot={lambda_ot}]/{name}",
                        relative_error(analytic[name], fd),
                        tol,
                    )
                )
    return records


def run_full_suite(
    seed: int = 7,
    sinkhorn_cfg: SinkhornConfig = SinkhornConfig(),
    tau: float = 0.07,
    step: float = DEFAULT_STEP,
    tol: float = DEFAULT_TOLERANCE,
) -> list[CheckRecord]:
    rng = make_rng(seed)
    records = []
    records += check_ot_loss(rng, step, tol)
    records += check_ce_loss(rng, step, tol)
    records += check_fusion_ops(rng, step, tol)
    records += check_model_params(seed, sinkhorn_cfg, tau, step, tol)
    return records
