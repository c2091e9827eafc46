"""Training losses; every function averages over the batch."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import tensor as tn
from ..nn.tensor import Tensor
from .network import LayerTrace, NetworkOutput


@dataclass
class LossBreakdown:
    l_aff: Tensor
    l_reg: Tensor
    l_ctr: Tensor
    l_stp: Tensor
    total: Tensor

    def as_floats(self) -> dict:
        return {k: float(getattr(self, k).data) for k in ("l_aff", "l_reg", "l_ctr", "l_stp", "total")}


def centroid_loss(trace: LayerTrace, src_centroid_gt, tgt_centroid_gt) -> Tensor:
    """||v_src - sum_l shift_src^l||^2 + ||v_tgt - sum_l shift_tgt^l||^2, batch mean."""
    s_src = trace.total_shift("src")
    s_tgt = trace.total_shift("tgt")
    vs = np.asarray(src_centroid_gt, dtype=s_src.dtype).reshape(s_src.shape)
    vt = np.asarray(tgt_centroid_gt, dtype=s_tgt.dtype).reshape(s_tgt.shape)
    ds = s_src - vs
    dt = s_tgt - vt
    return tn.mean(tn.tsum(ds * ds, axis=-1) + tn.tsum(dt * dt, axis=-1))


def step_penalty(steps, eps: float = 1e-8) -> Tensor:
    """sum_l eps * sigma(alpha_l)^2 given per-layer step sizes (B, 1), batch mean."""
    total = None
    for s in steps:
        term = tn.mean(s * s) * eps
        total = term if total is None else total + term
    return total


def registration_and_affine_loss(R: Tensor, t: Tensor, R_gt, t_gt, src):
    """(l_reg, l_aff).

    l_reg: mean over source points of ||T_pred(x) - T_gt(x)||^2.
    l_aff: squared Frobenius norm of [R|t]_pred - [R|t]_gt.
    """
    R_gt = np.asarray(R_gt, dtype=R.dtype).reshape(R.shape)
    t_gt = np.asarray(t_gt, dtype=t.dtype).reshape(t.shape)
    src = np.asarray(src, dtype=R.dtype).reshape(R.shape[0], -1, 3)
    dR = R - R_gt
    dt = t - t_gt
    # (x dR^T + dt) per point
    diff = Tensor(src) @ dR.T + tn.reshape(dt, (dt.shape[0], 1, 3))
    l_reg = tn.mean(tn.tsum(diff * diff, axis=-1))
    l_aff = tn.mean(tn.tsum(tn.tsum(dR * dR, axis=-1), axis=-1) + tn.tsum(dt * dt, axis=-1))
    return l_reg, l_aff


def total_loss(out: NetworkOutput, R_gt, t_gt, src, src_centroid_gt, tgt_centroid_gt, eps: float = 1e-8) -> LossBreakdown:
    l_reg, l_aff = registration_and_affine_loss(out.R, out.t, R_gt, t_gt, src)
    l_ctr = centroid_loss(out.trace, src_centroid_gt, tgt_centroid_gt)
    l_stp = step_penalty(out.trace.steps, eps)
    return LossBreakdown(l_aff, l_reg, l_ctr, l_stp, l_aff + l_reg + l_ctr + l_stp)
