"""Pure-numpy kernels; reference semantics for the compiled twin.

All functions take contiguous float64 arrays (mask as uint8) and share the
exact argument order with `dualproto._kernels`. Temperatures arrive as
reciprocals so the kernels never divide.
"""

from __future__ import annotations

import numpy as np

_LOG_FLOOR = 1e-300  # entries this small only ever multiply exact zeros


def proto_probs(feats, tproto, vproto, has, alpha, beta, inv_temp):
    """Per-view class probabilities from fused textual + visual similarity."""
    sims_t = feats @ tproto.T
    sims_v = feats @ vproto.T
    logits = sims_t + (has != 0) * alpha * np.exp(-beta * (1.0 - sims_v))
    z = logits * inv_temp
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    return p


def entropy_mean_grad(feats, tproto, vproto, has, alpha, beta, inv_temp):
    """Entropy of the mean prediction over `feats`, with prototype gradients.

    Returns (loss, d/d tproto, d/d vproto); gradients are with respect to
    the already-normalized prototype rows.
    """
    k = feats.shape[0]
    sims_v = feats @ vproto.T
    aff = (has != 0) * alpha * np.exp(-beta * (1.0 - sims_v))
    z = (feats @ tproto.T + aff) * inv_temp
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)

    pbar = p.mean(axis=0)
    nz = pbar > 0.0
    loss = float(-(pbar[nz] * np.log(pbar[nz])).sum())

    # d loss / d pbar, floored so exact-zero probabilities stay inert
    gpbar = -(np.log(np.maximum(pbar, _LOG_FLOOR)) + 1.0)
    gp = np.broadcast_to(gpbar / k, p.shape)
    dots = (gp * p).sum(axis=1, keepdims=True)
    gz = p * (gp - dots) * inv_temp

    gt = gz.T @ feats
    gv = (gz * beta * aff).T @ feats  # d affinity/dx = beta * affinity
    return loss, gt, gv


def align_loss_grad(tproto, vproto, inv_temp):
    """Symmetric InfoNCE over the class-by-class similarity matrix.

    Diagonal pairs are positives in both the row and column direction.
    Returns (loss, d/d tproto, d/d vproto).
    """
    c = tproto.shape[0]
    g = (tproto @ vproto.T) * inv_temp

    row_max = g.max(axis=1, keepdims=True)
    row_exp = np.exp(g - row_max)
    row_lse = np.log(row_exp.sum(axis=1, keepdims=True)) + row_max
    col_max = g.max(axis=0, keepdims=True)
    col_exp = np.exp(g - col_max)
    col_lse = np.log(col_exp.sum(axis=0, keepdims=True)) + col_max

    diag = np.diagonal(g)
    loss = float((row_lse.sum() + col_lse.sum() - 2.0 * diag.sum()) / c)

    sm_rows = row_exp / row_exp.sum(axis=1, keepdims=True)
    sm_cols = col_exp / col_exp.sum(axis=0, keepdims=True)
    dg = (sm_rows + sm_cols - 2.0 * np.eye(c)) / c
    gt = (dg @ vproto) * inv_temp
    gv = (dg.T @ tproto) * inv_temp
    return loss, gt, gv
