"""Per-sample prototype residual learning.

Zero-initialized residual matrices are added to the frozen prototype
snapshots, rows are renormalized, and one or more AdamW steps minimize the
combined objective: self-entropy of the aggregated multi-view prediction
plus a scaled symmetric InfoNCE term aligning the two prototype sets.

Gradients are exact closed forms (finite differences are the test oracle,
not the implementation). The confident-view selection is frozen while a
gradient is taken: the indicator is not differentiable, so each step
reselects from the current residual state and then treats the selection as
a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import entropy
from .errors import DegenerateRow, DimMismatch
from .inference import ViewAggregate, aggregate_views, view_probs

_DEGENERATE_NORM = 1e-12


@dataclass
class LossBreakdown:
    """Components of one objective evaluation: total = l_aug + lam * l_align."""

    l_aug: float
    l_align: float
    lam: float

    @property
    def total(self) -> float:
        return self.l_aug + self.lam * self.l_align


def _add_and_normalize(base: np.ndarray, residual: np.ndarray):
    """base + residual with rows renormalized; returns (rows, norms).

    Rows whose residual is exactly zero are copied untouched, so a zero
    residual pair is bit-exact identity.
    """
    if base.shape != residual.shape:
        raise DimMismatch("residual shape does not match prototypes")
    summed = base + residual
    norms = np.linalg.norm(summed, axis=1)
    if np.any(norms < _DEGENERATE_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateRow(f"row {bad} cancelled to norm {norms[bad]:.3e}")
    out = summed / norms[:, None]
    untouched = ~residual.any(axis=1)
    if untouched.any():
        out[untouched] = base[untouched]
    return out, norms


def apply_residuals(
    base_t: np.ndarray, base_v: np.ndarray, t_hat: np.ndarray, v_hat: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Residual-shifted, row-renormalized copies of both prototype sets."""
    t_out, _ = _add_and_normalize(np.asarray(base_t, float), np.asarray(t_hat, float))
    v_out, _ = _add_and_normalize(np.asarray(base_v, float), np.asarray(v_hat, float))
    return t_out, v_out


def select_views(
    views: np.ndarray,
    tproto: np.ndarray,
    vproto: np.ndarray,
    has_proto,
    alpha: float,
    beta: float,
    temperature: float,
    rho: float,
) -> np.ndarray:
    """Confident-view indices under the given prototype state."""
    p = view_probs(views, tproto, vproto, has_proto, alpha, beta, temperature)
    return aggregate_views(p, rho).selected


def loss_aug(
    views, tproto, vproto, has_proto, alpha, beta, temperature, rho
) -> float:
    """Self-entropy of the aggregated prediction over the confident views."""
    p = view_probs(views, tproto, vproto, has_proto, alpha, beta, temperature)
    return entropy(aggregate_views(p, rho).mean_probs)


def loss_align(tproto, vproto, align_temperature: float = 1.0) -> float:
    """Symmetric InfoNCE between matching prototype rows."""
    tproto = np.asarray(tproto, dtype=np.float64)
    vproto = np.asarray(vproto, dtype=np.float64)
    if tproto.shape != vproto.shape:
        raise DimMismatch("prototype sets must share a shape")
    loss, _, _ = kernels.align_loss_grad(tproto, vproto, align_temperature)
    return loss


def _renorm_backward(grad, rows, norms):
    """Pull a gradient back through row renormalization: (I - rr^T)/|a|."""
    radial = (grad * rows).sum(axis=1, keepdims=True)
    return (grad - radial * rows) / norms[:, None]


def grad_total(
    views: np.ndarray,
    base_t: np.ndarray,
    base_v: np.ndarray,
    has_proto,
    t_hat: np.ndarray,
    v_hat: np.ndarray,
    selected: np.ndarray,
    alpha: float,
    beta: float,
    temperature: float,
    lam: float,
    align_temperature: float = 1.0,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Objective value and exact gradients with respect to both residuals.

    `selected` is the frozen confident-view index set; no gradient flows
    through the selection or the discarded views.
    """
    base_t = np.asarray(base_t, dtype=np.float64)
    base_v = np.asarray(base_v, dtype=np.float64)
    sum_t = base_t + t_hat
    sum_v = base_v + v_hat
    norm_t = np.linalg.norm(sum_t, axis=1)
    norm_v = np.linalg.norm(sum_v, axis=1)
    if np.any(norm_t < _DEGENERATE_NORM) or np.any(norm_v < _DEGENERATE_NORM):
        raise DegenerateRow("residual cancelled a prototype row")
    tproto = sum_t / norm_t[:, None]
    vproto = sum_v / norm_v[:, None]

    feats = np.ascontiguousarray(np.asarray(views, float)[selected])
    l_aug, gt, gv = kernels.entropy_mean_grad(
        feats, tproto, vproto, has_proto, alpha, beta, temperature
    )
    l_align, gt_al, gv_al = kernels.align_loss_grad(tproto, vproto, align_temperature)
    if lam != 0.0:
        gt = gt + lam * gt_al
        gv = gv + lam * gv_al

    g_t_hat = _renorm_backward(gt, tproto, norm_t)
    g_v_hat = _renorm_backward(gv, vproto, norm_v)
    return LossBreakdown(l_aug=l_aug, l_align=l_align, lam=lam), g_t_hat, g_v_hat


@dataclass
class AdamWState:
    """Decoupled-weight-decay Adam moments for one residual pair."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m_t: np.ndarray = field(default=None, repr=False)
    v_t: np.ndarray = field(default=None, repr=False)
    m_v: np.ndarray = field(default=None, repr=False)
    v_v: np.ndarray = field(default=None, repr=False)

    @classmethod
    def for_shape(cls, shape, **hyper) -> "AdamWState":
        zeros = lambda: np.zeros(shape, dtype=np.float64)
        return cls(m_t=zeros(), v_t=zeros(), m_v=zeros(), v_v=zeros(), **hyper)


def adamw_step(
    t_hat: np.ndarray,
    v_hat: np.ndarray,
    g_t: np.ndarray,
    g_v: np.ndarray,
    state: AdamWState,
) -> None:
    """One in-place AdamW update of both residual matrices."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for param, grad, m, v in (
        (t_hat, g_t, state.m_t, state.v_t),
        (v_hat, g_v, state.m_v, state.v_v),
    ):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        if state.weight_decay:
            param -= state.lr * state.weight_decay * param
        param -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def optimize_sample(
    views: np.ndarray,
    base_t: np.ndarray,
    base_v: np.ndarray,
    has_proto,
    *,
    n_steps: int,
    alpha: float,
    beta: float,
    temperature: float,
    rho: float,
    lam: float,
    align_temperature: float = 1.0,
    lr: float = 5e-4,
    adam_beta1: float = 0.9,
    adam_beta2: float = 0.999,
    adam_eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[np.ndarray, np.ndarray, ViewAggregate, LossBreakdown]:
    """Run the per-sample residual optimization from a fresh zero state.

    Returns the optimized prototype pair, the final aggregated prediction
    under it (freshly selected views), and the objective breakdown from the
    last gradient evaluation (at the pre-step state when n_steps >= 1, at
    the zero residual otherwise). Base prototypes are never mutated.
    """
    views = np.asarray(views, dtype=np.float64)
    base_t = np.asarray(base_t, dtype=np.float64)
    base_v = np.asarray(base_v, dtype=np.float64)
    t_hat = np.zeros_like(base_t)
    v_hat = np.zeros_like(base_v)
    state = AdamWState.for_shape(
        base_t.shape,
        lr=lr,
        beta1=adam_beta1,
        beta2=adam_beta2,
        eps=adam_eps,
        weight_decay=weight_decay,
    )
    breakdown = None
    for _ in range(n_steps):
        tproto, vproto = apply_residuals(base_t, base_v, t_hat, v_hat)
        selected = select_views(
            views, tproto, vproto, has_proto, alpha, beta, temperature, rho
        )
        breakdown, g_t, g_v = grad_total(
            views, base_t, base_v, has_proto, t_hat, v_hat, selected,
            alpha, beta, temperature, lam, align_temperature,
        )
        adamw_step(t_hat, v_hat, g_t, g_v, state)

    t_star, v_star = apply_residuals(base_t, base_v, t_hat, v_hat)
    final_probs = view_probs(
        views, t_star, v_star, has_proto, alpha, beta, temperature
    )
    final = aggregate_views(final_probs, rho)
    if breakdown is None:
        breakdown = LossBreakdown(
            l_aug=entropy(final.mean_probs),
            l_align=loss_align(t_star, v_star, align_temperature),
            lam=lam,
        )
    return t_star, v_star, final, breakdown


def finite_diff_grads(
    views,
    base_t,
    base_v,
    has_proto,
    t_hat,
    v_hat,
    selected,
    alpha,
    beta,
    temperature,
    lam,
    align_temperature=1.0,
    h: float = 1e-5,
) -> tuple[np.ndarray, np.ndarray]:
    """Central finite differences of the frozen-selection objective.

    Independent oracle for `grad_total`: only forward evaluations, one
    coordinate at a time.
    """
    views = np.asarray(views, dtype=np.float64)
    feats = views[np.asarray(selected)]

    def total(th, vh):
        tproto, vproto = apply_residuals(base_t, base_v, th, vh)
        p = view_probs(feats, tproto, vproto, has_proto, alpha, beta, temperature)
        value = entropy(p.mean(axis=0))
        if lam != 0.0:
            value += lam * loss_align(tproto, vproto, align_temperature)
        return value

    grads = []
    for which, hat in (("t", np.array(t_hat, float)), ("v", np.array(v_hat, float))):
        g = np.zeros_like(hat)
        other_t = np.array(t_hat, float)
        other_v = np.array(v_hat, float)
        for idx in np.ndindex(hat.shape):
            orig = hat[idx]
            hat[idx] = orig + h
            hi = total(hat, other_v) if which == "t" else total(other_t, hat)
            hat[idx] = orig - h
            lo = total(hat, other_v) if which == "t" else total(other_t, hat)
            hat[idx] = orig
            g[idx] = (hi - lo) / (2.0 * h)
        grads.append(g)
    return grads[0], grads[1]
