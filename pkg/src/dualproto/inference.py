"""Prototype-based prediction and confident-view aggregation.

Pure functions over immutable snapshots; the per-sample optimizer and the
engine both route their forward passes through here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import entropy_rows, softmax
from .errors import DimMismatch


def affinity(x, alpha: float, beta: float):
    """Sharpened similarity reweighting: alpha * exp(-beta * (1 - x))."""
    return alpha * np.exp(-beta * (1.0 - np.asarray(x, dtype=np.float64)))


def affinity_grad(x, alpha: float, beta: float):
    """Derivative of `affinity` with respect to the similarity x."""
    return beta * affinity(x, alpha, beta)


def proto_logits(
    f: np.ndarray,
    textual: np.ndarray,
    visual: np.ndarray,
    has_proto: np.ndarray | None,
    alpha: float,
    beta: float,
) -> np.ndarray:
    """Fused class scores for one feature: textual similarity plus, for
    classes with a live visual prototype, the affinity-weighted visual one."""
    f = np.asarray(f, dtype=np.float64)
    textual = np.asarray(textual, dtype=np.float64)
    visual = np.asarray(visual, dtype=np.float64)
    if f.ndim != 1 or textual.shape[1] != f.shape[0]:
        raise DimMismatch(
            f"feature dim {f.shape} does not match prototypes {textual.shape}"
        )
    if visual.shape != textual.shape:
        raise DimMismatch("textual and visual prototype shapes disagree")
    logits = textual @ f
    if has_proto is None:
        mask = np.ones(textual.shape[0], dtype=bool)
    else:
        mask = np.asarray(has_proto, dtype=bool)
    if mask.any():
        logits = logits + mask * affinity(visual @ f, alpha, beta)
    return logits


def predict(
    f: np.ndarray,
    textual: np.ndarray,
    visual: np.ndarray,
    has_proto: np.ndarray | None,
    alpha: float,
    beta: float,
    temperature: float,
) -> np.ndarray:
    return softmax(proto_logits(f, textual, visual, has_proto, alpha, beta), temperature)


def view_probs(
    views: np.ndarray,
    textual: np.ndarray,
    visual: np.ndarray,
    has_proto: np.ndarray | None,
    alpha: float,
    beta: float,
    temperature: float,
) -> np.ndarray:
    """Batched `predict` over the rows of `views`, via the kernel backend."""
    views = np.asarray(views, dtype=np.float64)
    if views.ndim != 2 or views.shape[1] != np.asarray(textual).shape[1]:
        raise DimMismatch("views must be (n_views, d) matching the prototypes")
    return kernels.proto_probs(views, textual, visual, has_proto, alpha, beta, temperature)


@dataclass
class ViewAggregate:
    """Mean prediction over the most confident views of one sample."""

    mean_probs: np.ndarray
    selected: np.ndarray  # ascending view indices
    threshold: float  # entropy of the least confident selected view


def selection_count(n_views: int, rho: float) -> int:
    # tiny epsilon so rho values like 0.3 with n=10 floor to the intended 3
    return max(1, int(np.floor(rho * n_views + 1e-9)))


def aggregate_views(per_view_probs: np.ndarray, rho: float) -> ViewAggregate:
    """Keep the floor(rho*N) lowest-entropy views (at least one; ties favor
    the earlier view) and average their probability vectors."""
    p = np.asarray(per_view_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise DimMismatch("per-view probabilities must be a (N, C) array")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    ent = entropy_rows(p)
    order = np.argsort(ent, kind="stable")
    k = selection_count(p.shape[0], rho)
    selected = np.sort(order[:k])
    mean = p[selected].mean(axis=0)
    total = float(mean.sum())
    assert abs(total - 1.0) < 1e-9, f"aggregate drifted from simplex: {total}"
    return ViewAggregate(
        mean_probs=mean,
        selected=selected,
        threshold=float(ent[order[k - 1]]),
    )
