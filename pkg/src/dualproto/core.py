"""Shared numeric primitives: normalization, softmax, entropy.

All internal math runs in float64. Vectors and matrices are plain numpy
arrays; a "probability vector" is a 1-D array of non-negative entries
summing to 1, an "embedding" is a unit-L2 1-D array. Entropies are in nats.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFinite, ZeroVector

ZERO_NORM = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale `v` to unit L2 norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n < ZERO_NORM:
        raise ZeroVector(f"cannot normalize vector with norm {n:.3e}")
    return v / n


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a 2-D array."""
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms < ZERO_NORM):
        bad = int(np.argmin(norms))
        raise ZeroVector(f"row {bad} has norm {norms[bad]:.3e}")
    return m / norms[:, None]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax over the last axis, stabilized by max subtraction."""
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NonFinite("softmax input contains NaN or Inf")
    z = z / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(p: np.ndarray) -> float:
    """Shannon entropy of a probability vector in nats; 0*log(0) counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def entropy_rows(p: np.ndarray) -> np.ndarray:
    """Entropy of each row of a 2-D array of probability vectors."""
    p = np.asarray(p, dtype=np.float64)
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=-1)


def normalized_entropy(p: np.ndarray) -> float:
    """Entropy scaled by its maximum ln(C), mapping confidence to [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    n = p.shape[-1]
    if n < 2:
        raise ValueError("normalized entropy needs at least two classes")
    return entropy(p) / float(np.log(n))
