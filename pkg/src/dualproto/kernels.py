"""Kernel backend selection: compiled extension when built, numpy otherwise.

Set DUALPROTO_KERNELS=python (or =compiled) to force a backend; the default
prefers the compiled module and silently falls back. Public wrappers coerce
arguments once so both backends see identical contiguous float64 / uint8
buffers.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

_FORCED = os.environ.get("DUALPROTO_KERNELS", "").strip().lower()

if _FORCED == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _compiled

        _impl = _compiled
        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _impl = _kernels_py
        BACKEND = "python"


def available_backends() -> dict[str, object]:
    """Importable kernel modules keyed by name (for tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as compiled

        out["compiled"] = compiled
    except ImportError:
        pass
    return out


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _mask(m, n: int) -> np.ndarray:
    if m is None:
        return np.ones(n, dtype=np.uint8)
    return np.ascontiguousarray(np.asarray(m).astype(np.uint8))


def proto_probs(feats, tproto, vproto, has_proto, alpha, beta, temperature):
    """Probabilities for each row of `feats` under the dual-prototype scorer."""
    t = _f64(tproto)
    return _impl.proto_probs(
        _f64(feats), t, _f64(vproto), _mask(has_proto, t.shape[0]),
        float(alpha), float(beta), 1.0 / float(temperature),
    )


def entropy_mean_grad(feats, tproto, vproto, has_proto, alpha, beta, temperature):
    t = _f64(tproto)
    return _impl.entropy_mean_grad(
        _f64(feats), t, _f64(vproto), _mask(has_proto, t.shape[0]),
        float(alpha), float(beta), 1.0 / float(temperature),
    )


def align_loss_grad(tproto, vproto, align_temperature=1.0):
    return _impl.align_loss_grad(
        _f64(tproto), _f64(vproto), 1.0 / float(align_temperature)
    )
