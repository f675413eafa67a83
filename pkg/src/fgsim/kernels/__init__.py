"""Numeric kernels for the per-pixel hot loops.

Two interchangeable backends implement the inner loops:

* ``_core_cy`` -- Cython extension (built when Cython and a C compiler are
  available at install time),
* ``_core_np`` -- vectorized numpy fallback.

The backend is picked at import time; set ``FGSIM_KERNELS=numpy`` or
``FGSIM_KERNELS=compiled`` to force one. Both backends perform the exact
same IEEE-754 arithmetic per pixel (all transcendental evaluations are
hoisted into the shared driver below), so swapping backends never changes
results bit for bit. ``benchmarks/bench_kernels.py`` compares their speed.
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import ValidationError

_requested = os.environ.get("FGSIM_KERNELS", "auto").lower()
if _requested not in ("auto", "numpy", "compiled"):
    raise ValidationError(f"FGSIM_KERNELS must be auto|numpy|compiled, got {_requested!r}")

if _requested in ("auto", "compiled"):
    try:
        from . import _core_cy as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        from . import _core_np as _impl

        BACKEND = "numpy"
else:
    from . import _core_np as _impl

    BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND


# Poisson sampling. Rates below SMALL_RATE_MAX use inversion by sequential
# search (one uniform per pixel); larger rates use transformed rejection
# with squeeze. The split point matters: exactness at small rates is load
# bearing because photon budgets as low as a handful per pixel occur.
SMALL_RATE_MAX = 10.0

_TABLE_N = 1024
# _LOGFACT[k] = log(k!) for k < _TABLE_N, accumulated left to right.
_LOGFACT = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1.0, _TABLE_N)))))
_HALF_LOG_2PI = 0.9189385332046727


def _log_factorial(k: np.ndarray) -> np.ndarray:
    """log(k!) for non-negative integer-valued float64 arrays."""
    out = np.empty_like(k)
    small = k < _TABLE_N
    out[small] = _LOGFACT[k[small].astype(np.intp)]
    big = ~small
    if np.any(big):
        kb = k[big]
        logk = np.log(kb)
        # Stirling series; absolute error < 1e-12 for k >= 1024
        out[big] = (
            (kb + 0.5) * logk
            - kb
            + _HALF_LOG_2PI
            + 1.0 / (12.0 * kb)
            - 1.0 / (360.0 * kb**3)
            + 1.0 / (1260.0 * kb**5)
        )
    return out


def _poisson_large(mu: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Transformed-rejection sampling for rates >= SMALL_RATE_MAX.

    Every round draws one (U, V) pair per still-unresolved pixel, so the
    uniform stream consumption depends only on the per-pixel accept/reject
    decisions, which are pure float comparisons on shared inputs.
    """
    slam = np.sqrt(mu)
    loglam = np.log(mu)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    log_invalpha = np.log(1.1239 + 1.1328 / (b - 3.4))
    vr = 0.9277 - 3.6224 / (b - 2.0)

    out = np.empty(mu.shape, dtype=np.float64)
    act = np.arange(mu.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        while act.size:
            uu = rng.random(act.size) - 0.5
            vv = rng.random(act.size)
            us = 0.5 - np.abs(uu)
            k = np.floor((2.0 * a[act] / us + b[act]) * uu + mu[act] + 0.43)
            accept = (us >= 0.07) & (vv <= vr[act])
            hopeless = (k < 0.0) | ((us < 0.013) & (vv > us))
            exam = ~(accept | hopeless)
            if np.any(exam):
                ke = k[exam]
                lhs = np.log(vv[exam]) + log_invalpha[act[exam]] - np.log(a[act[exam]] / (us[exam] * us[exam]) + b[act[exam]])
                rhs = ke * loglam[act[exam]] - mu[act[exam]] - _log_factorial(ke)
                passed = np.zeros(act.size, dtype=bool)
                passed[np.flatnonzero(exam)[lhs <= rhs]] = True
                accept |= passed
            out[act[accept]] = k[accept]
            act = act[~accept]
    return out


def poisson_counts(lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-pixel independent Poisson draws with the given rate field.

    Returns float64 counts of the same shape as ``lam``. Deterministic for
    a given generator state regardless of backend.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam)):
        raise ValidationError("Poisson rate must be finite everywhere")
    if np.any(lam < 0.0):
        raise ValidationError("Poisson rate must be non-negative")
    flat = np.ascontiguousarray(lam.reshape(-1))
    out = np.zeros(flat.shape, dtype=np.float64)

    small_idx = np.flatnonzero(flat < SMALL_RATE_MAX)
    # draw order is fixed: the small-rate block first, then rejection rounds
    u = rng.random(small_idx.size)
    if small_idx.size:
        lam_s = np.ascontiguousarray(flat[small_idx])
        res_s = np.zeros(lam_s.shape, dtype=np.float64)
        _impl.inversion_fill(lam_s, np.exp(-lam_s), u, res_s)
        out[small_idx] = res_s

    large_idx = np.flatnonzero(flat >= SMALL_RATE_MAX)
    if large_idx.size:
        out[large_idx] = _poisson_large(flat[large_idx], rng)
    return out.reshape(lam.shape)


def warp_bilinear(frame: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Backward bilinear sampling: out(y, x) = frame(y - v, x - u).

    Returns ``(out, inbounds)`` where samples falling outside the frame are
    zero and flagged 0 in the uint8 ``inbounds`` mask.
    """
    frame = np.ascontiguousarray(frame, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    if frame.ndim != 2 or frame.shape != u.shape or frame.shape != v.shape:
        raise ValidationError("warp: frame and flow components must share one 2-D shape")
    out = np.zeros(frame.shape, dtype=np.float64)
    inb = np.zeros(frame.shape, dtype=np.uint8)
    _impl.warp_bilinear(frame, u, v, out, inb)
    return out, inb
