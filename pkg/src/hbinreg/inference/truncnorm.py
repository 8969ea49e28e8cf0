"""Unit-variance normal draws truncated to a half line."""

from __future__ import annotations

import numpy as np
from scipy import special

__all__ = ["truncated_normal_draw", "standard_tail_draw"]

# Beyond this many sd the inverse-CDF loses precision; switch to rejection.
_INVERSE_CDF_LIMIT = 5.0


def standard_tail_draw(a, rng) -> np.ndarray:
    """Draw ``e ~ N(0, 1)`` conditioned on ``e >= a`` (elementwise)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    out = np.empty_like(a)

    low = a < -_INVERSE_CDF_LIMIT
    mid = np.abs(a) <= _INVERSE_CDF_LIMIT
    high = a > _INVERSE_CDF_LIMIT

    if mid.any():
        am = a[mid]
        u = rng.random(am.size)
        # upper-tail form: e = -Phi^{-1}(U * Phi(-a)), stable for a > 0
        pos = am > 0
        e = np.empty_like(am)
        e[pos] = -special.ndtri(u[pos] * special.ndtr(-am[pos]))
        lo = special.ndtr(am[~pos])
        e[~pos] = special.ndtri(lo + u[~pos] * (1.0 - lo))
        out[mid] = np.maximum(e, am)

    if low.any():
        # truncation carries < 3e-7 of the mass: plain rejection
        idx = np.flatnonzero(low)
        while idx.size:
            e = rng.standard_normal(idx.size)
            ok = e >= a[idx]
            out[idx[ok]] = e[ok]
            idx = idx[~ok]

    if high.any():
        # exponential-proposal rejection with the optimal rate
        idx = np.flatnonzero(high)
        while idx.size:
            ah = a[idx]
            lam = 0.5 * (ah + np.sqrt(ah * ah + 4.0))
            e = ah + rng.exponential(1.0 / lam)
            ok = rng.random(idx.size) <= np.exp(-0.5 * (e - lam) ** 2)
            out[idx[ok]] = e[ok]
            idx = idx[~ok]
    return out


def truncated_normal_draw(mean, positive, rng) -> np.ndarray:
    """Draw ``N(mean, 1)`` truncated to ``(0, inf)`` or ``(-inf, 0]``.

    ``positive`` is a boolean (array) choosing the side for each element.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    positive = np.broadcast_to(np.asarray(positive, dtype=bool), mean.shape)
    # x = m + e with e >= -m on the positive side; on the other side draw
    # -x = -m + e' with e' >= m.
    a = np.where(positive, -mean, mean)
    e = standard_tail_draw(a, rng)
    return np.where(positive, mean + e, mean - e)
