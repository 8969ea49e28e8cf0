"""Convergence diagnostics: rank-normalized split R-hat and bulk ESS."""

from __future__ import annotations

import warnings

import numpy as np
from scipy import special, stats

__all__ = ["autocorrelation", "ess", "split_rhat", "diagnostics"]


def autocorrelation(x) -> np.ndarray:
    """Autocorrelation of a 1-d series via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    if acov[0] == 0:
        return np.r_[1.0, np.zeros(n - 1)]
    return acov / acov[0]


def _ess_raw(chains) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float("nan")
    acov = np.array([autocorrelation(c) * c.var() for c in chains])
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    if var_plus == 0 or not np.isfinite(var_plus):
        return float(m * n)
    rho = 1.0 - (mean_var - np.mean(acov, axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative pair, made monotone
    npairs = (n - 1) // 2
    pairs = rho[: 2 * npairs].reshape(npairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs < 0)
    if neg.size:
        pairs = pairs[: neg[0]]
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def _rank_normalize(chains) -> np.ndarray:
    flat = chains.reshape(-1)
    r = stats.rankdata(flat, method="average").reshape(chains.shape)
    return special.ndtri((r - 0.375) / (flat.size + 0.25))


def _split(chains) -> np.ndarray:
    n = chains.shape[1] // 2
    return np.vstack([chains[:, :n], chains[:, -n:]])


def _rhat_raw(chains) -> float:
    m, n = chains.shape
    W = chains.var(axis=1, ddof=1).mean()
    B = n * chains.mean(axis=1).var(ddof=1)
    if W == 0:
        return float("nan") if B == 0 else float("inf")
    return float(np.sqrt(((n - 1) / n * W + B / n) / W))


def split_rhat(chains) -> float:
    """Rank-normalized split R-hat (max of bulk and folded versions)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    if np.ptp(chains) == 0:
        return 1.0
    s = _split(chains)
    bulk = _rhat_raw(_rank_normalize(s))
    folded = _rhat_raw(_rank_normalize(np.abs(s - np.median(s))))
    # constant, disagreeing chains give W = 0 and an infinite R-hat
    return float(np.nanmax([bulk, folded]))


def ess(chains) -> float:
    """Bulk effective sample size (rank-normalized, split chains)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    if np.ptp(chains) == 0:
        return float(chains.size)
    return _ess_raw(_rank_normalize(_split(chains)))


def diagnostics(samples) -> dict:
    """Per-parameter ``ess`` and ``rhat`` plus acceptance rates."""
    out = {"ess": {}, "rhat": {}, "acceptance": dict(samples.acceptance)}
    single = samples.n_chains < 2
    if single:
        warnings.warn("R-hat needs at least 2 chains; omitted", stacklevel=2)
    for name in samples.names:
        x = samples.get(name)
        out["ess"][name] = ess(x)
        if not single:
            out["rhat"][name] = split_rhat(x)
    return out
