"""Convergence diagnostics and posterior summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError


@dataclass
class PosteriorSummary:
    parameter: str
    median: float
    hpd_lower: float
    hpd_upper: float
    hpd_prob: float
    rhat: float = float("nan")
    ess: float = float("nan")

    def as_dict(self):
        return dict(parameter=self.parameter, median=self.median, hpd_lower=self.hpd_lower,
                    hpd_upper=self.hpd_upper, hpd_prob=self.hpd_prob, rhat=self.rhat, ess=self.ess)


def _as_chains(chains):
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 2:
        raise DomainError("chains must be a (n_chains, n_draws) array")
    return arr


def _split(arr):
    n = arr.shape[1] // 2
    return np.concatenate([arr[:, :n], arr[:, arr.shape[1] - n:]], axis=0)


def _psrf(arr):
    m, n = arr.shape
    within = arr.var(axis=1, ddof=1).mean()
    if within <= 0:
        return math.inf
    between = n * arr.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return math.sqrt(var_plus / within)


def _rank_normalize(arr):
    flat = arr.ravel()
    ranks = stats.rankdata(flat, method="average")
    z = stats.norm.ppf((ranks - 0.375) / (flat.size + 0.25))
    return z.reshape(arr.shape)


def gelman_rubin(chains, split=True, rank_normalize=True) -> float:
    """Potential scale reduction factor.

    By default the split-chain, rank-normalised variant: the maximum of the
    bulk statistic (ranks of the draws) and the tail statistic (ranks of the
    absolute deviation from the median).  ``split=False, rank_normalize=False``
    gives the original between/within statistic.

    Parameters
    ----------
    chains : array_like, shape (n_chains, n_draws)

    Returns
    -------
    float
        ``inf`` when the within-chain variance is zero.
    """
    arr = _as_chains(chains)
    if arr.shape[0] < 2:
        raise DomainError("at least two chains are required")
    if arr.shape[1] < 10:
        raise DomainError("chains must have at least 10 draws")
    if split:
        arr = _split(arr)
    if not rank_normalize:
        return _psrf(arr)
    if np.all(arr.var(axis=1) == 0):
        return math.inf
    bulk = _psrf(_rank_normalize(arr))
    folded = np.abs(arr - np.median(arr))
    tail = _psrf(_rank_normalize(folded))
    return max(bulk, tail)


def rhat_columns(draws) -> np.ndarray:
    """R-hat per parameter for draws shaped (n_chains, n_draws, n_params)."""
    draws = np.asarray(draws, dtype=float)
    return np.array([gelman_rubin(draws[:, :, j]) for j in range(draws.shape[2])])


def _autocovariance(x):
    n = x.size
    x = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    return acov


def effective_sample_size(chains) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence truncation."""
    arr = _as_chains(chains)
    m, n = arr.shape
    if n < 4:
        raise DomainError("need at least 4 draws per chain")
    acov = np.array([_autocovariance(c) for c in arr])
    chain_var = acov[:, 0] * n / (n - 1.0)
    within = chain_var.mean()
    var_plus = within * (n - 1.0) / n
    if m > 1:
        var_plus += arr.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums, truncated at the first negative and made monotone
    total = 0.0
    prev = math.inf
    t = 0
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
        t += 2
    tau = -1.0 + 2.0 * total
    tau = max(tau, 1.0 / math.log10(m * n))
    return float(m * n / tau)


def hpd_interval(draws, prob: float = 0.95) -> tuple[float, float]:
    """Shortest interval containing ceil(prob * n) of the sorted draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    n = x.size
    if n < 100:
        raise DomainError("at least 100 draws are needed for an HPD interval")
    if not 0 < prob < 1:
        raise DomainError("prob must lie in (0, 1)")
    k = int(math.ceil(prob * n))
    widths = x[k - 1:] - x[: n - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def summarize(draws, names, prob=0.95):
    """Posterior summaries for each column of draws shaped (chains, draws, params)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[None]
    out = []
    for j, name in enumerate(names):
        col = draws[:, :, j]
        lo, hi = hpd_interval(col, prob)
        rhat = gelman_rubin(col) if col.shape[0] > 1 and col.shape[1] >= 10 else float("nan")
        ess = effective_sample_size(col)
        out.append(PosteriorSummary(name, float(np.median(col)), lo, hi, prob, rhat, ess))
    return out


def coverage_mcse(coverage: float, n: int) -> float:
    """Monte Carlo standard error of an estimated coverage proportion."""
    return math.sqrt(coverage * (1.0 - coverage) / n)
