"""Probability kernels: Wallenius' non-central hypergeometric distribution,
binomial helpers, and beta fitting for seroprevalence interval inversion.

Wallenius' distribution describes drawing ``n_draws`` items one at a time,
without replacement, from an urn holding ``n_cases`` items of weight ``odds``
and ``n_noncases`` items of weight 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import gammaln

from .errors import ConvergenceError, DomainError

__all__ = [
    "NchgParams",
    "IntervalFit",
    "log_binom_coef",
    "binom_logpmf",
    "nchg_support",
    "nchg_log_pmf",
    "nchg_pmf_recursive",
    "nchg_sample",
    "fit_beta_to_interval",
    "invert_binomial_ci",
]


@dataclass(frozen=True)
class NchgParams:
    """Parameters of Wallenius' non-central hypergeometric distribution."""

    n_cases: int
    n_noncases: int
    n_draws: int
    odds: float

    def __post_init__(self):
        for name in ("n_cases", "n_noncases", "n_draws"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.n_draws > self.n_cases + self.n_noncases:
            raise DomainError("n_draws exceeds the urn size")
        if not self.odds > 0:
            raise DomainError("odds must be positive")


@dataclass(frozen=True)
class IntervalFit:
    lower: float
    upper: float
    alpha: float
    beta: float
    prob_mass: float = 0.95
    residual: float = 0.0


def log_binom_coef(n, k):
    """log C(n, k) through log-gamma; valid for large counts."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def binom_logpmf(k, n, p):
    """Binomial log-pmf with the 0 * log(0) = 0 convention.

    Works elementwise; returns ``-inf`` where ``k`` lies outside ``[0, n]``
    or the probability is incompatible with the count.
    """
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        succ = np.where(k > 0, k * np.log(p), 0.0)
        fail = np.where(n - k > 0, (n - k) * np.log1p(-p), 0.0)
        out = log_binom_coef(n, k) + succ + fail
    out = np.where((k < 0) | (k > n) | (p < 0) | (p > 1), -np.inf, out)
    out = np.where(np.isnan(out), -np.inf, out)
    return out[()] if out.ndim == 0 else out


def nchg_support(params: NchgParams) -> tuple[int, int]:
    lo = max(0, params.n_draws - params.n_noncases)
    hi = min(params.n_cases, params.n_draws)
    return lo, hi


def _inv_expm1(u):
    return 0.0 if u > 700.0 else 1.0 / math.expm1(u)


def _exp_over_expm1_sq(u):
    # e^u / (e^u - 1)^2
    if u > 700.0:
        return 0.0
    em = math.expm1(u)
    return (em + 1.0) / (em * em)


def _wallenius_log_integral(x, n_draws, odds, big_b):
    """log of the Wallenius integral for B > 0.

    With t = exp(-B v) the integral becomes the integral over v in (0, inf) of
    exp(h(v)), where
        h(v) = x log(1 - e^{-odds v}) + (T - x) log(1 - e^{-v}) - B v + log B
    is concave, so the integrand has a single peak.
    """
    y = n_draws - x
    if x == 0 and y == 0:
        return 0.0

    def h(v):
        out = math.log(big_b) - big_b * v
        if x:
            out += x * math.log(-math.expm1(-odds * v))
        if y:
            out += y * math.log(-math.expm1(-v))
        return out

    def dh(v):
        out = -big_b
        if x:
            out += x * odds * _inv_expm1(odds * v)
        if y:
            out += y * _inv_expm1(v)
        return out

    # dh is decreasing from +inf to -B: bracket its root on a log scale
    lo, hi = 1e-200, 1.0
    while dh(hi) > 0:
        hi *= 2.0
    while dh(lo) < 0:  # pragma: no cover - dh(0+) is +inf
        lo *= 1e-3
    mode = optimize.brentq(dh, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)

    curv = 0.0
    if x:
        curv -= x * odds * odds * _exp_over_expm1_sq(odds * mode)
    if y:
        curv -= y * _exp_over_expm1_sq(mode)
    width = 1.0 / math.sqrt(-curv) if curv < 0 else mode
    h_mode = h(mode)

    def f(v):
        if v <= 0.0:
            return 0.0
        return math.exp(h(v) - h_mode)

    knots = [0.0]
    for m in (-30.0, -8.0, -2.0, 0.0, 2.0, 8.0, 30.0):
        v = mode + m * width
        if v > knots[-1]:
            knots.append(v)
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        val, _ = integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-12, limit=200)
        total += val
    val, _ = integrate.quad(f, knots[-1], np.inf, epsabs=1e-14, epsrel=1e-12, limit=200)
    total += val
    return h_mode + math.log(total)


def nchg_log_pmf(x: int, params: NchgParams) -> float:
    """Log-probability of drawing ``x`` cases under Wallenius' distribution.

    Evaluates
        C(C, x) C(P - C, T - x) * integral_0^1 (1 - t^{odds/B})^x (1 - t^{1/B})^{T-x} dt,
    with B = odds (C - x) + (P - C - (T - x)), by adaptive quadrature after
    a change of variables that makes the integrand log-concave.

    Raises
    ------
    DomainError
        If ``x`` is outside the support.
    """
    lo, hi = nchg_support(params)
    if x != int(x) or not lo <= x <= hi:
        raise DomainError(f"x={x} outside support [{lo}, {hi}]")
    x = int(x)
    c, m, t, w = params.n_cases, params.n_noncases, params.n_draws, params.odds
    big_b = w * (c - x) + (m - (t - x))
    if big_b <= 0:
        # the whole urn is drawn, x = C with certainty
        return 0.0
    log_coef = float(log_binom_coef(c, x) + log_binom_coef(m, t - x))
    return log_coef + _wallenius_log_integral(x, t, w, big_b)


def nchg_pmf_recursive(params: NchgParams) -> np.ndarray:
    """Exact pmf over ``0..n_draws`` by dynamic programming over the draws.

    Intended for small urns; used as a cross-check of the quadrature route.
    """
    c, m, t, w = params.n_cases, params.n_noncases, params.n_draws, params.odds
    probs = np.zeros(t + 1)
    probs[0] = 1.0
    for n in range(t):
        nxt = np.zeros(t + 1)
        for j in range(n + 1):
            if probs[j] == 0.0:
                continue
            rc = c - j
            rm = m - (n - j)
            tot = w * rc + rm
            if tot <= 0:
                continue
            pc = w * rc / tot
            nxt[j + 1] += probs[j] * pc
            nxt[j] += probs[j] * (1.0 - pc)
        probs = nxt
    return probs


def nchg_sample(params: NchgParams, rng: np.random.Generator, size=None):
    """Draw case counts from Wallenius' distribution.

    Sequential biased draws are simulated exactly as an exponential race:
    each case gets an Exp(odds) arrival time and each non-case an Exp(1) time,
    and the first ``n_draws`` arrivals are the drawn items.  Only the earliest
    ``n_draws`` times of each type are needed, generated in order through the
    Renyi representation of exponential order statistics, so the cost is
    O(n_draws) regardless of the urn size.
    """
    if size is None:
        return _nchg_race(params, rng)
    out = np.empty(int(np.prod(size)), dtype=np.int64)
    for i in range(out.size):
        out[i] = _nchg_race(params, rng)
    return out.reshape(size)


def _nchg_race(params, rng):
    c, m, t, w = params.n_cases, params.n_noncases, params.n_draws, params.odds
    if t == 0:
        return 0
    if m == 0:
        return t
    if c == 0:
        return 0
    kc, km = min(t, c), min(t, m)
    times_c = np.cumsum(rng.standard_exponential(kc) / (w * (c - np.arange(kc))))
    times_m = np.cumsum(rng.standard_exponential(km) / (m - np.arange(km)))
    # t-th arrival overall; merge two sorted sequences
    merged = np.concatenate([times_c, times_m])
    cutoff = np.partition(merged, t - 1)[t - 1]
    return int(np.searchsorted(times_c, cutoff, side="right"))


def fit_beta_to_interval(lower: float, upper: float, prob_mass: float = 0.95,
                         tol: float = 1e-4) -> IntervalFit:
    """Beta(alpha, beta) whose central ``prob_mass`` interval is (lower, upper).

    Minimises the squared distance between the beta quantiles and the
    reported endpoints with Nelder-Mead on log-shape parameters, started from
    a normal-approximation moment match.
    """
    if not 0 < lower < upper < 1:
        raise DomainError("need 0 < lower < upper < 1")
    tail = (1.0 - prob_mass) / 2.0
    probs = np.array([tail, 1.0 - tail])
    target = np.array([lower, upper])

    mean = 0.5 * (lower + upper)
    sd = (upper - lower) / (2.0 * stats.norm.ppf(1.0 - tail))
    conc = max(mean * (1.0 - mean) / sd**2 - 1.0, 1e-2)
    x0 = np.log([mean * conc, (1.0 - mean) * conc])

    def objective(z):
        q = stats.beta.ppf(probs, *np.exp(z))
        return float(np.sum((q - target) ** 2))

    res = optimize.minimize(objective, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-20, "maxiter": 20000})
    resid = math.sqrt(res.fun)
    if resid >= tol:
        raise ConvergenceError(
            f"beta fit to ({lower}, {upper}) left quantile error {resid:.3g}", residual=resid)
    a, b = np.exp(res.x)
    return IntervalFit(lower=lower, upper=upper, alpha=float(a), beta=float(b),
                       prob_mass=prob_mass, residual=resid)


def invert_binomial_ci(lower: float, upper: float) -> tuple[int, int]:
    """Effective (confirmed cases, tests) matching a reported 95% CI.

    ``T = round(alpha) + round(beta) + 1`` mirrors the reference R code.
    """
    fit = fit_beta_to_interval(lower, upper)
    cc = int(round(fit.alpha))
    return cc, cc + int(round(fit.beta)) + 1
