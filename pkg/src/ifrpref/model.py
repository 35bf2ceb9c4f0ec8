"""Hierarchical model for IFR estimation under preferential testing.

Densities are unnormalised log posteriors with respect to Lebesgue measure on
the cloglog scale for the group rates (``kappa1 = cloglog(IR_k)``,
``kappa2 = cloglog(IFR_k)``), on the natural scale for ``phi_k``, ``tau``,
``sigma``, ``gamma``, the coefficients, ``theta`` and ``beta``.  All
normalising constants are kept, so each density is a genuine sum of
log-pmfs and log-pdfs.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .distributions import NchgParams, binom_logpmf, nchg_log_pmf
from .errors import DomainError

_LOG_2PI = math.log(2.0 * math.pi)


def cloglog(p):
    """Complementary log-log link, log(-log(1 - p))."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("cloglog needs 0 < p < 1")
    out = np.log(-np.log1p(-p))
    return out[()] if out.ndim == 0 else out


def icloglog(x):
    """Inverse cloglog, 1 - exp(-exp(x))."""
    out = -np.expm1(-np.exp(np.asarray(x, dtype=float)))
    return out[()] if out.ndim == 0 else out


@dataclass
class GroupObservation:
    """Observed counts for one jurisdiction."""

    label: str
    population: int
    tests: int
    confirmed: int
    deaths: int
    phi_known_one: bool = False
    ir_covariates: Sequence[float] = ()
    ifr_covariates: Sequence[float] = ()

    def __post_init__(self):
        if not 0 <= self.confirmed <= self.tests <= self.population:
            raise DomainError(f"{self.label}: need 0 <= confirmed <= tests <= population")
        if not 0 <= self.deaths <= self.population:
            raise DomainError(f"{self.label}: need 0 <= deaths <= population")


@dataclass
class LatentState:
    ir: float
    ifr: float
    phi: float = 1.0
    c: int | None = None


@dataclass
class GlobalParameters:
    theta: float
    beta: float
    tau: float
    sigma: float
    gamma: float = 1.0
    theta_coefs: Sequence[float] = ()
    beta_coefs: Sequence[float] = ()


@dataclass(frozen=True)
class PriorConfig:
    """Hyperprior settings.

    ``lam`` is the rate of the exponential prior on gamma, ``eta`` the
    half-normal scale of tau.  With ``fixed_effects`` tau is pinned to 0 and
    every cloglog(IFR_k) equals its linear predictor.
    """

    lam: float = 0.05
    eta: float = 0.1
    coef_sd: float = 1.0
    fixed_effects: bool = False

    def __post_init__(self):
        if not (self.lam > 0 and self.eta > 0 and self.coef_sd > 0):
            raise DomainError("lam, eta and coef_sd must be positive")


@dataclass
class GroupArrays:
    """Column view of a sequence of observations."""

    labels: list
    population: np.ndarray
    tests: np.ndarray
    confirmed: np.ndarray
    deaths: np.ndarray
    known: np.ndarray
    x: np.ndarray  # (K, h) infection-rate covariates
    z: np.ndarray  # (K, q) fatality-rate covariates

    @classmethod
    def from_groups(cls, groups: Sequence[GroupObservation]) -> "GroupArrays":
        if len(groups) == 0:
            raise DomainError("at least one group is required")
        h = {len(g.ir_covariates) for g in groups}
        q = {len(g.ifr_covariates) for g in groups}
        if len(h) != 1 or len(q) != 1:
            raise DomainError("covariate vectors must have the same length in every group")
        k = len(groups)
        return cls(
            labels=[g.label for g in groups],
            population=np.array([g.population for g in groups], dtype=float),
            tests=np.array([g.tests for g in groups], dtype=float),
            confirmed=np.array([g.confirmed for g in groups], dtype=float),
            deaths=np.array([g.deaths for g in groups], dtype=float),
            known=np.array([bool(g.phi_known_one) for g in groups]),
            x=np.array([list(g.ir_covariates) for g in groups], dtype=float).reshape(k, h.pop()),
            z=np.array([list(g.ifr_covariates) for g in groups], dtype=float).reshape(k, q.pop()),
        )

    @property
    def n_groups(self):
        return len(self.labels)

    @property
    def n_unknown(self):
        return int((~self.known).sum())


@dataclass
class LargePState:
    """Flat parameter state of the large-P model (natural coordinates)."""

    theta: float
    beta: float
    tau: float
    sigma: float
    gamma: float
    theta_coefs: np.ndarray
    beta_coefs: np.ndarray
    kappa1: np.ndarray
    kappa2: np.ndarray
    phi: np.ndarray

    def copy(self):
        return replace(self, theta_coefs=self.theta_coefs.copy(), beta_coefs=self.beta_coefs.copy(),
                       kappa1=self.kappa1.copy(), kappa2=self.kappa2.copy(), phi=self.phi.copy())


def state_from_objects(latents: Sequence[LatentState], params: GlobalParameters) -> LargePState:
    ir = np.array([l.ir for l in latents], dtype=float)
    ifr = np.array([l.ifr for l in latents], dtype=float)
    if np.any((ir <= 0) | (ir >= 1) | (ifr <= 0) | (ifr >= 1)):
        raise DomainError("latent rates must lie in (0, 1)")
    return LargePState(
        theta=float(params.theta), beta=float(params.beta), tau=float(params.tau),
        sigma=float(params.sigma), gamma=float(params.gamma),
        theta_coefs=np.asarray(params.theta_coefs, dtype=float).ravel(),
        beta_coefs=np.asarray(params.beta_coefs, dtype=float).ravel(),
        kappa1=np.log(-np.log1p(-ir)), kappa2=np.log(-np.log1p(-ifr)),
        phi=np.array([l.phi for l in latents], dtype=float),
    )


def _normal_logpdf(x, mu, sd):
    z = (x - mu) / sd
    return -0.5 * _LOG_2PI - np.log(sd) - 0.5 * z * z


def log_hyperprior(state: LargePState, prior: PriorConfig, n_unknown: int) -> float:
    """Log prior of the global parameters.

    icloglog(theta), icloglog(beta) ~ U(0, 1); sigma ~ half-N(0, 1);
    tau ~ half-N(0, eta^2); gamma ~ Exp(lam) when any group has unknown phi;
    coefficients ~ N(0, coef_sd^2).
    """
    s = state
    if s.sigma <= 0 or (not prior.fixed_effects and s.tau <= 0):
        return -np.inf
    lp = s.theta - math.exp(s.theta) + s.beta - math.exp(s.beta)
    lp += math.log(2.0) + float(_normal_logpdf(s.sigma, 0.0, 1.0))
    if not prior.fixed_effects:
        lp += math.log(2.0) + float(_normal_logpdf(s.tau, 0.0, prior.eta))
    if n_unknown > 0:
        if s.gamma <= 0:
            return -np.inf
        lp += math.log(prior.lam) - prior.lam * s.gamma
    lp += float(np.sum(_normal_logpdf(s.theta_coefs, 0.0, prior.coef_sd)))
    lp += float(np.sum(_normal_logpdf(s.beta_coefs, 0.0, prior.coef_sd)))
    return lp


def linear_predictors(data: GroupArrays, state: LargePState):
    """Means of cloglog(IR_k) and cloglog(IFR_k)."""
    mu1 = state.beta + data.x @ state.beta_coefs
    mu2 = state.theta + data.z @ state.theta_coefs
    return mu1, mu2


def _phi_term(data: GroupArrays, state: LargePState):
    """log p(phi | gamma) summed over unknown groups, with known phi forced to 1."""
    phi = np.where(data.known, 1.0, state.phi)
    unk = ~data.known
    if not unk.any():
        return phi, 0.0
    pu = phi[unk]
    if np.any(pu < 1.0) or np.any(pu > 1.0 + state.gamma):
        return phi, -np.inf
    return phi, -unk.sum() * math.log(state.gamma)


def _random_effect_terms(data, state, prior, kappa2):
    mu1, mu2 = linear_predictors(data, state)
    lp = float(np.sum(_normal_logpdf(state.kappa1, mu1, state.sigma)))
    if not prior.fixed_effects:
        lp += float(np.sum(_normal_logpdf(kappa2, mu2, state.tau)))
    return lp


def large_p_state_log_density(data: GroupArrays, state: LargePState, prior: PriorConfig) -> float:
    """Array-level large-P log posterior."""
    lp = log_hyperprior(state, prior, data.n_unknown)
    if not np.isfinite(lp):
        return -np.inf
    phi, lphi = _phi_term(data, state)
    if not np.isfinite(lphi):
        return -np.inf
    kappa2 = linear_predictors(data, state)[1] if prior.fixed_effects else state.kappa2
    ir = icloglog(state.kappa1)
    ifr = icloglog(kappa2)
    b = -np.expm1(-phi * np.exp(state.kappa1))
    ll = binom_logpmf(data.confirmed, data.tests, b)
    ll = ll + binom_logpmf(data.deaths, data.population, ifr * ir)
    total = lp + lphi + float(np.sum(ll)) + _random_effect_terms(data, state, prior, kappa2)
    return total if np.isfinite(total) else -np.inf


def log_density_large_p(groups, latents, params, prior: PriorConfig) -> float:
    """Large-P log posterior.

    CC_k ~ Binom(T_k, 1 - (1 - IR_k)^phi_k) and D_k ~ Binom(P_k, IFR_k IR_k);
    the latent infection counts are marginalised.  Group-level covariates
    shift the normal means of cloglog(IR_k) and cloglog(IFR_k).  Returns
    ``-inf`` off the support.
    """
    data = groups if isinstance(groups, GroupArrays) else GroupArrays.from_groups(groups)
    state = latents if isinstance(latents, LargePState) else state_from_objects(latents, params)
    return large_p_state_log_density(data, state, prior)


def grad_log_density_large_p(data: GroupArrays, state: LargePState, prior: PriorConfig) -> LargePState:
    """Analytic gradient of the large-P log posterior.

    Returned as a :class:`LargePState` holding partial derivatives.  Entries
    for known-phi groups' phi, for gamma when no group has unknown phi, and
    for tau / kappa2 under fixed effects are zero.
    """
    s = state
    unk = ~data.known
    phi = np.where(data.known, 1.0, s.phi)
    mu1, mu2 = linear_predictors(data, s)
    k2 = mu2 if prior.fixed_effects else s.kappa2
    e1, e2 = np.exp(s.kappa1), np.exp(k2)
    ir, ifr = -np.expm1(-e1), -np.expm1(-e2)
    cc, t, d, p = data.confirmed, data.tests, data.deaths, data.population

    # confirmed cases: cc log(1 - exp(-r)) - (t - cc) r, r = phi e1
    r = phi * e1
    dl_dr = cc / np.expm1(r) - (t - cc)
    # deaths: d log(a) + (p - d) log(1 - a), a = ir ifr
    a = ir * ifr
    dl_da = d / a - (p - d) / (1.0 - a)
    dir_dk1 = e1 * np.exp(-e1)
    difr_dk2 = e2 * np.exp(-e2)

    g_k1 = dl_dr * phi * e1 + dl_da * ifr * dir_dk1 - (s.kappa1 - mu1) / s.sigma**2
    g_phi = np.where(unk, dl_dr * e1, 0.0)
    g_mu1 = (s.kappa1 - mu1) / s.sigma**2
    g_sigma = float(np.sum(-1.0 / s.sigma + (s.kappa1 - mu1) ** 2 / s.sigma**3)) - s.sigma

    lik_k2 = dl_da * ir * difr_dk2
    if prior.fixed_effects:
        g_k2 = np.zeros_like(k2)
        g_mu2 = lik_k2
        g_tau = 0.0
    else:
        g_k2 = lik_k2 - (s.kappa2 - mu2) / s.tau**2
        g_mu2 = (s.kappa2 - mu2) / s.tau**2
        g_tau = float(np.sum(-1.0 / s.tau + (s.kappa2 - mu2) ** 2 / s.tau**3)) - s.tau / prior.eta**2

    g_theta = float(np.sum(g_mu2)) + 1.0 - math.exp(s.theta)
    g_beta = float(np.sum(g_mu1)) + 1.0 - math.exp(s.beta)
    g_thc = data.z.T @ g_mu2 - s.theta_coefs / prior.coef_sd**2
    g_bec = data.x.T @ g_mu1 - s.beta_coefs / prior.coef_sd**2
    n_u = int(unk.sum())
    g_gamma = (-n_u / s.gamma - prior.lam) if n_u else 0.0
    return LargePState(theta=g_theta, beta=g_beta, tau=g_tau, sigma=g_sigma, gamma=g_gamma,
                       theta_coefs=g_thc, beta_coefs=g_bec, kappa1=g_k1, kappa2=g_k2, phi=g_phi)


@functools.lru_cache(maxsize=8192)
def _nchg_term(cc, m1, m2, t, phi):
    # single-coordinate MCMC moves leave the other groups' terms unchanged
    return nchg_log_pmf(cc, NchgParams(m1, m2, t, phi))


def log_density_small_p(groups, latents: Sequence[LatentState], params: GlobalParameters,
                        prior: PriorConfig) -> float:
    """Small-P log posterior retaining the infection counts C_k.

    Sums, over groups, Binom(D_k; C_k, IFR_k) + NCHG(CC_k; C_k, P_k - C_k, T_k,
    phi_k) + Binom(C_k; P_k, IR_k) + normal densities on cloglog(IR_k) and
    cloglog(IFR_k), then adds the hyperpriors.  Returns ``-inf`` whenever a
    support constraint is violated.
    """
    data = groups if isinstance(groups, GroupArrays) else GroupArrays.from_groups(groups)
    if len(latents) != data.n_groups:
        raise DomainError("one latent state per group is required")
    if any(l.c is None for l in latents):
        raise DomainError("small-P latents need the infection count c")
    for l in latents:
        if not (0 < l.ir < 1 and 0 < l.ifr < 1):
            return -np.inf
    state = state_from_objects(latents, params)
    lp = log_hyperprior(state, prior, data.n_unknown)
    if not np.isfinite(lp):
        return -np.inf
    phi, lphi = _phi_term(data, state)
    if not np.isfinite(lphi):
        return -np.inf
    kappa2 = linear_predictors(data, state)[1] if prior.fixed_effects else state.kappa2
    ifr = icloglog(kappa2)
    lp += lphi + _random_effect_terms(data, state, prior, kappa2)
    for k, lat in enumerate(latents):
        c = int(lat.c)
        p, t, cc, d = (int(data.population[k]), int(data.tests[k]),
                       int(data.confirmed[k]), int(data.deaths[k]))
        if not d <= c <= p:
            return -np.inf
        if cc > c or t - cc > p - c:
            return -np.inf
        lp += float(binom_logpmf(d, c, ifr[k]))
        lp += _nchg_term(cc, c, p - c, t, float(phi[k]))
        lp += float(binom_logpmf(c, p, lat.ir))
    return lp if np.isfinite(lp) else -np.inf


def odds_ratio_approx(phi: float, ir: float) -> tuple[float, float]:
    """Exact log odds ratio between testing and infection status, and c_IR.

    Under CC ~ Binom(T, 1 - (1 - IR)^phi) the odds ratio satisfies
    log OR ~= c_IR log(phi) near phi = 1, with c_IR = -log(1 - IR) / IR.
    """
    if not phi > 0 or not 0 < ir < 1:
        raise DomainError("need phi > 0 and 0 < ir < 1")
    l1 = math.log1p(-ir)
    log_or = math.log(-math.expm1(phi * l1)) - phi * l1 - math.log(ir) + l1
    return log_or, -l1 / ir


def single_group_ifr(cc: int, t: int, d: int, p: int, config=None, prob: float = 0.95):
    """Posterior summary of the IFR for one group with representative testing.

    Model: cc ~ Binom(t, ir), d ~ Binom(p, ifr * ir), ifr, ir ~ U(0, 1).

    Parameters
    ----------
    config : ChainConfig, optional
        Defaults to 4 chains of 100,000 iterations (10% burn-in, thinning 10).

    Returns
    -------
    PosteriorSummary
        Posterior median and ``prob`` HPD interval of the IFR.

    Raises
    ------
    ConvergenceError
        If R-hat stays above the threshold after all restarts.
    """
    from .diagnostics import effective_sample_size, gelman_rubin, hpd_interval, PosteriorSummary
    from .errors import ConvergenceError
    from .sampler import ChainConfig, SingleGroupModel, run_chains

    if config is None:
        config = ChainConfig(n_chains=4, total_draws=400000, burn_in_fraction=0.10, thinning=10,
                             max_total_draws=6400000)
    res = run_chains(SingleGroupModel(cc, t, d, p), config)
    if not res.converged:
        raise ConvergenceError(f"single-group chains did not converge (max R-hat {res.max_rhat:.3f})",
                               residual=res.max_rhat)
    draws = res.column("ifr")
    lo, hi = hpd_interval(draws, prob)
    rhat = gelman_rubin(draws) if draws.shape[0] > 1 else float("nan")
    return PosteriorSummary("ifr", float(np.median(draws)), lo, hi, prob, rhat,
                            effective_sample_size(draws))
