"""Adaptive Metropolis-Hastings samplers and multi-chain orchestration.

Two execution paths share the same kernel definitions:

* generic kernels (:func:`adaptive_rwm_update`, :func:`block_update`,
  :func:`transformed_update_rates`, :func:`transformed_update_phi`) act on a
  flat state vector and any log-density callable; :class:`GenericModel`
  sweeps them and backs the small-P and single-group models;
* :class:`LargePModel` runs the same sweep compiled with numba.

Proposal scales adapt by Robbins-Monro toward 0.44 (univariate) or 0.234
(block) acceptance during burn-in only; retained draws come from a fixed
kernel.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _engine
from .diagnostics import rhat_columns
from .errors import DomainError
from .model import GroupArrays, LargePState, PriorConfig, icloglog, large_p_state_log_density

logger = logging.getLogger(__name__)

TARGET_UNIVARIATE = _engine.TARGET_UNI
TARGET_BLOCK = _engine.TARGET_BLOCK


@dataclass
class ChainConfig:
    """MCMC run settings; ``total_draws`` counts sweeps summed over chains."""

    n_chains: int = 3
    total_draws: int = 18000
    burn_in_fraction: float = 0.20
    thinning: int = 5
    rhat_threshold: float = 1.05
    max_restarts: int = 4
    max_total_draws: int = 288000
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 <= self.burn_in_fraction < 1:
            raise DomainError("burn_in_fraction must lie in [0, 1)")
        if self.thinning < 1:
            raise DomainError("thinning must be >= 1")
        if not self.rhat_threshold > 1:
            raise DomainError("rhat_threshold must exceed 1")
        if self.n_chains < 1:
            raise DomainError("n_chains must be >= 1")

    @classmethod
    def european(cls, seed=0, **kw):
        """4 chains x 10,000 draws, 10% burn-in, thinning 50."""
        base = dict(n_chains=4, total_draws=40000, burn_in_fraction=0.10, thinning=50,
                    max_total_draws=640000, seed=seed)
        base.update(kw)
        return cls(**base)


@dataclass
class ChainResult:
    names: list
    draws: np.ndarray  # (n_chains, n_retained, n_params)
    rhat: np.ndarray
    n_restarts: int
    converged: bool
    draws_per_chain: int = 0
    acceptance: dict = field(default_factory=dict)

    def column(self, name):
        return self.draws[:, :, self.names.index(name)]

    def pooled(self):
        """Draws stacked over chains, shape (n_chains * n_retained, n_params)."""
        return self.draws.reshape(-1, self.draws.shape[2])

    @property
    def max_rhat(self):
        return float(np.nanmax(self.rhat)) if self.rhat.size else float("nan")


# ---------------------------------------------------------------------------
# generic kernels


@dataclass
class AdaptState:
    """Robbins-Monro scale adaptation for one univariate kernel."""

    scale: float = 0.1
    target: float = TARGET_UNIVARIATE
    n: int = 0
    frozen: bool = False
    rate: float = 0.6

    def update(self, accept_prob):
        if self.frozen:
            return
        self.n += 1
        log_s = math.log(self.scale) + (accept_prob - self.target) / self.n ** self.rate
        self.scale = math.exp(min(max(log_s, -12.0), 4.0))


@dataclass
class BlockAdaptState:
    """Scale plus empirical covariance adaptation for a block kernel."""

    dim: int
    scale: float = 1.0
    target: float = TARGET_BLOCK
    n: int = 0
    frozen: bool = False
    chol: np.ndarray = None
    mean: np.ndarray = None
    m2: np.ndarray = None
    update_every: int = 100
    min_samples: int = 200

    def __post_init__(self):
        if self.chol is None:
            self.chol = 0.1 * np.eye(self.dim)
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros((self.dim, self.dim))

    def update(self, accept_prob, x):
        if self.frozen:
            return
        self.n += 1
        log_s = math.log(self.scale) + (accept_prob - self.target) / self.n ** 0.6
        self.scale = math.exp(min(max(log_s, -12.0), 4.0))
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += np.outer(d, x - self.mean)
        if self.n >= self.min_samples and self.n % self.update_every == 0:
            cov = self.m2 / (self.n - 1) + 1e-10 * np.eye(self.dim)
            self.chol = np.linalg.cholesky(cov) * 2.38 / math.sqrt(self.dim)


def _mh(log_alpha, rng):
    if not log_alpha == log_alpha:  # nan
        return False
    return log_alpha >= 0 or math.log(rng.random()) < log_alpha


def _prob(log_alpha):
    if not log_alpha == log_alpha:
        return 0.0
    return 1.0 if log_alpha >= 0 else math.exp(log_alpha)


def adaptive_rwm_update(coord: int, x: np.ndarray, log_density: Callable, adapt: AdaptState,
                        rng: np.random.Generator, lp: float | None = None):
    """One Gaussian random-walk Metropolis step on ``x[coord]``.

    Returns ``(x, lp, accepted)``; ``x`` is modified in place on acceptance.
    """
    if lp is None:
        lp = log_density(x)
    old = x[coord]
    x[coord] = old + adapt.scale * rng.standard_normal()
    lp_new = log_density(x)
    log_alpha = lp_new - lp
    accepted = _mh(log_alpha, rng)
    if accepted:
        lp = lp_new
    else:
        x[coord] = old
    adapt.update(_prob(log_alpha))
    return x, lp, accepted


def block_update(indices: Sequence[int], x: np.ndarray, log_density: Callable,
                 adapt: BlockAdaptState, rng: np.random.Generator, lp: float | None = None):
    """Joint Gaussian random-walk step on ``x[indices]``, accepted atomically."""
    idx = np.asarray(indices)
    if lp is None:
        lp = log_density(x)
    old = x[idx].copy()
    x[idx] = old + adapt.scale * (adapt.chol @ rng.standard_normal(idx.size))
    lp_new = log_density(x)
    log_alpha = lp_new - lp
    accepted = _mh(log_alpha, rng)
    if accepted:
        lp = lp_new
    else:
        x[idx] = old
    adapt.update(_prob(log_alpha), x[idx].copy())
    return x, lp, accepted


def rates_to_z(k1, k2):
    e1, e2 = math.exp(k1), math.exp(k2)
    return e1 + e2, e1 - e2


def rates_from_z(z1, z2):
    """Inverse of :func:`rates_to_z`; ``None`` when a rate would be non-positive."""
    e1, e2 = 0.5 * (z1 + z2), 0.5 * (z1 - z2)
    if e1 <= 0 or e2 <= 0:
        return None
    return math.log(e1), math.log(e2)


def log_jacobian_rates(k1, k2):
    """log |d(z1, z2) / d(k1, k2)| = log(2 exp(k1 + k2))."""
    return math.log(2.0) + k1 + k2


def phi_to_z(phi, k1):
    lp = math.log(phi)
    return lp + k1, lp - k1


def phi_from_z(z1, z2):
    return math.exp(0.5 * (z1 + z2)), 0.5 * (z1 - z2)


def log_jacobian_phi(phi):
    """log |d(z1, z2) / d(phi, k1)| = log(2 / phi)."""
    return math.log(2.0) - math.log(phi)


def transformed_update_rates(i_k1: int, i_k2: int, x: np.ndarray, log_density: Callable,
                             adapt: AdaptState, rng: np.random.Generator, lp: float | None = None,
                             step_z1: bool = False):
    """Random-walk step in the z2 = exp(k1) - exp(k2) direction.

    The target in (z1, z2) coordinates is the original density minus
    log|J|; proposals mapping to a non-positive rate are rejected.  The step
    is taken on w = z2 / z1.  With ``step_z1`` log(z1) also takes a step; the
    walk is then symmetric in (log z1, w), whose map to (z1, z2) has
    Jacobian z1^2.
    """
    if lp is None:
        lp = log_density(x)
    k1, k2 = x[i_k1], x[i_k2]
    z1, z2 = rates_to_z(k1, k2)
    w = z2 / z1 + adapt.scale * rng.standard_normal()
    z1n = z1 * math.exp(adapt.scale * rng.standard_normal()) if step_z1 else z1
    z2n = w * z1n
    back = rates_from_z(z1n, z2n)
    extra = 2.0 * (math.log(z1n) - math.log(z1)) if step_z1 else 0.0
    if back is None:
        log_alpha = -math.inf
    else:
        x[i_k1], x[i_k2] = back
        lp_new = log_density(x)
        log_alpha = (lp_new - log_jacobian_rates(*back)) - (lp - log_jacobian_rates(k1, k2)) + extra
    accepted = _mh(log_alpha, rng)
    if accepted:
        lp = lp_new
    else:
        x[i_k1], x[i_k2] = k1, k2
    adapt.update(_prob(log_alpha))
    return x, lp, accepted


def transformed_update_phi(i_phi: int, i_k1: int, x: np.ndarray, log_density: Callable,
                           adapt: AdaptState, rng: np.random.Generator, lp: float | None = None):
    """Random-walk step in the z2 = log(phi) - k1 direction (z1 held fixed)."""
    if lp is None:
        lp = log_density(x)
    phi, k1 = x[i_phi], x[i_k1]
    if phi <= 0:
        return x, lp, False
    z1, z2 = phi_to_z(phi, k1)
    phin, k1n = phi_from_z(z1, z2 + adapt.scale * rng.standard_normal())
    x[i_phi], x[i_k1] = phin, k1n
    lp_new = log_density(x)
    log_alpha = (lp_new - log_jacobian_phi(phin)) - (lp - log_jacobian_phi(phi))
    accepted = _mh(log_alpha, rng)
    if accepted:
        lp = lp_new
    else:
        x[i_phi], x[i_k1] = phi, k1
    adapt.update(_prob(log_alpha))
    return x, lp, accepted


def discrete_update(coord: int, x: np.ndarray, log_density: Callable, adapt: AdaptState,
                    rng: np.random.Generator, lp: float | None = None):
    """Integer random walk: +/- a geometric step with mean set by ``adapt.scale``."""
    if lp is None:
        lp = log_density(x)
    old = x[coord]
    p = 1.0 / (1.0 + max(adapt.scale, 1e-12))
    step = rng.geometric(min(max(p, 1e-9), 1.0))
    x[coord] = old + (step if rng.random() < 0.5 else -step)
    lp_new = log_density(x)
    log_alpha = lp_new - lp
    accepted = _mh(log_alpha, rng)
    if accepted:
        lp = lp_new
    else:
        x[coord] = old
    adapt.update(_prob(log_alpha))
    return x, lp, accepted


# ---------------------------------------------------------------------------
# kernel wrappers used by GenericModel


class Kernel:
    def step(self, x, lp, log_density, rng):
        raise NotImplementedError

    def freeze(self):
        self.adapt.frozen = True


class RWM(Kernel):
    def __init__(self, coord, scale=0.1):
        self.coord = coord
        self.adapt = AdaptState(scale=scale)

    def step(self, x, lp, log_density, rng):
        return adaptive_rwm_update(self.coord, x, log_density, self.adapt, rng, lp)


class Block(Kernel):
    def __init__(self, indices, scale=1.0, chol=None):
        self.indices = list(indices)
        self.adapt = BlockAdaptState(dim=len(self.indices), scale=scale, chol=chol)

    def step(self, x, lp, log_density, rng):
        return block_update(self.indices, x, log_density, self.adapt, rng, lp)


class RatesMove(Kernel):
    def __init__(self, i_k1, i_k2, scale=0.05):
        self.i = (i_k1, i_k2)
        self.adapt = AdaptState(scale=scale)

    def step(self, x, lp, log_density, rng):
        return transformed_update_rates(*self.i, x, log_density, self.adapt, rng, lp)


class PhiMove(Kernel):
    def __init__(self, i_phi, i_k1, scale=0.1):
        self.i = (i_phi, i_k1)
        self.adapt = AdaptState(scale=scale)

    def step(self, x, lp, log_density, rng):
        return transformed_update_phi(*self.i, x, log_density, self.adapt, rng, lp)


class Discrete(Kernel):
    def __init__(self, coord, scale=2.0):
        self.coord = coord
        self.adapt = AdaptState(scale=scale)

    def step(self, x, lp, log_density, rng):
        return discrete_update(self.coord, x, log_density, self.adapt, rng, lp)


class GenericModel:
    """A target given as a Python log-density over a flat vector.

    Parameters
    ----------
    log_density : callable
        ``log_density(x) -> float``; ``-inf`` off the support.
    names : list of str
    init : callable
        ``init(rng) -> np.ndarray`` with a finite log-density.
    kernels : callable, optional
        ``kernels() -> list[Kernel]`` building a fresh sweep schedule; defaults
        to a univariate random walk on every coordinate.
    transform : callable, optional
        Maps a state to the row stored in the draws (defaults to identity).
    output_names : list of str, optional
        Column names of ``transform`` output.
    """

    def __init__(self, log_density, names, init, kernels=None, transform=None, output_names=None,
                 inits=None):
        self.log_density = log_density
        self.state_names = list(names)
        self.init = init
        self.inits = inits
        self.kernels = kernels or (lambda: [RWM(i) for i in range(len(self.state_names))])
        self.transform = transform
        self.names = list(output_names) if output_names is not None else list(names)

    def _start(self, rng, seed):
        if self.inits is not None:
            # per-chain starting points, indexed by the chain's position in the seed spawn
            key = getattr(seed, "spawn_key", ())
            chain = key[-1] if key else 0
            return self.inits[chain % len(self.inits)]
        return self.init(rng)

    def run_chain(self, n_iter, n_burn, thin, seed, x0=None):
        rng = np.random.default_rng(seed)
        x = np.array(self._start(rng, seed) if x0 is None else x0, dtype=float)
        lp = self.log_density(x)
        if not np.isfinite(lp):
            raise DomainError("initial state has non-finite log-density")
        kernels = self.kernels()
        n_keep = max(0, (n_iter - n_burn + thin - 1) // thin)
        out = np.empty((n_keep, len(self.names)))
        acc = np.zeros(len(kernels))
        j = 0
        for it in range(n_iter):
            if it == n_burn:
                for kern in kernels:
                    kern.freeze()
            for i, kern in enumerate(kernels):
                x, lp, ok = kern.step(x, lp, self.log_density, rng)
                acc[i] += ok
            if it >= n_burn and (it - n_burn) % thin == 0:
                out[j] = self.transform(x) if self.transform else x
                j += 1
        return out, {"kernels": (acc / max(n_iter, 1)).tolist()}


def small_p_model(groups, prior: PriorConfig) -> GenericModel:
    """Small-P model with the infection counts C_k kept as integer latents.

    State vector: theta, beta, tau, sigma, gamma, coefficients, then per group
    kappa1_k, kappa2_k, phi_k and C_k.  Continuous coordinates take random-walk
    steps (rejected off the support); each C_k takes geometric +/- steps.
    """
    from .model import GlobalParameters, LatentState, log_density_small_p

    data = groups if isinstance(groups, GroupArrays) else GroupArrays.from_groups(groups)
    k, q, h = data.n_groups, data.z.shape[1], data.x.shape[1]
    n_glob = 5 + q + h
    names = ["theta", "beta", "tau", "sigma", "gamma"] + [f"theta_{j + 1}" for j in range(q)] \
        + [f"beta_{j + 1}" for j in range(h)]
    for i in range(k):
        names += [f"kappa1[{i + 1}]", f"kappa2[{i + 1}]", f"phi[{i + 1}]", f"c[{i + 1}]"]

    def unpack(x):
        params = GlobalParameters(theta=x[0], beta=x[1], tau=x[2], sigma=x[3], gamma=x[4],
                                  theta_coefs=x[5:5 + q], beta_coefs=x[5 + q:n_glob])
        lat = []
        for i in range(k):
            k1, k2, phi, c = x[n_glob + 4 * i:n_glob + 4 * i + 4]
            lat.append(LatentState(ir=float(icloglog(k1)), ifr=float(icloglog(k2)),
                                   phi=1.0 if data.known[i] else phi, c=int(c)))
        return lat, params

    def log_density(x):
        if x[2] <= 0 or x[3] <= 0 or x[4] <= 0:
            return -math.inf
        lat, params = unpack(x)
        if any(not (0 < l.ir < 1 and 0 < l.ifr < 1) for l in lat):
            return -math.inf
        return log_density_small_p(data, lat, params, prior)

    def init(rng):
        x = np.zeros(len(names))
        gamma0 = 1.0 / prior.lam
        pos = np.clip(data.confirmed / np.maximum(data.tests, 1.0), 0.01, 0.99)
        ifr0 = np.clip(data.deaths / np.maximum(data.population * pos, 1.0), 1e-4, 0.5)
        x[0] = float(np.mean(np.log(-np.log1p(-ifr0))))
        x[1] = float(np.mean(np.log(-np.log1p(-pos))))
        x[2], x[3], x[4] = prior.eta, 0.5, gamma0
        for i in range(k):
            p, t, cc, d = data.population[i], data.tests[i], data.confirmed[i], data.deaths[i]
            c = int(np.clip(round(pos[i] * p), max(d, cc), p - (t - cc)))
            ir = min(max(c / p, 1e-4), 1 - 1e-4)
            o = n_glob + 4 * i
            x[o] = math.log(-math.log1p(-ir)) + 0.05 * rng.standard_normal()
            x[o + 1] = x[0] + 0.05 * rng.standard_normal()
            x[o + 2] = 1.0 if data.known[i] else 1.0 + 0.5 * gamma0
            x[o + 3] = c
        return x

    def kernels():
        ks = [RWM(j) for j in range(n_glob) if not (j == 2 and prior.fixed_effects)]
        for i in range(k):
            o = n_glob + 4 * i
            ks += [RWM(o), RWM(o + 1)]
            if not data.known[i]:
                ks.append(RWM(o + 2))
            ks.append(Discrete(o + 3, scale=max(1.0, math.sqrt(data.population[i]) / 10)))
        return ks

    return GenericModel(log_density, names, init, kernels=kernels)


# ---------------------------------------------------------------------------
# large-P model on the compiled engine


class LargePModel:
    """Large-P model bound to data and priors, sampled by the compiled sweep.

    The sweep per iteration: univariate updates of every global and group
    parameter, a block update of (phi_k, kappa1_k, kappa2_k) per group, the
    two transformed-coordinate updates per group, and a joint rescaling of
    gamma with the unknown phi_k.
    """

    def __init__(self, groups, prior: PriorConfig):
        self.data = groups if isinstance(groups, GroupArrays) else GroupArrays.from_groups(groups)
        self.prior = prior
        d = self.data
        self.n_groups = d.n_groups
        self.q = d.z.shape[1]
        self.h = d.x.shape[1]
        self.unknown_idx = np.flatnonzero(~d.known)
        self.has_gamma = self.unknown_idx.size > 0
        k = self.n_groups
        self.names = ["theta", "beta", "ifr_overall", "ir_overall", "sigma"]
        if not prior.fixed_effects:
            self.names.append("tau")
        if self.has_gamma:
            self.names.append("gamma")
        self.names += [f"theta_{j + 1}" for j in range(self.q)]
        self.names += [f"beta_{j + 1}" for j in range(self.h)]
        self.names += [f"ir[{i + 1}]" for i in range(k)]
        self.names += [f"ifr[{i + 1}]" for i in range(k)]
        self.names += [f"phi[{i + 1}]" for i in self.unknown_idx]

    # raw engine column layout: glob(5), thc(q), bec(h), k1(K), k2(K), phi(K)
    def _raw_width(self):
        return 5 + self.q + self.h + 3 * self.n_groups

    def _convert(self, raw):
        q, h, k = self.q, self.h, self.n_groups
        theta, beta, tau, sigma, gamma = (raw[:, i] for i in range(5))
        thc = raw[:, 5:5 + q]
        bec = raw[:, 5 + q:5 + q + h]
        off = 5 + q + h
        k1 = raw[:, off:off + k]
        k2 = raw[:, off + k:off + 2 * k]
        phi = raw[:, off + 2 * k:off + 3 * k]
        cols = [theta, beta, icloglog(theta), icloglog(beta), sigma]
        if not self.prior.fixed_effects:
            cols.append(tau)
        if self.has_gamma:
            cols.append(gamma)
        cols += [thc[:, j] for j in range(q)] + [bec[:, j] for j in range(h)]
        cols += [icloglog(k1[:, i]) for i in range(k)]
        cols += [icloglog(k2[:, i]) for i in range(k)]
        cols += [phi[:, i] for i in self.unknown_idx]
        return np.column_stack(cols)

    def initial_state(self, rng: np.random.Generator) -> LargePState:
        """Crude-rate start with a little chain-specific jitter."""
        d, prior = self.data, self.prior
        gamma0 = 1.0 / prior.lam
        phi = np.where(d.known, 1.0, 1.0 + gamma0 * rng.uniform(0.25, 0.75, d.n_groups))
        pos = np.clip(d.confirmed / np.maximum(d.tests, 1.0), 1e-6, 1 - 1e-6)
        # rates consistent with the observed positivity at the starting phi
        ir = np.clip(-np.expm1(np.log1p(-pos) / phi), 1e-6, 1 - 1e-6)
        ifr = np.clip(d.deaths / (d.population * ir), 1e-6, 0.5)
        k1 = np.log(-np.log1p(-ir)) + 0.1 * rng.standard_normal(d.n_groups)
        k2 = np.log(-np.log1p(-ifr)) + 0.1 * rng.standard_normal(d.n_groups)
        theta = float(np.mean(k2)) + 0.1 * rng.standard_normal()
        beta = float(np.mean(k1)) + 0.1 * rng.standard_normal()
        sigma = max(float(np.std(k1)), 0.2)
        tau = 0.0 if prior.fixed_effects else prior.eta * rng.uniform(0.5, 1.5)
        return LargePState(theta=theta, beta=beta, tau=tau, sigma=sigma, gamma=gamma0,
                           theta_coefs=np.zeros(self.q), beta_coefs=np.zeros(self.h),
                           kappa1=k1, kappa2=k2, phi=phi)

    def log_density(self, state: LargePState) -> float:
        return large_p_state_log_density(self.data, state, self.prior)

    def _engine_args(self):
        d = self.data
        return (d.confirmed, d.tests, d.deaths, d.population, d.known.copy(),
                np.ascontiguousarray(d.x), np.ascontiguousarray(d.z),
                float(self.prior.lam), float(self.prior.eta), float(self.prior.coef_sd),
                bool(self.prior.fixed_effects))

    def engine_log_density(self, state: LargePState) -> float:
        """Same target as :meth:`log_density` up to an additive constant."""
        s = state
        glob = np.array([s.theta, s.beta, s.tau, s.sigma, s.gamma], dtype=float)
        return float(_engine.log_density_terms(*self._engine_args(), glob,
                                               np.asarray(s.theta_coefs, float), np.asarray(s.beta_coefs, float),
                                               np.asarray(s.kappa1, float), np.asarray(s.kappa2, float),
                                               np.asarray(s.phi, float)))

    def run_chain(self, n_iter, n_burn, thin, seed, x0: LargePState | None = None):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rng = np.random.default_rng(ss)
        s = self.initial_state(rng) if x0 is None else x0.copy()
        glob = np.array([s.theta, s.beta, s.tau, s.sigma, s.gamma], dtype=float)
        thc = np.array(s.theta_coefs, dtype=float)
        bec = np.array(s.beta_coefs, dtype=float)
        k1 = np.array(s.kappa1, dtype=float)
        k2 = np.array(s.kappa2, dtype=float)
        phi = np.array(s.phi, dtype=float)
        n_keep = max(0, (n_iter - n_burn + thin - 1) // thin)
        raw = np.empty((n_keep, self._raw_width()))
        engine_seed = int(rng.integers(0, 2**31 - 1))
        rates = _engine.run_large_p(*self._engine_args(), glob, thc, bec, k1, k2, phi,
                                    int(n_iter), int(n_burn), int(thin), engine_seed, raw)
        labels = ["global", "group", "phi_u", "block", "rates", "phi_z", "gamma_scale", "ridge"]
        return self._convert(raw), dict(zip(labels, rates.tolist()))


class SingleGroupModel:
    """Two-parameter model cc ~ Binom(t, ir), d ~ Binom(p, ifr ir), uniform priors."""

    names = ["ir", "ifr"]

    def __init__(self, cc, t, d, p):
        if not (0 <= cc <= t and 0 <= d <= p and t >= 1 and p >= 1):
            raise DomainError("need 0 <= cc <= t and 0 <= d <= p")
        self.counts = (float(cc), float(t), float(d), float(p))

    def run_chain(self, n_iter, n_burn, thin, seed):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        rng = np.random.default_rng(ss)
        cc, t, d, p = self.counts
        ir0 = min(max((cc + 0.5) / (t + 1.0), 1e-4), 1 - 1e-4)
        ifr0 = min(max((d + 0.5) / (p * ir0 + 1.0), 1e-6), 0.5)
        u = np.array([math.log(ir0 / (1 - ir0)), math.log(ifr0 / (1 - ifr0))])
        u += 0.1 * rng.standard_normal(2)
        n_keep = max(0, (n_iter - n_burn + thin - 1) // thin)
        out = np.empty((n_keep, 2))
        rates = _engine.run_single_group(cc, t, d, p, u, int(n_iter), int(n_burn), int(thin),
                                         int(rng.integers(0, 2**31 - 1)), out)
        return out, {"univariate": float(rates[0]), "block": float(rates[1])}


# ---------------------------------------------------------------------------
# orchestration


def _run_one(args):
    model, n_iter, n_burn, thin, seed = args
    return model.run_chain(n_iter, n_burn, thin, seed)


def _chain_seeds(seed, attempt, n):
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, attempt]).spawn(n)


def run_chains(model, config: ChainConfig) -> ChainResult:
    """Run independent chains, check R-hat, and restart with doubled draws on failure.

    Each attempt uses fresh, deterministic seeds derived from
    ``config.seed``.  After ``max_restarts`` doublings (or once the draw budget
    ``max_total_draws`` would be exceeded) the last attempt is returned with
    ``converged=False``.
    """
    per_chain = int(math.ceil(config.total_draws / config.n_chains))
    attempt = 0
    while True:
        n_burn = int(round(config.burn_in_fraction * per_chain))
        seeds = _chain_seeds(config.seed, attempt, config.n_chains)
        jobs = [(model, per_chain, n_burn, config.thinning, s) for s in seeds]
        if config.n_jobs > 1 and config.n_chains > 1:
            with ProcessPoolExecutor(max_workers=config.n_jobs) as pool:
                results = list(pool.map(_run_one, jobs))
        else:
            results = [_run_one(j) for j in jobs]
        draws = np.stack([r[0] for r in results])
        acceptance = {k: float(np.mean([r[1][k] for r in results])) for k in results[0][1]} \
            if isinstance(results[0][1], dict) else {}
        names = list(model.names)
        rhat = _rhat_or_nan(draws)
        converged = bool(np.all(rhat[np.isfinite(rhat)] <= config.rhat_threshold)) \
            and not np.any(np.isinf(rhat))
        if config.n_chains < 2:
            converged = True
        result = ChainResult(names=names, draws=draws, rhat=rhat, n_restarts=attempt,
                             converged=converged, draws_per_chain=per_chain, acceptance=acceptance)
        if converged:
            return result
        next_per_chain = per_chain * 2
        if attempt >= config.max_restarts or next_per_chain * config.n_chains > config.max_total_draws:
            logger.warning("no convergence after %d restarts (max R-hat %.3f)", attempt, result.max_rhat)
            return result
        logger.info("max R-hat %.3f > %.3f; restarting with %d draws per chain",
                    result.max_rhat, config.rhat_threshold, next_per_chain)
        per_chain = next_per_chain
        attempt += 1


def _rhat_or_nan(draws):
    m, n, p = draws.shape
    if m < 2 or n < 10:
        return np.full(p, np.nan)
    rhat = rhat_columns(draws)
    # constant columns (e.g. a parameter pinned by the data layout) carry no information
    const = np.all(draws == draws[:1, :1, :], axis=(0, 1))
    rhat[const] = np.nan
    return rhat
