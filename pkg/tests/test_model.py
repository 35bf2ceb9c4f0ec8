import math

import numpy as np
import pytest
from scipy import stats

from ifrpref.distributions import NchgParams, nchg_log_pmf
from ifrpref.errors import DomainError
from ifrpref.model import (
    GlobalParameters,
    GroupArrays,
    GroupObservation,
    LargePState,
    LatentState,
    PriorConfig,
    cloglog,
    grad_log_density_large_p,
    icloglog,
    large_p_state_log_density,
    log_density_large_p,
    log_density_small_p,
    odds_ratio_approx,
)

from conftest import urn_enumeration_pmf


def _groups(with_cov=False):
    obs = [
        GroupObservation("a", 50000, 2000, 180, 12, True),
        GroupObservation("b", 800000, 30000, 4200, 310, False),
        GroupObservation("c", 120000, 9000, 700, 40, False),
        GroupObservation("d", 2_000_000, 90000, 15000, 2100, False),
    ]
    if with_cov:
        x = [(0.3, -1.0), (-0.2, 0.4), (1.1, 0.1), (-1.2, 0.5)]
        z = [(0.5,), (-0.7,), (0.9,), (-0.7,)]
        for g, xi, zi in zip(obs, x, z):
            g.ir_covariates, g.ifr_covariates = xi, zi
    return obs


def _random_state(rng, data: GroupArrays):
    k = data.n_groups
    return LargePState(
        theta=rng.normal(-4.5, 0.3), beta=rng.normal(-2.5, 0.3), tau=rng.uniform(0.05, 0.3),
        sigma=rng.uniform(0.3, 1.0), gamma=rng.uniform(4.0, 20.0),
        theta_coefs=rng.normal(0, 0.3, data.z.shape[1]), beta_coefs=rng.normal(0, 0.3, data.x.shape[1]),
        kappa1=rng.normal(-2.5, 0.4, k), kappa2=rng.normal(-4.5, 0.2, k),
        phi=np.where(data.known, 1.0, rng.uniform(1.2, 3.5, k)),
    )


def _flatten(s: LargePState):
    return np.concatenate([[s.theta, s.beta, s.tau, s.sigma, s.gamma], s.theta_coefs, s.beta_coefs,
                           s.kappa1, s.kappa2, s.phi])


def _unflatten(v, q, h, k):
    return LargePState(theta=v[0], beta=v[1], tau=v[2], sigma=v[3], gamma=v[4],
                       theta_coefs=v[5:5 + q].copy(), beta_coefs=v[5 + q:5 + q + h].copy(),
                       kappa1=v[5 + q + h:5 + q + h + k].copy(), kappa2=v[5 + q + h + k:5 + q + h + 2 * k].copy(),
                       phi=v[5 + q + h + 2 * k:].copy())


def _reference_large_p(data, s, prior):
    """Independent transcription with scipy densities."""
    lp = s.theta - math.exp(s.theta) + s.beta - math.exp(s.beta)
    lp += stats.halfnorm.logpdf(s.sigma) + stats.halfnorm.logpdf(s.tau, scale=prior.eta)
    lp += stats.expon.logpdf(s.gamma, scale=1 / prior.lam)
    lp += stats.norm.logpdf(s.theta_coefs, 0, prior.coef_sd).sum() + stats.norm.logpdf(s.beta_coefs, 0, prior.coef_sd).sum()
    for i in range(data.n_groups):
        phi = 1.0 if data.known[i] else s.phi[i]
        if not data.known[i]:
            lp += stats.uniform.logpdf(phi, 1.0, s.gamma)
        ir, ifr = 1 - math.exp(-math.exp(s.kappa1[i])), 1 - math.exp(-math.exp(s.kappa2[i]))
        lp += stats.binom.logpmf(data.confirmed[i], data.tests[i], 1 - (1 - ir) ** phi)
        lp += stats.binom.logpmf(data.deaths[i], data.population[i], ir * ifr)
        lp += stats.norm.logpdf(s.kappa1[i], s.beta + data.x[i] @ s.beta_coefs, s.sigma)
        lp += stats.norm.logpdf(s.kappa2[i], s.theta + data.z[i] @ s.theta_coefs, s.tau)
    return lp


class TestLinks:
    def test_known_values(self):
        assert cloglog(1 - math.exp(-1)) == pytest.approx(0.0, abs=1e-15)
        assert icloglog(0.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
        assert cloglog(0.02) == pytest.approx(math.log(-math.log(0.98)), abs=1e-15)

    def test_round_trip(self):
        p = np.array([1e-8, 0.001, 0.3, 0.97])
        np.testing.assert_allclose(icloglog(cloglog(p)), p, rtol=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            cloglog(0.0)
        with pytest.raises(DomainError):
            cloglog(np.array([0.5, 1.0]))


class TestLargePDensity:
    @pytest.mark.parametrize("with_cov", [False, True])
    def test_matches_scipy_reference(self, rng, with_cov):
        data = GroupArrays.from_groups(_groups(with_cov))
        prior = PriorConfig(lam=0.05, eta=0.1)
        for _ in range(5):
            s = _random_state(rng, data)
            assert large_p_state_log_density(data, s, prior) == pytest.approx(
                _reference_large_p(data, s, prior), rel=1e-10, abs=1e-8)

    def test_object_interface(self):
        groups = _groups()
        lat = [LatentState(0.05, 0.01, 1.0), LatentState(0.02, 0.008, 2.0), LatentState(0.04, 0.006, 1.5),
               LatentState(0.09, 0.012, 3.0)]
        params = GlobalParameters(theta=-4.6, beta=-3.0, tau=0.2, sigma=0.5, gamma=5.0)
        data = GroupArrays.from_groups(groups)
        from ifrpref.model import state_from_objects
        s = state_from_objects(lat, params)
        assert log_density_large_p(groups, lat, params, PriorConfig()) == pytest.approx(
            _reference_large_p(data, s, PriorConfig()), rel=1e-10)

    def test_support(self, rng):
        data = GroupArrays.from_groups(_groups())
        s = _random_state(rng, data)
        bad = s.copy()
        bad.phi[1] = 0.9
        assert large_p_state_log_density(data, bad, PriorConfig()) == -np.inf
        bad = s.copy()
        bad.phi[1] = s.gamma + 1.5
        assert large_p_state_log_density(data, bad, PriorConfig()) == -np.inf
        bad = s.copy()
        bad.tau = -0.1
        assert large_p_state_log_density(data, bad, PriorConfig()) == -np.inf

    def test_permutation_invariance(self, rng):
        groups = _groups(True)
        data = GroupArrays.from_groups(groups)
        s = _random_state(rng, data)
        perm = [2, 0, 3, 1]
        data_p = GroupArrays.from_groups([groups[i] for i in perm])
        s_p = s.copy()
        s_p.kappa1, s_p.kappa2, s_p.phi = s.kappa1[perm], s.kappa2[perm], s.phi[perm]
        prior = PriorConfig()
        assert large_p_state_log_density(data_p, s_p, prior) == pytest.approx(
            large_p_state_log_density(data, s, prior), rel=1e-13)

    def test_fixed_effects_ignores_kappa2(self, rng):
        data = GroupArrays.from_groups(_groups(True))
        prior = PriorConfig(fixed_effects=True)
        s = _random_state(rng, data)
        s.tau = 0.0
        t = s.copy()
        t.kappa2 = t.kappa2 + 1.0
        assert large_p_state_log_density(data, s, prior) == large_p_state_log_density(data, t, prior)


class TestGradient:
    @pytest.mark.parametrize("fixed", [False, True])
    def test_central_differences(self, rng, fixed):
        data = GroupArrays.from_groups(_groups(True))
        prior = PriorConfig(lam=0.05, eta=0.1, fixed_effects=fixed)
        q, h, k = data.z.shape[1], data.x.shape[1], data.n_groups
        for _ in range(20):
            s = _random_state(rng, data)
            v = _flatten(s)
            g = _flatten(grad_log_density_large_p(data, s, prior))
            f = lambda u: large_p_state_log_density(data, _unflatten(u, q, h, k), prior)
            for j in range(v.size):
                if fixed and (j == 2 or 5 + q + h + k <= j < 5 + q + h + 2 * k):
                    continue
                if 5 + q + h + 2 * k <= j and data.known[j - (5 + q + h + 2 * k)]:
                    continue
                step = 1e-6 * max(1.0, abs(v[j]))
                up, dn = v.copy(), v.copy()
                up[j] += step
                dn[j] -= step
                num = (f(up) - f(dn)) / (2 * step)
                assert abs(g[j] - num) <= 1e-4 * max(abs(num), 1.0), (j, g[j], num)


class TestSmallPDensity:
    def test_hand_sum(self):
        groups = [GroupObservation("a", 12, 5, 2, 1, True), GroupObservation("b", 10, 4, 3, 1, False)]
        lat = [LatentState(0.3, 0.2, 1.0, c=4), LatentState(0.4, 0.1, 2.5, c=5)]
        params = GlobalParameters(theta=-1.5, beta=-0.8, tau=0.3, sigma=0.7, gamma=3.0)
        prior = PriorConfig(lam=0.5, eta=0.2)
        ref = params.theta - math.exp(params.theta) + params.beta - math.exp(params.beta)
        ref += stats.halfnorm.logpdf(params.sigma) + stats.halfnorm.logpdf(params.tau, scale=prior.eta)
        ref += stats.expon.logpdf(params.gamma, scale=1 / prior.lam) - math.log(params.gamma)
        for g, l in zip(groups, lat):
            pmf = urn_enumeration_pmf(l.c, g.population - l.c, g.tests, l.phi)
            ref += math.log(pmf[g.confirmed])
            ref += stats.binom.logpmf(g.deaths, l.c, l.ifr) + stats.binom.logpmf(l.c, g.population, l.ir)
            ref += stats.norm.logpdf(cloglog(l.ir), params.beta, params.sigma)
            ref += stats.norm.logpdf(cloglog(l.ifr), params.theta, params.tau)
        assert log_density_small_p(groups, lat, params, prior) == pytest.approx(ref, abs=1e-7)

    def test_support_constraints(self):
        groups = [GroupObservation("a", 12, 5, 2, 3, True)]
        params = GlobalParameters(theta=-1.5, beta=-0.8, tau=0.3, sigma=0.7)
        prior = PriorConfig()
        assert log_density_small_p(groups, [LatentState(0.3, 0.2, 1.0, c=2)], params, prior) == -np.inf
        # only 7 non-cases in the urn but 3 negative tests
        assert np.isfinite(log_density_small_p(groups, [LatentState(0.3, 0.2, 1.0, c=9)], params, prior))
        assert log_density_small_p(groups, [LatentState(0.3, 0.2, 1.0, c=10)], params, prior) == -np.inf

    def test_needs_counts(self):
        groups = [GroupObservation("a", 12, 5, 2, 1, True)]
        params = GlobalParameters(theta=-1.5, beta=-0.8, tau=0.3, sigma=0.7)
        with pytest.raises(DomainError):
            log_density_small_p(groups, [LatentState(0.3, 0.2)], params, PriorConfig())


class TestLargePApproximation:
    @pytest.mark.parametrize("ir,phi0", [(0.002, 1.5), (0.002, 4.0), (0.005, 2.0), (0.005, 3.0)])
    def test_phi_argmax_agrees_with_binomial(self, ir, phi0):
        # rare infections and a small tested fraction, where the binomial form is meant to apply
        p, t = 4_000_000, 20000
        c = int(ir * p)
        cc = int(round(t * (1 - (1 - ir) ** phi0)))
        grid = np.linspace(1.0, 3 * phi0, 601)
        ll_nchg = [nchg_log_pmf(cc, NchgParams(c, p - c, t, float(f))) for f in grid]
        ll_binom = stats.binom.logpmf(cc, t, 1 - (1 - ir) ** grid)
        a_nchg = grid[int(np.argmax(ll_nchg))]
        a_binom = grid[int(np.argmax(ll_binom))]
        assert abs(a_nchg - a_binom) <= 0.02 * a_binom


class TestOddsRatio:
    @pytest.mark.parametrize("ir", [0.01, 0.1, 0.3])
    def test_log_or_linear_near_one(self, ir):
        phi = 1.001
        log_or, c_ir = odds_ratio_approx(phi, ir)
        assert log_or == pytest.approx(c_ir * math.log(phi), rel=1e-2)
        assert c_ir == pytest.approx(-math.log1p(-ir) / ir)

    def test_phi_one_gives_independence(self):
        assert odds_ratio_approx(1.0, 0.2)[0] == pytest.approx(0.0, abs=1e-14)

    def test_direct_odds_ratio(self):
        # P(test | infected) / P(test | not) from the two-by-two table implied by b = 1 - (1 - ir)^phi
        ir, phi = 0.15, 3.0
        b = 1 - (1 - ir) ** phi
        odds_tested_pos = b / (1 - b)
        odds_pop = ir / (1 - ir)
        assert odds_ratio_approx(phi, ir)[0] == pytest.approx(math.log(odds_tested_pos / odds_pop), rel=1e-12)
