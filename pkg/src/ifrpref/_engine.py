"""Compiled MCMC sweep for the large-P model.

State is kept in natural coordinates:
    glob = [theta, beta, tau, sigma, gamma], thc[q], bec[h], k1[K], k2[K], phi[K]
Each update proposes in some transformed coordinate system and adds the
log-Jacobian of that transform to the Metropolis-Hastings ratio.
"""

import math

import numpy as np
from numba import njit

TARGET_UNI = 0.44
TARGET_BLOCK = 0.234
_LS_MIN, _LS_MAX = -12.0, 4.0


@njit(cache=True)
def _seed(seed):
    np.random.seed(seed)


@njit(cache=True)
def _group_ll(cc, t, d, p, k1, k2, phi):
    """Binomial log-likelihood of one group without the constant coefficients."""
    e1 = math.exp(k1)
    r = phi * e1
    out = -(t - cc) * r
    if cc > 0:
        b = -math.expm1(-r)
        if b <= 0.0:
            return -np.inf
        out += cc * math.log(b)
    ir = -math.expm1(-e1)
    ifr = -math.expm1(-math.exp(k2))
    a = ir * ifr
    if d > 0:
        if a <= 0.0:
            return -np.inf
        out += d * math.log(a)
    if p - d > 0:
        if a >= 1.0:
            return -np.inf
        out += (p - d) * math.log1p(-a)
    return out


@njit(cache=True)
def _logit(x):
    return math.log(x) - math.log1p(-x)


@njit(cache=True)
def _log_sig_jac(u):
    # log(s (1 - s)) for s = sigmoid(u)
    return -abs(u) - 2.0 * math.log1p(math.exp(-abs(u)))


@njit(cache=True)
def _sigmoid(u):
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@njit(cache=True)
def _accept(log_alpha):
    if log_alpha >= 0.0:
        return True
    return math.log(np.random.random()) < log_alpha


@njit(cache=True)
def _acc_prob(log_alpha):
    if log_alpha != log_alpha:
        return 0.0
    if log_alpha >= 0.0:
        return 1.0
    return math.exp(log_alpha)


@njit(cache=True)
def _adapt(ls, i, prob, target, w):
    v = ls[i] + w * (prob - target)
    ls[i] = min(max(v, _LS_MIN), _LS_MAX)


@njit(cache=True)
def run_large_p(cc, t, d, p, known, X, Z, lam, eta, coef_sd, fixed,
                glob, thc, bec, k1, k2, phi,
                n_iter, n_burn, thin, seed, out):
    """Run one chain in place; retained sweeps are written to ``out``.

    Returns acceptance rates per update family (over the whole run).
    """
    _seed(seed)
    K = cc.shape[0]
    q = thc.shape[0]
    h = bec.shape[0]
    n_unk = 0
    for k in range(K):
        if not known[k]:
            n_unk += 1

    ls_glob = np.full(5 + q + h, math.log(0.1))
    ls_k1 = np.full(K, math.log(0.1))
    ls_k2 = np.full(K, math.log(0.1))
    ls_u = np.full(K, math.log(0.5))
    ls_rates = np.full(K, math.log(0.01))
    ls_phit = np.full(K, math.log(0.1))
    ls_block = np.zeros(K)
    ls_gscale = np.full(1, math.log(0.1))
    ls_ridge = np.full(1, math.log(0.1))
    ls_funnel = np.full(2, math.log(0.1))
    rp = np.empty(K)
    rd = np.empty(K)
    rl = np.empty(K)
    bmean = np.zeros((K, 3))
    bm2 = np.zeros((K, 3, 3))
    bn = np.zeros(K)
    chol = np.zeros((K, 3, 3))
    for k in range(K):
        for j in range(3):
            chol[k, j, j] = 0.05
    acc = np.zeros(8)
    tries = np.zeros(8)

    xb = X @ bec
    zt = Z @ thc
    ll = np.empty(K)

    for k in range(K):
        if known[k]:
            phi[k] = 1.0
        kk2 = glob[0] + zt[k] if fixed else k2[k]
        ll[k] = _group_ll(cc[k], t[k], d[k], p[k], k1[k], kk2, phi[k])

    n_keep = 0
    z3 = np.empty(3)
    prop = np.empty(3)
    for it in range(n_iter):
        adapt = it < n_burn
        w = (it + 1.0) ** -0.6
        theta, beta, tau, sigma, gamma = glob[0], glob[1], glob[2], glob[3], glob[4]

        # ---- theta
        s = math.exp(ls_glob[0])
        new = theta + s * np.random.standard_normal()
        if fixed:
            lnew = 0.0
            lold = 0.0
            tmp = np.empty(K)
            for k in range(K):
                tmp[k] = _group_ll(cc[k], t[k], d[k], p[k], k1[k], new + zt[k], phi[k])
                lnew += tmp[k]
                lold += ll[k]
            la = lnew - lold + (new - math.exp(new)) - (theta - math.exp(theta))
            tries[0] += 1
            if _accept(la):
                acc[0] += 1
                glob[0] = new
                for k in range(K):
                    ll[k] = tmp[k]
        else:
            ssq_old = 0.0
            ssq_new = 0.0
            for k in range(K):
                r0 = k2[k] - theta - zt[k]
                r1 = k2[k] - new - zt[k]
                ssq_old += r0 * r0
                ssq_new += r1 * r1
            la = -(ssq_new - ssq_old) / (2.0 * tau * tau) + (new - math.exp(new)) - (theta - math.exp(theta))
            tries[0] += 1
            if _accept(la):
                acc[0] += 1
                glob[0] = new
        if adapt:
            _adapt(ls_glob, 0, _acc_prob(la), TARGET_UNI, w)
        theta = glob[0]

        # ---- beta
        s = math.exp(ls_glob[1])
        new = beta + s * np.random.standard_normal()
        ssq_old = 0.0
        ssq_new = 0.0
        for k in range(K):
            r0 = k1[k] - beta - xb[k]
            r1 = k1[k] - new - xb[k]
            ssq_old += r0 * r0
            ssq_new += r1 * r1
        la = -(ssq_new - ssq_old) / (2.0 * sigma * sigma) + (new - math.exp(new)) - (beta - math.exp(beta))
        tries[0] += 1
        if _accept(la):
            acc[0] += 1
            glob[1] = new
        if adapt:
            _adapt(ls_glob, 1, _acc_prob(la), TARGET_UNI, w)
        beta = glob[1]

        # ---- fatality-rate coefficients
        for j in range(q):
            s = math.exp(ls_glob[5 + j])
            delta = s * np.random.standard_normal()
            old = thc[j]
            new = old + delta
            la = -(new * new - old * old) / (2.0 * coef_sd * coef_sd)
            if fixed:
                tmp = np.empty(K)
                for k in range(K):
                    tmp[k] = _group_ll(cc[k], t[k], d[k], p[k], k1[k], theta + zt[k] + Z[k, j] * delta, phi[k])
                    la += tmp[k] - ll[k]
            else:
                for k in range(K):
                    r0 = k2[k] - theta - zt[k]
                    r1 = r0 - Z[k, j] * delta
                    la += -(r1 * r1 - r0 * r0) / (2.0 * tau * tau)
            tries[0] += 1
            if _accept(la):
                acc[0] += 1
                thc[j] = new
                for k in range(K):
                    zt[k] += Z[k, j] * delta
                if fixed:
                    for k in range(K):
                        ll[k] = tmp[k]
            if adapt:
                _adapt(ls_glob, 5 + j, _acc_prob(la), TARGET_UNI, w)

        # ---- infection-rate coefficients
        for j in range(h):
            s = math.exp(ls_glob[5 + q + j])
            delta = s * np.random.standard_normal()
            old = bec[j]
            new = old + delta
            la = -(new * new - old * old) / (2.0 * coef_sd * coef_sd)
            for k in range(K):
                r0 = k1[k] - beta - xb[k]
                r1 = r0 - X[k, j] * delta
                la += -(r1 * r1 - r0 * r0) / (2.0 * sigma * sigma)
            tries[0] += 1
            if _accept(la):
                acc[0] += 1
                bec[j] = new
                for k in range(K):
                    xb[k] += X[k, j] * delta
            if adapt:
                _adapt(ls_glob, 5 + q + j, _acc_prob(la), TARGET_UNI, w)

        # ---- tau on the log scale
        if not fixed:
            s = math.exp(ls_glob[2])
            new = tau * math.exp(s * np.random.standard_normal())
            ssq = 0.0
            for k in range(K):
                r0 = k2[k] - theta - zt[k]
                ssq += r0 * r0
            la = (-K * (math.log(new) - math.log(tau)) - ssq / 2.0 * (1.0 / (new * new) - 1.0 / (tau * tau))
                  - (new * new - tau * tau) / (2.0 * eta * eta) + math.log(new) - math.log(tau))
            tries[0] += 1
            if _accept(la):
                acc[0] += 1
                glob[2] = new
            if adapt:
                _adapt(ls_glob, 2, _acc_prob(la), TARGET_UNI, w)
            tau = glob[2]

        # ---- sigma on the log scale
        s = math.exp(ls_glob[3])
        new = sigma * math.exp(s * np.random.standard_normal())
        ssq = 0.0
        for k in range(K):
            r0 = k1[k] - beta - xb[k]
            ssq += r0 * r0
        la = (-K * (math.log(new) - math.log(sigma)) - ssq / 2.0 * (1.0 / (new * new) - 1.0 / (sigma * sigma))
              - (new * new - sigma * sigma) / 2.0 + math.log(new) - math.log(sigma))
        tries[0] += 1
        if _accept(la):
            acc[0] += 1
            glob[3] = new
        if adapt:
            _adapt(ls_glob, 3, _acc_prob(la), TARGET_UNI, w)
        sigma = glob[3]

        # ---- gamma on the log scale
        if n_unk > 0:
            phimax = 1.0
            for k in range(K):
                if not known[k] and phi[k] > phimax:
                    phimax = phi[k]
            s = math.exp(ls_glob[4])
            new = gamma * math.exp(s * np.random.standard_normal())
            if new < phimax - 1.0:
                la = -np.inf
            else:
                la = (1.0 - n_unk) * (math.log(new) - math.log(gamma)) - lam * (new - gamma)
            tries[0] += 1
            if _accept(la):
                acc[0] += 1
                glob[4] = new
            if adapt:
                _adapt(ls_glob, 4, _acc_prob(la), TARGET_UNI, w)
            gamma = glob[4]

        # ---- univariate group updates
        for k in range(K):
            m1 = beta + xb[k]
            m2 = theta + zt[k]
            kk2 = m2 if fixed else k2[k]
            # kappa1
            new = k1[k] + math.exp(ls_k1[k]) * np.random.standard_normal()
            lnew = _group_ll(cc[k], t[k], d[k], p[k], new, kk2, phi[k])
            r0 = k1[k] - m1
            r1 = new - m1
            la = lnew - ll[k] - (r1 * r1 - r0 * r0) / (2.0 * sigma * sigma)
            tries[1] += 1
            if _accept(la):
                acc[1] += 1
                k1[k] = new
                ll[k] = lnew
            if adapt:
                _adapt(ls_k1, k, _acc_prob(la), TARGET_UNI, w)
            # kappa2
            if not fixed:
                new = k2[k] + math.exp(ls_k2[k]) * np.random.standard_normal()
                lnew = _group_ll(cc[k], t[k], d[k], p[k], k1[k], new, phi[k])
                r0 = k2[k] - m2
                r1 = new - m2
                la = lnew - ll[k] - (r1 * r1 - r0 * r0) / (2.0 * tau * tau)
                tries[1] += 1
                if _accept(la):
                    acc[1] += 1
                    k2[k] = new
                    ll[k] = lnew
                if adapt:
                    _adapt(ls_k2, k, _acc_prob(la), TARGET_UNI, w)
                kk2 = k2[k]
            # phi through u = logit((phi - 1) / gamma)
            if not known[k]:
                frac = (phi[k] - 1.0) / gamma
                if frac <= 0.0 or frac >= 1.0:
                    frac = min(max(frac, 1e-12), 1.0 - 1e-12)
                u = _logit(frac)
                un = u + math.exp(ls_u[k]) * np.random.standard_normal()
                pn = 1.0 + gamma * _sigmoid(un)
                if pn <= 1.0 or pn > 1.0 + gamma:
                    la = -np.inf
                else:
                    lnew = _group_ll(cc[k], t[k], d[k], p[k], k1[k], kk2, pn)
                    la = lnew - ll[k] + _log_sig_jac(un) - _log_sig_jac(u)
                tries[2] += 1
                if _accept(la):
                    acc[2] += 1
                    phi[k] = pn
                    ll[k] = lnew
                if adapt:
                    _adapt(ls_u, k, _acc_prob(la), TARGET_UNI, w)

        # ---- block update on (u, kappa1, kappa2)
        for k in range(K):
            m1 = beta + xb[k]
            m2 = theta + zt[k]
            unk = not known[k]
            if unk:
                frac = (phi[k] - 1.0) / gamma
                frac = min(max(frac, 1e-12), 1.0 - 1e-12)
                u = _logit(frac)
            else:
                u = 0.0
            for j in range(3):
                z3[j] = np.random.standard_normal()
            if not unk:
                z3[0] = 0.0
            if fixed:
                z3[2] = 0.0
            sc = math.exp(ls_block[k])
            for i in range(3):
                acc_i = 0.0
                for j in range(i + 1):
                    acc_i += chol[k, i, j] * z3[j]
                prop[i] = sc * acc_i
            un = u + prop[0]
            n1 = k1[k] + prop[1]
            n2 = (m2 if fixed else k2[k] + prop[2])
            if unk:
                pn = 1.0 + gamma * _sigmoid(un)
                if pn <= 1.0 or pn > 1.0 + gamma:
                    pn = -1.0
            else:
                pn = 1.0
            if pn < 0.0:
                la = -np.inf
            else:
                lnew = _group_ll(cc[k], t[k], d[k], p[k], n1, n2, pn)
                r0 = k1[k] - m1
                r1 = n1 - m1
                la = lnew - ll[k] - (r1 * r1 - r0 * r0) / (2.0 * sigma * sigma)
                if not fixed:
                    r0 = k2[k] - m2
                    r1 = n2 - m2
                    la -= (r1 * r1 - r0 * r0) / (2.0 * tau * tau)
                if unk:
                    la += _log_sig_jac(un) - _log_sig_jac(u)
            tries[3] += 1
            if _accept(la):
                acc[3] += 1
                k1[k] = n1
                if not fixed:
                    k2[k] = n2
                phi[k] = pn
                ll[k] = lnew
                u = un
            if adapt:
                _adapt(ls_block, k, _acc_prob(la), TARGET_BLOCK, w)
                # running moments of the trio for the proposal covariance
                bn[k] += 1.0
                v0 = u
                v1 = k1[k]
                v2 = k2[k] if not fixed else 0.0
                d0 = v0 - bmean[k, 0]
                d1 = v1 - bmean[k, 1]
                d2 = v2 - bmean[k, 2]
                bmean[k, 0] += d0 / bn[k]
                bmean[k, 1] += d1 / bn[k]
                bmean[k, 2] += d2 / bn[k]
                e0 = v0 - bmean[k, 0]
                e1 = v1 - bmean[k, 1]
                e2 = v2 - bmean[k, 2]
                bm2[k, 0, 0] += d0 * e0
                bm2[k, 0, 1] += d0 * e1
                bm2[k, 0, 2] += d0 * e2
                bm2[k, 1, 1] += d1 * e1
                bm2[k, 1, 2] += d1 * e2
                bm2[k, 2, 2] += d2 * e2
                if bn[k] >= 200 and (it + 1) % 100 == 0:
                    cov = np.empty((3, 3))
                    for i in range(3):
                        for j in range(i, 3):
                            cov[i, j] = bm2[k, i, j] / (bn[k] - 1.0)
                            cov[j, i] = cov[i, j]
                    if not unk:
                        for j in range(3):
                            cov[0, j] = 0.0
                            cov[j, 0] = 0.0
                        cov[0, 0] = 1.0
                    if fixed:
                        for j in range(3):
                            cov[2, j] = 0.0
                            cov[j, 2] = 0.0
                        cov[2, 2] = 1.0
                    for j in range(3):
                        cov[j, j] += 1e-8
                    L = np.linalg.cholesky(cov)
                    for i in range(3):
                        for j in range(3):
                            chol[k, i, j] = L[i, j] * 2.38 / math.sqrt(3.0)

        # ---- transformed rates: (z1, z2) = (e^k1 + e^k2, e^k1 - e^k2), step in z2
        if not fixed:
            for k in range(K):
                m1 = beta + xb[k]
                m2 = theta + zt[k]
                a1 = math.exp(k1[k])
                a2 = math.exp(k2[k])
                z1 = a1 + a2
                z2 = a1 - a2 + math.exp(ls_rates[k]) * (a1 + a2) * np.random.standard_normal()
                b1 = 0.5 * (z1 + z2)
                b2 = 0.5 * (z1 - z2)
                if b1 <= 0.0 or b2 <= 0.0:
                    la = -np.inf
                else:
                    n1 = math.log(b1)
                    n2 = math.log(b2)
                    lnew = _group_ll(cc[k], t[k], d[k], p[k], n1, n2, phi[k])
                    r0 = k1[k] - m1
                    r1 = n1 - m1
                    la = lnew - ll[k] - (r1 * r1 - r0 * r0) / (2.0 * sigma * sigma)
                    r0 = k2[k] - m2
                    r1 = n2 - m2
                    la -= (r1 * r1 - r0 * r0) / (2.0 * tau * tau)
                    # log|J| = log 2 + k1 + k2
                    la -= (n1 + n2) - (k1[k] + k2[k])
                tries[4] += 1
                if _accept(la):
                    acc[4] += 1
                    k1[k] = n1
                    k2[k] = n2
                    ll[k] = lnew
                if adapt:
                    _adapt(ls_rates, k, _acc_prob(la), TARGET_UNI, w)

        # ---- transformed phi: (z1, z2) = (log phi + k1, log phi - k1), step in z2
        for k in range(K):
            if known[k]:
                continue
            m1 = beta + xb[k]
            kk2 = theta + zt[k] if fixed else k2[k]
            lp0 = math.log(phi[k])
            z1 = lp0 + k1[k]
            z2 = lp0 - k1[k] + math.exp(ls_phit[k]) * np.random.standard_normal()
            lpn = 0.5 * (z1 + z2)
            n1 = 0.5 * (z1 - z2)
            pn = math.exp(lpn)
            if pn < 1.0 or pn > 1.0 + gamma:
                la = -np.inf
            else:
                lnew = _group_ll(cc[k], t[k], d[k], p[k], n1, kk2, pn)
                r0 = k1[k] - m1
                r1 = n1 - m1
                la = lnew - ll[k] - (r1 * r1 - r0 * r0) / (2.0 * sigma * sigma)
                # log|J| = log 2 - log phi
                la -= -lpn + lp0
            tries[5] += 1
            if _accept(la):
                acc[5] += 1
                k1[k] = n1
                phi[k] = pn
                ll[k] = lnew
            if adapt:
                _adapt(ls_phit, k, _acc_prob(la), TARGET_UNI, w)

        # ---- rescale gamma with every (phi - 1) / gamma held fixed
        if n_unk > 0:
            gamma = glob[4]
            eps = math.exp(ls_gscale[0]) * np.random.standard_normal()
            new = gamma * math.exp(eps)
            ratio = new / gamma
            la = -lam * (new - gamma) + eps
            tmp = np.empty(K)
            for k in range(K):
                if known[k]:
                    tmp[k] = ll[k]
                    continue
                pn = 1.0 + (phi[k] - 1.0) * ratio
                kk2 = theta + zt[k] if fixed else k2[k]
                tmp[k] = _group_ll(cc[k], t[k], d[k], p[k], k1[k], kk2, pn)
                la += tmp[k] - ll[k]
            tries[6] += 1
            if _accept(la):
                acc[6] += 1
                glob[4] = new
                for k in range(K):
                    if not known[k]:
                        phi[k] = 1.0 + (phi[k] - 1.0) * ratio
                    ll[k] = tmp[k]
            if adapt:
                _adapt(ls_gscale, 0, _acc_prob(la), TARGET_UNI, w)

        # ---- ridge move: rescale gamma and every phi_k - 1, shift kappa1_k to keep
        # phi_k exp(kappa1_k) fixed and kappa2_k the opposite way, with theta and
        # beta following the mean shift.  The map is triangular with
        # |J| = exp(eps (1 + n_unk)).
        if n_unk > 0:
            theta, beta, tau, sigma, gamma = glob[0], glob[1], glob[2], glob[3], glob[4]
            eps = math.exp(ls_ridge[0]) * np.random.standard_normal()
            ratio = math.exp(eps)
            gnew = gamma * ratio
            msh = 0.0
            for k in range(K):
                if known[k]:
                    rp[k] = phi[k]
                    rd[k] = 0.0
                else:
                    rp[k] = 1.0 + (phi[k] - 1.0) * ratio
                    rd[k] = math.log(phi[k]) - math.log(rp[k])
                msh += rd[k]
            msh /= K
            thn = theta - msh
            ben = beta + msh
            # gamma prior, phi | gamma prior, Jacobian
            la = -lam * (gnew - gamma) - n_unk * eps + eps * (1.0 + n_unk)
            la += (thn - math.exp(thn)) - (theta - math.exp(theta))
            la += (ben - math.exp(ben)) - (beta - math.exp(beta))
            for k in range(K):
                n1 = k1[k] + rd[k]
                r0 = k1[k] - beta - xb[k]
                r1 = n1 - ben - xb[k]
                la -= (r1 * r1 - r0 * r0) / (2.0 * sigma * sigma)
                if fixed:
                    n2 = thn + zt[k]
                else:
                    n2 = k2[k] - rd[k]
                    r0 = k2[k] - theta - zt[k]
                    r1 = n2 - thn - zt[k]
                    la -= (r1 * r1 - r0 * r0) / (2.0 * tau * tau)
                rl[k] = _group_ll(cc[k], t[k], d[k], p[k], n1, n2, rp[k])
                la += rl[k] - ll[k]
            tries[7] += 1
            if _accept(la):
                acc[7] += 1
                glob[0] = thn
                glob[1] = ben
                glob[4] = gnew
                for k in range(K):
                    k1[k] += rd[k]
                    if not fixed:
                        k2[k] -= rd[k]
                    phi[k] = rp[k]
                    ll[k] = rl[k]
            if adapt:
                _adapt(ls_ridge, 0, _acc_prob(la), TARGET_UNI, w)

        # ---- funnel moves: scale tau (sigma) and the kappa2 (kappa1) deviations
        # from their means together; the standardised deviations stay fixed and
        # |J| = exp(eps (1 + K)).
        theta, beta, tau, sigma = glob[0], glob[1], glob[2], glob[3]
        for which in range(2):
            if which == 0 and fixed:
                continue
            sd = tau if which == 0 else sigma
            eps = math.exp(ls_funnel[which]) * np.random.standard_normal()
            ratio = math.exp(eps)
            sdn = sd * ratio
            if which == 0:
                la = -(sdn * sdn - sd * sd) / (2.0 * eta * eta)
            else:
                la = -(sdn * sdn - sd * sd) / 2.0
            la += eps
            for k in range(K):
                if which == 0:
                    m = theta + zt[k]
                    rl[k] = m + (k2[k] - m) * ratio
                    lnew = _group_ll(cc[k], t[k], d[k], p[k], k1[k], rl[k], phi[k])
                else:
                    m = beta + xb[k]
                    rl[k] = m + (k1[k] - m) * ratio
                    kk2 = theta + zt[k] if fixed else k2[k]
                    lnew = _group_ll(cc[k], t[k], d[k], p[k], rl[k], kk2, phi[k])
                rp[k] = lnew
                la += lnew - ll[k]
            if _accept(la):
                glob[2 + which] = sdn
                for k in range(K):
                    if which == 0:
                        k2[k] = rl[k]
                    else:
                        k1[k] = rl[k]
                    ll[k] = rp[k]
            if adapt:
                _adapt(ls_funnel, which, _acc_prob(la), TARGET_UNI, w)
            tau, sigma = glob[2], glob[3]

        # ---- store
        if it >= n_burn and (it - n_burn) % thin == 0 and n_keep < out.shape[0]:
            c = 0
            for j in range(5):
                out[n_keep, c] = glob[j]
                c += 1
            for j in range(q):
                out[n_keep, c] = thc[j]
                c += 1
            for j in range(h):
                out[n_keep, c] = bec[j]
                c += 1
            for k in range(K):
                out[n_keep, c] = k1[k]
                c += 1
            for k in range(K):
                out[n_keep, c] = (glob[0] + zt[k]) if fixed else k2[k]
                c += 1
            for k in range(K):
                out[n_keep, c] = phi[k]
                c += 1
            n_keep += 1

    rates = np.zeros(8)
    for i in range(8):
        if tries[i] > 0:
            rates[i] = acc[i] / tries[i]
    return rates


@njit(cache=True)
def log_density_terms(cc, t, d, p, known, X, Z, lam, eta, coef_sd, fixed,
                      glob, thc, bec, k1, k2, phi):
    """Unnormalised log posterior as seen by the sweep (constants dropped)."""
    K = cc.shape[0]
    theta, beta, tau, sigma, gamma = glob[0], glob[1], glob[2], glob[3], glob[4]
    if sigma <= 0.0 or (not fixed and tau <= 0.0):
        return -np.inf
    out = theta - math.exp(theta) + beta - math.exp(beta) - sigma * sigma / 2.0
    if not fixed:
        out -= tau * tau / (2.0 * eta * eta)
    n_unk = 0
    for k in range(K):
        if not known[k]:
            n_unk += 1
    if n_unk > 0:
        if gamma <= 0.0:
            return -np.inf
        out += -lam * gamma - n_unk * math.log(gamma)
    for j in range(thc.shape[0]):
        out -= thc[j] * thc[j] / (2.0 * coef_sd * coef_sd)
    for j in range(bec.shape[0]):
        out -= bec[j] * bec[j] / (2.0 * coef_sd * coef_sd)
    xb = X @ bec
    zt = Z @ thc
    for k in range(K):
        ph = 1.0 if known[k] else phi[k]
        if ph < 1.0 or ph > 1.0 + gamma:
            return -np.inf
        m2 = theta + zt[k]
        kk2 = m2 if fixed else k2[k]
        out += _group_ll(cc[k], t[k], d[k], p[k], k1[k], kk2, ph)
        r = k1[k] - beta - xb[k]
        out += -math.log(sigma) - r * r / (2.0 * sigma * sigma)
        if not fixed:
            r = k2[k] - m2
            out += -math.log(tau) - r * r / (2.0 * tau * tau)
    return out


@njit(cache=True)
def _single_lp(cc, t, d, p, u1, u2):
    # logit coordinates for ir and ifr, uniform priors, log-Jacobian included
    ir = _sigmoid(u1)
    ifr = _sigmoid(u2)
    a = ir * ifr
    if ir <= 0.0 or ir >= 1.0 or ifr <= 0.0 or a <= 0.0:
        return -np.inf
    out = _log_sig_jac(u1) + _log_sig_jac(u2)
    if cc > 0:
        out += cc * math.log(ir)
    if t - cc > 0:
        out += (t - cc) * math.log1p(-ir)
    if d > 0:
        out += d * math.log(a)
    if p - d > 0:
        out += (p - d) * math.log1p(-a)
    return out


@njit(cache=True)
def run_single_group(cc, t, d, p, u, n_iter, n_burn, thin, seed, out):
    """Two-parameter (ir, ifr) chain: univariate moves plus an adaptive 2-d block."""
    _seed(seed)
    ls = np.full(2, math.log(0.5))
    ls_block = 0.0
    chol = np.eye(2) * 0.2
    mean = np.zeros(2)
    m2 = np.zeros((2, 2))
    nb = 0.0
    lp = _single_lp(cc, t, d, p, u[0], u[1])
    acc = np.zeros(2)
    n_keep = 0
    prop = np.empty(2)
    for it in range(n_iter):
        adapt = it < n_burn
        w = (it + 1.0) ** -0.6
        for j in range(2):
            old = u[j]
            u[j] = old + math.exp(ls[j]) * np.random.standard_normal()
            lnew = _single_lp(cc, t, d, p, u[0], u[1])
            la = lnew - lp
            if _accept(la):
                lp = lnew
                acc[0] += 0.5
            else:
                u[j] = old
            if adapt:
                _adapt(ls, j, _acc_prob(la), TARGET_UNI, w)
        z0 = np.random.standard_normal()
        z1 = np.random.standard_normal()
        sc = math.exp(ls_block)
        prop[0] = u[0] + sc * chol[0, 0] * z0
        prop[1] = u[1] + sc * (chol[1, 0] * z0 + chol[1, 1] * z1)
        lnew = _single_lp(cc, t, d, p, prop[0], prop[1])
        la = lnew - lp
        if _accept(la):
            lp = lnew
            u[0] = prop[0]
            u[1] = prop[1]
            acc[1] += 1
        if adapt:
            v = np.empty(1)
            v[0] = ls_block
            _adapt(v, 0, _acc_prob(la), TARGET_BLOCK, w)
            ls_block = v[0]
            nb += 1.0
            d0 = u[0] - mean[0]
            d1 = u[1] - mean[1]
            mean[0] += d0 / nb
            mean[1] += d1 / nb
            e0 = u[0] - mean[0]
            e1 = u[1] - mean[1]
            m2[0, 0] += d0 * e0
            m2[0, 1] += d0 * e1
            m2[1, 1] += d1 * e1
            if nb >= 200 and (it + 1) % 100 == 0:
                c00 = m2[0, 0] / (nb - 1.0) + 1e-10
                c01 = m2[0, 1] / (nb - 1.0)
                c11 = m2[1, 1] / (nb - 1.0) + 1e-10
                l00 = math.sqrt(c00)
                l10 = c01 / l00
                l11 = math.sqrt(max(c11 - l10 * l10, 1e-12))
                f = 2.38 / math.sqrt(2.0)
                chol[0, 0] = l00 * f
                chol[1, 0] = l10 * f
                chol[1, 1] = l11 * f
        if it >= n_burn and (it - n_burn) % thin == 0 and n_keep < out.shape[0]:
            out[n_keep, 0] = _sigmoid(u[0])
            out[n_keep, 1] = _sigmoid(u[1])
            n_keep += 1
    rates = np.empty(2)
    rates[0] = acc[0] / max(n_iter, 1)
    rates[1] = acc[1] / max(n_iter, 1)
    return rates
