"""Compiled Gibbs kernels.

Everything here works on raw arrays so one sweep runs without returning to
the interpreter. Layout conventions (see :class:`sigpath.model.ChainState`):

* ``x``, ``xt``, ``res`` are ``(P, N)``; ``res[i, n]`` is the structural
  residual ``xt[i, n] - intercept[g, i] - sum_j coef[g, i, j] xt[j, n]``.
* ``cond_start`` (K + 1) and ``group_start`` (G + 1) delimit contiguous cell
  ranges; ``cond_of_cell`` maps a cell to its condition.
* ``hpv`` packs the scalar hyperparameters as
  ``[beta1, beta2, g1, g2, g3, g4, g5, g6, v, intercept_var]``.
* ``psi`` is a length-1 array so kernels can update it in place.

The ``*_moments`` helpers return the parameters of a full conditional and are
shared by the update kernels and the Python-level inspection functions.
"""

import math

import numpy as np
from numba import njit

HM, RHM, NHM = 0, 1, 2
W_LOGIT_BOUND = 35.0
W_FLOOR = 1e-300
W_CEIL = 1.0 - 1e-16


@njit(cache=True)
def _softplus(y):
    if y > 0.0:
        return y + math.log1p(math.exp(-y))
    return math.log1p(math.exp(y))


@njit(cache=True)
def _sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True)
def _clip_w(w):
    if w < W_FLOOR:
        return W_FLOOR
    if w > W_CEIL:
        return W_CEIL
    return w


@njit(cache=True)
def _safe_beta(rng, a, b):
    d = rng.beta(a, b)
    if not np.isfinite(d):
        d = a / (a + b)
    return d


@njit(cache=True)
def compute_residuals(xt, intercept, coef, group_start, res):
    P = xt.shape[0]
    G = coef.shape[0]
    for g in range(G):
        for i in range(P):
            c = intercept[g, i]
            for n in range(group_start[g], group_start[g + 1]):
                res[i, n] = xt[i, n] - c
            for j in range(P):
                a = coef[g, i, j]
                if a != 0.0:
                    for n in range(group_start[g], group_start[g + 1]):
                        res[i, n] -= a * xt[j, n]


# ---------------------------------------------------------------- latent truth

@njit(cache=True)
def latent_moments(j, n, k, g, x, xt, res, coef, phi, psi):
    """Mean and precision of ``xt[j, n]`` given everything else."""
    P = x.shape[0]
    prec = phi[j, k] + psi[0]
    num = phi[j, k] * (xt[j, n] - res[j, n]) + psi[0] * x[j, n]
    for i in range(P):
        a = coef[g, i, j]
        if a != 0.0:
            prec += phi[i, k] * a * a
            num += phi[i, k] * a * (res[i, n] + a * xt[j, n])
    return num / prec, prec


@njit(cache=True)
def update_latent_range(j, lo, hi, k, g, x, xt, res, coef, phi, psi, rng):
    P = x.shape[0]
    kids = np.empty(P, dtype=np.int64)
    nk = 0
    for i in range(P):
        if coef[g, i, j] != 0.0:
            kids[nk] = i
            nk += 1
    for n in range(lo, hi):
        prec = phi[j, k] + psi[0]
        num = phi[j, k] * (xt[j, n] - res[j, n]) + psi[0] * x[j, n]
        old = xt[j, n]
        for q in range(nk):
            i = kids[q]
            a = coef[g, i, j]
            prec += phi[i, k] * a * a
            num += phi[i, k] * a * (res[i, n] + a * old)
        if not (prec > 0.0 and np.isfinite(prec)):
            raise ArithmeticError("non-positive latent precision")
        new = num / prec + rng.standard_normal() / math.sqrt(prec)
        d = new - old
        xt[j, n] = new
        res[j, n] += d
        for q in range(nk):
            i = kids[q]
            res[i, n] -= coef[g, i, j] * d


@njit(cache=True)
def update_all_latents(x, xt, res, coef, phi, psi, cond_start, group_of_cond, rng):
    P = x.shape[0]
    K = cond_start.shape[0] - 1
    for k in range(K):
        g = group_of_cond[k]
        for j in range(P):
            update_latent_range(j, cond_start[k], cond_start[k + 1], k, g, x, xt, res, coef, phi, psi, rng)


# ------------------------------------------------------ coefficient/indicator

@njit(cache=True)
def coef_moments(i, j, lo, hi, xt, res, coef_old, phi, cond_of_cell, m, lam):
    """Log Bayes factor of inclusion, conditional mean and precision.

    The slab is ``N(m, 1/lam)``; the residual excludes predictor ``j``.
    """
    sxx = 0.0
    sxe = 0.0
    for n in range(lo, hi):
        xn = xt[j, n]
        f = phi[i, cond_of_cell[n]]
        e = res[i, n] + coef_old * xn
        sxx += f * xn * xn
        sxe += f * xn * e
    Q = lam + sxx
    mu = (lam * m + sxe) / Q
    logbf = 0.5 * math.log(lam / Q) + 0.5 * (sxe * sxe + lam * m * (2.0 * sxe - m * sxx)) / Q
    return logbf, mu, Q


@njit(cache=True)
def prior_inclusion(i, j, g, model, w, z, mask, v):
    """Prior probability that ``z[g, i, j] = 1`` given the other indicators."""
    if model == RHM:
        r = min(i, j)
        c = max(i, j)
        wp = w[r, c]
        if mask[j, i]:
            return (wp * v + z[g, j, i]) / (v + 1.0)
        return wp
    return w[i, j]


@njit(cache=True)
def slab_of(i, j, model, slab_mean, slab_prec, a, V):
    if model == NHM:
        return a[i], 1.0 / V[i]
    return slab_mean[i, j], slab_prec[i, j]


@njit(cache=True)
def coef_conditional(i, j, g, model, group_start, xt, res, coef, z, w, slab_mean, slab_prec,
                     phi, cond_of_cell, mask, a, V, v):
    m, lam = slab_of(i, j, model, slab_mean, slab_prec, a, V)
    logbf, mu, Q = coef_moments(i, j, group_start[g], group_start[g + 1], xt, res, coef[g, i, j],
                                phi, cond_of_cell, m, lam)
    p = prior_inclusion(i, j, g, model, w, z, mask, v)
    log_odds = math.log(p) - math.log1p(-p) + logbf
    return log_odds, mu, Q


@njit(cache=True)
def update_coef(i, j, g, model, group_start, xt, res, coef, z, w, slab_mean, slab_prec,
                phi, cond_of_cell, mask, a, V, v, rng):
    log_odds, mu, Q = coef_conditional(i, j, g, model, group_start, xt, res, coef, z, w,
                                       slab_mean, slab_prec, phi, cond_of_cell, mask, a, V, v)
    if not (Q > 0.0 and np.isfinite(Q)):
        raise ArithmeticError("non-finite coefficient conditional variance")
    if rng.random() < _sigmoid(log_odds):
        new = mu + rng.standard_normal() / math.sqrt(Q)
        if new == 0.0:
            new = 5e-324
        z[g, i, j] = 1
    else:
        new = 0.0
        z[g, i, j] = 0
    old = coef[g, i, j]
    if new != old:
        d = new - old
        for n in range(group_start[g], group_start[g + 1]):
            res[i, n] -= d * xt[j, n]
        coef[g, i, j] = new


@njit(cache=True)
def update_all_coefs(model, group_start, xt, res, coef, z, w, slab_mean, slab_prec,
                     phi, cond_of_cell, mask, a, V, v, rng):
    G, P, _ = coef.shape
    for g in range(G):
        for i in range(P):
            for j in range(P):
                if mask[i, j]:
                    update_coef(i, j, g, model, group_start, xt, res, coef, z, w, slab_mean,
                                slab_prec, phi, cond_of_cell, mask, a, V, v, rng)


# ------------------------------------------------------------- slab hierarchy

@njit(cache=True)
def slab_mean_moments(i, j, coef, z, slab_prec, a, V):
    G = coef.shape[0]
    cnt = 0
    s = 0.0
    for g in range(G):
        if z[g, i, j]:
            cnt += 1
            s += coef[g, i, j]
    prec = 1.0 / V[i] + slab_prec[i, j] * cnt
    mean = (a[i] / V[i] + slab_prec[i, j] * s) / prec
    return mean, prec


@njit(cache=True)
def slab_prec_params(i, j, coef, z, slab_mean, g3, g4):
    """Shape and rate of the Gamma conditional of the slab precision."""
    G = coef.shape[0]
    cnt = 0
    ss = 0.0
    for g in range(G):
        if z[g, i, j]:
            cnt += 1
            d = coef[g, i, j] - slab_mean[i, j]
            ss += d * d
    return g3 + 0.5 * cnt, g4 + 0.5 * ss


@njit(cache=True)
def update_slab(i, j, coef, z, slab_mean, slab_prec, a, V, g3, g4, rng):
    mean, prec = slab_mean_moments(i, j, coef, z, slab_prec, a, V)
    slab_mean[i, j] = mean + rng.standard_normal() / math.sqrt(prec)
    shape, rate = slab_prec_params(i, j, coef, z, slab_mean, g3, g4)
    lam = rng.gamma(shape, 1.0 / rate)
    if not lam > 0.0:
        lam = 1e-300
    slab_prec[i, j] = lam


@njit(cache=True)
def update_all_slabs(coef, z, slab_mean, slab_prec, mask, a, V, g3, g4, rng):
    P = coef.shape[1]
    for i in range(P):
        for j in range(P):
            if mask[i, j]:
                update_slab(i, j, coef, z, slab_mean, slab_prec, a, V, g3, g4, rng)


# ------------------------------------------------------ overall probabilities

@njit(cache=True)
def w_beta_params(i, j, z, b1, b2):
    G = z.shape[0]
    s = 0
    for g in range(G):
        s += z[g, i, j]
    return b1 + s, b2 + (G - s)


@njit(cache=True)
def _lbeta(p, q):
    return math.lgamma(p) + math.lgamma(q) - math.lgamma(p + q)


@njit(cache=True)
def rhm_w_logit_logdens(y, i, j, z, mask, b1, b2, v):
    """Log conditional density of ``logit(w_ij)`` under rhm (unnormalised).

    ``i < j``. Includes the logit Jacobian ``w (1 - w)``.
    """
    logw = -_softplus(-y)
    log1mw = -_softplus(y)
    w = math.exp(logw)
    omw = math.exp(log1mw)
    out = b1 * logw + b2 * log1mw
    t = 0
    if mask[i, j]:
        t += 1
    if mask[j, i]:
        t += 1
    G = z.shape[0]
    base = _lbeta(w * v, omw * v)
    for g in range(G):
        s = 0
        if mask[i, j]:
            s += z[g, i, j]
        if mask[j, i]:
            s += z[g, j, i]
        out += _lbeta(w * v + s, omw * v + (t - s)) - base
    return out


@njit(cache=True)
def update_w_rhm(i, j, w, z, mask, b1, b2, v, n_steps, step, rng):
    wc = w[i, j]
    y = math.log(wc) - math.log1p(-wc)
    cur = rhm_w_logit_logdens(y, i, j, z, mask, b1, b2, v)
    for _ in range(n_steps):
        prop = y + step * rng.standard_normal()
        if abs(prop) > W_LOGIT_BOUND:
            continue
        new = rhm_w_logit_logdens(prop, i, j, z, mask, b1, b2, v)
        if math.log(rng.random()) < new - cur:
            y = prop
            cur = new
    w[i, j] = _sigmoid(y)


@njit(cache=True)
def update_all_w(model, w, z, mask, b1, b2, v, n_mh, mh_step, rng):
    P = w.shape[0]
    for i in range(P):
        for j in range(P):
            if i == j:
                continue
            if model == RHM:
                if i < j and (mask[i, j] or mask[j, i]):
                    update_w_rhm(i, j, w, z, mask, b1, b2, v, n_mh, mh_step, rng)
            elif mask[i, j]:
                p, q = w_beta_params(i, j, z, b1, b2)
                w[i, j] = _clip_w(_safe_beta(rng, p, q))


# ---------------------------------------------------------------- precisions

@njit(cache=True)
def intrinsic_params(i, k, varying, res, cond_start, g1, g2):
    """Gamma shape and rate for ``phi[i, k]`` (all conditions when pooled)."""
    if varying:
        lo = cond_start[k]
        hi = cond_start[k + 1]
    else:
        lo = 0
        hi = cond_start[cond_start.shape[0] - 1]
    ss = 0.0
    for n in range(lo, hi):
        ss += res[i, n] * res[i, n]
    return g1 + 0.5 * (hi - lo), g2 + 0.5 * ss


@njit(cache=True)
def measurement_params(x, xt, g5, g6):
    P, N = x.shape
    ss = 0.0
    for i in range(P):
        for n in range(N):
            d = x[i, n] - xt[i, n]
            ss += d * d
    return g5 + 0.5 * P * N, g6 + 0.5 * ss


@njit(cache=True)
def update_variances(x, xt, res, phi, psi, varying, fix_psi, cond_start, g1, g2, g5, g6, rng):
    P, K = phi.shape
    for i in range(P):
        if varying:
            for k in range(K):
                shape, rate = intrinsic_params(i, k, True, res, cond_start, g1, g2)
                phi[i, k] = rng.gamma(shape, 1.0 / rate)
        else:
            shape, rate = intrinsic_params(i, 0, False, res, cond_start, g1, g2)
            val = rng.gamma(shape, 1.0 / rate)
            for k in range(K):
                phi[i, k] = val
        for k in range(K):
            if not (phi[i, k] > 0.0 and np.isfinite(phi[i, k])):
                raise ArithmeticError("invalid intrinsic precision draw")
    if not fix_psi:
        shape, rate = measurement_params(x, xt, g5, g6)
        psi[0] = rng.gamma(shape, 1.0 / rate)
        if not (psi[0] > 0.0 and np.isfinite(psi[0])):
            raise ArithmeticError("invalid measurement precision draw")


# ---------------------------------------------------------------- intercepts

@njit(cache=True)
def intercept_moments(i, g, group_start, res, intercept, phi, cond_of_cell, s0sq):
    sf = 0.0
    sfe = 0.0
    c = intercept[g, i]
    for n in range(group_start[g], group_start[g + 1]):
        f = phi[i, cond_of_cell[n]]
        sf += f
        sfe += f * (res[i, n] + c)
    prec = 1.0 / s0sq + sf
    return sfe / prec, prec


@njit(cache=True)
def update_intercept(i, g, group_start, res, intercept, phi, cond_of_cell, s0sq, rng):
    mean, prec = intercept_moments(i, g, group_start, res, intercept, phi, cond_of_cell, s0sq)
    new = mean + rng.standard_normal() / math.sqrt(prec)
    d = new - intercept[g, i]
    for n in range(group_start[g], group_start[g + 1]):
        res[i, n] -= d
    intercept[g, i] = new


@njit(cache=True)
def update_all_intercepts(group_start, res, intercept, phi, cond_of_cell, s0sq, rng):
    G, P = intercept.shape
    for g in range(G):
        for i in range(P):
            update_intercept(i, g, group_start, res, intercept, phi, cond_of_cell, s0sq, rng)


# ------------------------------------------------- condition-level probabilities

@njit(cache=True)
def draw_wcond(model, w, z, mask, v, out, rng):
    """One draw of every ``w_ij^(k)`` into ``out (K, P, P)``; NaN where undefined."""
    K, P, _ = out.shape
    for k in range(K):
        for i in range(P):
            for j in range(P):
                if i == j:
                    out[k, i, j] = np.nan
                    continue
                if model == RHM:
                    if i > j or not (mask[i, j] or mask[j, i]):
                        continue
                    t = 0
                    s = 0
                    if mask[i, j]:
                        t += 1
                        s += z[k, i, j]
                    if mask[j, i]:
                        t += 1
                        s += z[k, j, i]
                    wp = w[i, j]
                    d = _safe_beta(rng, wp * v + s, (1.0 - wp) * v + (t - s))
                    out[k, i, j] = d
                    out[k, j, i] = d
                elif mask[i, j]:
                    wp = w[i, j]
                    s = z[k, i, j]
                    out[k, i, j] = _safe_beta(rng, wp * v + s, (1.0 - wp) * v + (1 - s))
                else:
                    out[k, i, j] = np.nan
        if model == RHM:
            for i in range(P):
                for j in range(P):
                    if i != j and not (mask[i, j] or mask[j, i]):
                        out[k, i, j] = np.nan


# --------------------------------------------------------------------- sweep

@njit(cache=True)
def sweep(model, x, xt, res, intercept, coef, z, w, slab_mean, slab_prec, phi, psi, mask,
          cond_start, group_start, group_of_cond, cond_of_cell, hpv, a, V,
          varying, fix_psi, n_mh, mh_step, rng):
    """One systematic-scan iteration.

    Order: latent truths, coefficients and indicators, slab hierarchy,
    overall probabilities, precisions, intercepts.
    """
    compute_residuals(xt, intercept, coef, group_start, res)
    update_all_latents(x, xt, res, coef, phi, psi, cond_start, group_of_cond, rng)
    update_all_coefs(model, group_start, xt, res, coef, z, w, slab_mean, slab_prec,
                     phi, cond_of_cell, mask, a, V, hpv[8], rng)
    if model != NHM:
        update_all_slabs(coef, z, slab_mean, slab_prec, mask, a, V, hpv[4], hpv[5], rng)
    update_all_w(model, w, z, mask, hpv[0], hpv[1], hpv[8], n_mh, mh_step, rng)
    update_variances(x, xt, res, phi, psi, varying, fix_psi, cond_start,
                     hpv[2], hpv[3], hpv[6], hpv[7], rng)
    update_all_intercepts(group_start, res, intercept, phi, cond_of_cell, hpv[9], rng)
