"""Compiled coordinate-descent inner loops.

Column 0 of every design handed to these kernels is the intercept column; its
penalty factor is 0 unless the intercept is penalized. Columns whose diagonal
(Gram or weighted) is zero are skipped and stay at zero.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@njit(cache=True)
def gram_cd(C, c, lam, pf, beta, g, tol, max_sweeps):
    """Covariance-mode lasso on the scaled Gram ``C = X'X/n``, ``c = X'y/n``.

    ``g`` must hold ``c - C @ beta`` on entry and is kept in sync. Alternates a
    full sweep with sweeps over the current support until a full sweep moves no
    coefficient by more than ``tol``. Returns (sweeps used, last max change).
    """
    q = C.shape[0]
    act = np.empty(q, dtype=np.int64)
    in_act = np.zeros(q, dtype=np.bool_)
    na = 0
    for j in range(q):
        if beta[j] != 0.0:
            act[na] = j
            in_act[j] = True
            na += 1
    sweeps = 0
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(q):
            cjj = C[j, j]
            if cjj <= 0.0:
                continue
            old = beta[j]
            new = _soft(g[j] + cjj * old, lam * pf[j]) / cjj
            if new != old:
                d = new - old
                beta[j] = new
                row = C[j]
                for k in range(q):
                    g[k] -= d * row[k]
                if abs(d) > dmax:
                    dmax = abs(d)
                if not in_act[j]:
                    in_act[j] = True
                    act[na] = j
                    na += 1
        sweeps += 1
        if dmax < tol:
            break
        # support-only sweeps keep g current on the support alone
        while sweeps < max_sweeps:
            da = 0.0
            for a in range(na):
                j = act[a]
                cjj = C[j, j]
                old = beta[j]
                new = _soft(g[j] + cjj * old, lam * pf[j]) / cjj
                if new != old:
                    d = new - old
                    beta[j] = new
                    row = C[j]
                    for b in range(na):
                        k = act[b]
                        g[k] -= d * row[k]
                    if abs(d) > da:
                        da = abs(d)
            sweeps += 1
            if da < tol:
                break
        for k in range(q):
            if not in_act[k]:
                s = c[k]
                row = C[k]
                for b in range(na):
                    s -= row[act[b]] * beta[act[b]]
                g[k] = s
    return sweeps, dmax


@njit(cache=True)
def _weighted_cd(X, lam, pf, beta, eta, w, r, xv, tol, max_sweeps, sweeps):
    # r holds w * (working response - eta); eta kept in sync with beta
    n, q = X.shape
    act = np.empty(q, dtype=np.int64)
    in_act = np.zeros(q, dtype=np.bool_)
    na = 0
    for j in range(q):
        if beta[j] != 0.0:
            act[na] = j
            in_act[j] = True
            na += 1
    dmax = np.inf
    while sweeps < max_sweeps:
        dmax = 0.0
        for j in range(q):
            v = xv[j]
            if v <= 0.0:
                continue
            gj = 0.0
            for i in range(n):
                gj += X[i, j] * r[i]
            gj /= n
            old = beta[j]
            new = _soft(gj + v * old, lam * pf[j]) / v
            if new != old:
                d = new - old
                beta[j] = new
                for i in range(n):
                    xij = X[i, j]
                    r[i] -= d * w[i] * xij
                    eta[i] += d * xij
                if abs(d) > dmax:
                    dmax = abs(d)
                if not in_act[j]:
                    in_act[j] = True
                    act[na] = j
                    na += 1
        sweeps += 1
        if dmax < tol:
            break
        while sweeps < max_sweeps:
            da = 0.0
            for a in range(na):
                j = act[a]
                v = xv[j]
                gj = 0.0
                for i in range(n):
                    gj += X[i, j] * r[i]
                gj /= n
                old = beta[j]
                new = _soft(gj + v * old, lam * pf[j]) / v
                if new != old:
                    d = new - old
                    beta[j] = new
                    for i in range(n):
                        xij = X[i, j]
                        r[i] -= d * w[i] * xij
                        eta[i] += d * xij
                    if abs(d) > da:
                        da = abs(d)
            sweeps += 1
            if da < tol:
                break
    return sweeps, dmax


@njit(cache=True)
def irls_cd(X, y, lam, pf, beta, eta, tol, max_sweeps, max_outer, w_floor, p_clamp):
    """Penalized logistic regression by IRLS with a weighted lasso inner solve.

    ``eta`` must equal ``X @ beta`` on entry. Returns
    (converged, sweeps used, last outer max change, outer iterations).
    """
    n, q = X.shape
    w = np.empty(n)
    r = np.empty(n)
    xv = np.empty(q)
    old = np.empty(q)
    sweeps = 0
    change = np.inf
    lo = p_clamp
    hi = 1.0 - p_clamp
    for it in range(max_outer):
        for i in range(n):
            e = eta[i]
            if e >= 0:
                pr = 1.0 / (1.0 + np.exp(-e))
            else:
                ex = np.exp(e)
                pr = ex / (1.0 + ex)
            if pr < lo:
                pr = lo
            elif pr > hi:
                pr = hi
            wi = pr * (1.0 - pr)
            if wi < w_floor:
                wi = w_floor
            w[i] = wi
            r[i] = y[i] - pr
        for j in range(q):
            s = 0.0
            for i in range(n):
                s += w[i] * X[i, j] * X[i, j]
            xv[j] = s / n
            old[j] = beta[j]
        sweeps, inner = _weighted_cd(X, lam, pf, beta, eta, w, r, xv, tol, max_sweeps, sweeps)
        change = 0.0
        for j in range(q):
            d = abs(beta[j] - old[j])
            if d > change:
                change = d
        if sweeps >= max_sweeps and inner >= tol:
            return False, sweeps, change, it + 1
        if change < tol:
            return True, sweeps, change, it + 1
    return False, sweeps, change, max_outer
