"""Independent reference computations used by the tests.

Nothing here imports the solver internals: the lasso oracle standardizes on
its own and runs accelerated proximal gradient (FISTA) to high precision.
"""

from fractions import Fraction

import numpy as np


def standardize(X, centered=True):
    n = X.shape[0]
    mean = X.mean(0) if centered else np.zeros(X.shape[1])
    sd = np.sqrt(((X - X.mean(0)) ** 2).sum(0) / n)
    return (X - mean) / sd, mean, sd


def lasso_objective(X, y, family, b0, b, lam, penalize_intercept=False):
    """mean(F(eta) - y eta) + lam * (||b * sd||_1 [+ |b0 + mean . b|]) on the original scale."""
    Xs, mean, sd = standardize(X, centered=not penalize_intercept)
    eta = b0 + X @ b
    if family == "linear":
        loss = np.mean(0.5 * eta**2 - y * eta)
    else:
        loss = np.mean(np.logaddexp(0.0, eta) - y * eta)
    pen = np.abs(b * sd).sum()
    if penalize_intercept:
        pen += abs(b0 + mean @ b)
    return float(loss + lam * pen)


def prox_gradient_lasso(X, y, family, lam, penalize_intercept=False, iters=200_000, tol=1e-15):
    """FISTA on the standardized problem; returns (b0, b) on the original scale."""
    n, p = X.shape
    Xs, mean, sd = standardize(X, centered=not penalize_intercept)
    A = np.hstack([np.ones((n, 1)), Xs])
    L = np.linalg.eigvalsh(A.T @ A / n).max()
    if family == "logistic":
        L /= 4.0
    step = 1.0 / L
    pf = np.ones(p + 1)
    pf[0] = 1.0 if penalize_intercept else 0.0
    w = np.zeros(p + 1)
    v = w.copy()
    t = 1.0
    for _ in range(iters):
        eta = A @ v
        mu = eta if family == "linear" else 1.0 / (1.0 + np.exp(-eta))
        grad = A.T @ (mu - y) / n
        z = v - step * grad
        w_new = np.sign(z) * np.maximum(np.abs(z) - step * lam * pf, 0.0)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        v = w_new + (t - 1) / t_new * (w_new - w)
        if np.max(np.abs(w_new - w)) < tol:
            w = w_new
            break
        # restart when momentum points uphill
        if (z - w_new) @ (w_new - w) > 0:
            t_new = 1.0
            v = w_new
        w, t = w_new, t_new
    b = w[1:] / sd
    b0 = w[0] - mean @ b
    return float(b0), b


def kkt_violation(X, y, family, model, penalize_intercept=False):
    """Largest KKT violation on the standardized scale (linear residuals or
    logistic score residuals)."""
    Xs, mean, sd = standardize(X, centered=not penalize_intercept)
    eta = model.intercept + X @ model.coefficients
    mu = eta if family == "linear" else 1.0 / (1.0 + np.exp(-eta))
    r = y - mu
    grad = Xs.T @ r / len(y)
    bstd = model.coefficients * sd
    lam = model.lam
    viol = np.where(
        bstd == 0.0, np.maximum(np.abs(grad) - lam, 0.0), np.abs(grad - lam * np.sign(bstd))
    )
    return float(viol.max()) if len(viol) else 0.0


def fraction_estimator(f, g, y, z, in_y, in_z):
    """Exact rational arithmetic for the covariance estimator.

    f, g: fitted means over the union; y, z: dicts union-index -> outcome.
    Returns (mu_f, mu_g, I, delta list, sigma2).
    """
    f = [Fraction(v) for v in f]
    g = [Fraction(v) for v in g]
    N = len(f)
    ny, nz = len(in_y), len(in_z)
    eps = {i: Fraction(y[i]) - f[i] for i in in_y}
    v = {i: Fraction(z[i]) - g[i] for i in in_z}
    mu_f = sum(f) / N + sum(eps.values()) / ny
    mu_g = sum(g) / N + sum(v.values()) / nz
    I = (
        sum(a * b for a, b in zip(f, g)) / N
        + sum(v[i] * f[i] for i in in_z) / nz
        + sum(eps[i] * g[i] for i in in_y) / ny
        - mu_f * mu_g
    )
    delta = []
    for i in range(N):
        d = (f[i] - mu_f) * (g[i] - mu_g) / N
        if i in eps:
            d += eps[i] * (g[i] - mu_g) / ny
        if i in v:
            d += v[i] * (f[i] - mu_f) / nz
        delta.append(d)
    sigma2 = sum((d - I / N) ** 2 for d in delta)
    return mu_f, mu_g, I, delta, sigma2


def weighted_fraction_estimator(f, g, y, z, in_y, in_z, w):
    """Rational-arithmetic weighted estimator; ``w`` maps union index -> weight."""
    f = [Fraction(a) for a in f]
    g = [Fraction(a) for a in g]
    w = [Fraction(a) for a in w]
    N = len(f)
    ny, nz = len(in_y), len(in_z)
    eps = {i: Fraction(y[i]) - f[i] for i in in_y}
    v = {i: Fraction(z[i]) - g[i] for i in in_z}
    mu_f = sum(wi * a for wi, a in zip(w, f)) / N + sum(w[i] * eps[i] for i in in_y) / ny
    mu_g = sum(wi * a for wi, a in zip(w, g)) / N + sum(w[i] * v[i] for i in in_z) / nz
    delta = []
    for i in range(N):
        d = (f[i] - mu_f) * (g[i] - mu_g) / N
        if i in eps:
            d += eps[i] * (g[i] - mu_g) / ny
        if i in v:
            d += v[i] * (f[i] - mu_f) / nz
        delta.append(d)
    I = sum(wi * d for wi, d in zip(w, delta))
    return mu_f, mu_g, I, delta
