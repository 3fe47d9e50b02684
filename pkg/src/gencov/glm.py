"""Lasso-penalized linear and logistic working models.

Covariates are centered and scaled to unit (1/n) standard deviation before
fitting and the penalty applies to the standardized coefficients, as in glmnet.
Linear fits run covariance-mode coordinate descent on the standardized Gram
matrix; logistic fits run IRLS with a weighted coordinate-descent inner solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .data import GlmFamily
from .errors import ConfigurationError, ConvergenceError, DegenerateDataError, ShapeError

W_FLOOR = 1e-5
P_CLAMP = 1e-8
MAX_OUTER = 100


@dataclass(frozen=True)
class FitConfig:
    n_lambda: int = 100
    lambda_min_ratio: float | None = None  # None: 0.01 if n < p else 1e-4
    cd_tolerance: float = 1e-7
    max_sweeps: int = 10_000
    cv_folds: int = 10
    selection_rule: str = "min-cv-error"
    penalize_intercept: bool = False
    seed: int = 0
    # glmnet-style path truncation; 0 disables
    path_fdev: float = 1e-5
    path_devmax: float = 0.999
    # stop the CV walk this many grid points past a clear minimum; 0 walks the whole grid
    cv_patience: int = 10

    def __post_init__(self):
        if self.n_lambda < 1:
            raise ConfigurationError("n_lambda must be >= 1")
        if self.lambda_min_ratio is not None and not 0 < self.lambda_min_ratio < 1:
            raise ConfigurationError("lambda_min_ratio must lie in (0, 1)")
        if self.cv_folds < 2:
            raise ConfigurationError("cv_folds must be >= 2")
        if self.selection_rule not in ("min-cv-error", "one-se"):
            raise ConfigurationError(f"unknown selection rule {self.selection_rule!r}")
        if self.cd_tolerance <= 0 or self.max_sweeps < 1:
            raise ConfigurationError("cd_tolerance must be > 0 and max_sweeps >= 1")

    def min_ratio(self, n, p):
        if self.lambda_min_ratio is not None:
            return self.lambda_min_ratio
        return 0.01 if n < p else 1e-4

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


@dataclass(frozen=True, eq=False)
class FittedGlm:
    intercept: float
    coefficients: np.ndarray
    family: GlmFamily
    lam: float
    x_center: np.ndarray = field(repr=False)
    x_scale: np.ndarray = field(repr=False)
    penalize_intercept: bool = False
    sweeps: int = 0

    @property
    def p(self) -> int:
        return len(self.coefficients)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.coefficients)

    def linear_predictor(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ShapeError(f"expected a matrix with {self.p} columns, got shape {X.shape}")
        s = self.support
        return self.intercept + X[:, s] @ self.coefficients[s]

    def std_coefficients(self):
        """Intercept and slopes on the internal standardized scale."""
        b = self.coefficients * self.x_scale
        b0 = self.intercept + float(self.x_center @ self.coefficients)
        return b0, b

    def with_intercept(self, intercept) -> "FittedGlm":
        return replace(self, intercept=float(intercept))

    def to_dict(self):
        s = self.support
        return {
            "family": self.family.value,
            "lambda": self.lam,
            "intercept": self.intercept,
            "support": s.tolist(),
            "coefficients": self.coefficients[s].tolist(),
        }


def soft_threshold(z, t):
    """sign(z) * max(|z| - t, 0)."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def predict_mean(model: FittedGlm, X) -> np.ndarray:
    return model.family.mean(model.linear_predictor(X))


def residuals(model: FittedGlm, X, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ShapeError(f"outcome length {y.shape} does not match {X.shape[0]} rows")
    return y - predict_mean(model, X)


def penalized_objective(model: FittedGlm, X, y) -> float:
    """mean(F(eta) - y*eta) + lambda * (standardized l1 norm [+ |intercept|])."""
    eta = model.linear_predictor(X)
    loss = float(np.mean(model.family.cumulant(eta) - y * eta))
    b0, b = model.std_coefficients()
    pen = np.abs(b).sum() + (abs(b0) if model.penalize_intercept else 0.0)
    return loss + model.lam * pen


# --------------------------------------------------------------------------
# standardization


@dataclass
class _Standardization:
    center: np.ndarray
    scale: np.ndarray  # 1.0 for excluded columns
    keep: np.ndarray  # bool

    @classmethod
    def from_moments(cls, mean, var, centered):
        var = np.maximum(var, 0.0)
        keep = var > 1e-12 * np.maximum(1.0, mean**2)
        scale = np.where(keep, np.sqrt(np.where(keep, var, 1.0)), 1.0)
        center = mean if centered else np.zeros_like(mean)
        return cls(center=center, scale=scale, keep=keep)

    def pf(self, penalize_intercept):
        pf = np.ones(len(self.keep) + 1)
        pf[0] = 1.0 if penalize_intercept else 0.0
        return pf

    def unstandardize(self, beta_aug):
        coef = np.where(self.keep, beta_aug[1:] / self.scale, 0.0)
        intercept = beta_aug[0] - float(self.center @ coef)
        return intercept, coef


def _check_xy(X, y, family):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ShapeError("X must be a 2-d matrix")
    if y.shape != (X.shape[0],):
        raise ShapeError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] < 2:
        raise DegenerateDataError("need at least 2 samples to fit")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DegenerateDataError("non-finite values in X or y")
    if family is GlmFamily.LOGISTIC:
        if not np.all((y == 0) | (y == 1)):
            raise DegenerateDataError("logistic outcome must be 0/1")
        if y.min() == y.max():
            raise DegenerateDataError("logistic outcome has a single class")
    return X, y


# --------------------------------------------------------------------------
# linear family: sufficient statistics + Gram coordinate descent


@dataclass
class _GramProblem:
    C: np.ndarray
    c: np.ndarray
    yy: float  # y'y / n
    ybar: float
    std: _Standardization

    @classmethod
    def from_stats(cls, n, sx, sxx, sxy, sy, syy, centered):
        m = sx / n
        var = np.diag(sxx) / n - m**2
        std = _Standardization.from_moments(m, var, centered)
        s = std.scale
        p = len(sx)
        C = np.zeros((p + 1, p + 1))
        c = np.empty(p + 1)
        ybar = sy / n
        if centered:
            cov = sxx / n - np.outer(m, m)
            C[1:, 1:] = cov / np.outer(s, s)
            c[1:] = (sxy / n - m * ybar) / s
        else:
            C[1:, 1:] = (sxx / n) / np.outer(s, s)
            C[0, 1:] = C[1:, 0] = m / s
            c[1:] = (sxy / n) / s
        C[0, 0] = 1.0
        c[0] = ybar
        drop = np.flatnonzero(~std.keep) + 1
        C[drop, :] = 0.0
        C[:, drop] = 0.0
        c[drop] = 0.0
        return cls(C=C, c=c, yy=syy / n, ybar=ybar, std=std)

    @classmethod
    def from_data(cls, X, y, centered):
        n = X.shape[0]
        return cls.from_stats(n, X.sum(0), X.T @ X, X.T @ y, y.sum(), y @ y, centered)

    def lambda_max(self):
        g = self.c[1:] - self.C[1:, 0] * self.ybar
        return float(np.max(np.abs(g))) if len(g) else 0.0

    def null_rss(self):
        return self.yy - self.ybar**2


class _GramPath:
    """Warm-started solver state for one linear problem along a lambda path."""

    def __init__(self, prob: _GramProblem, config: FitConfig, beta=None):
        self.prob = prob
        self.config = config
        self.pf = prob.std.pf(config.penalize_intercept)
        self.beta = np.zeros(len(prob.c)) if beta is None else beta.copy()
        self.g = prob.c - prob.C @ self.beta
        self.rss0 = max(prob.null_rss(), 1e-300)
        self.prev = 0.0
        self.k = 0
        self.done = False
        self.sweeps = 0

    def step(self, lam):
        prob, cfg = self.prob, self.config
        sweeps, dmax = _kernels.gram_cd(
            prob.C, prob.c, float(lam), self.pf, self.beta, self.g, cfg.cd_tolerance, cfg.max_sweeps
        )
        if dmax >= cfg.cd_tolerance:
            raise ConvergenceError(
                f"coordinate descent did not converge at lambda={lam:.4g} "
                f"after {sweeps} sweeps (max change {dmax:.3g})",
                max_change=float(dmax),
            )
        self.sweeps = sweeps
        rss = prob.yy - self.beta @ (prob.c + self.g)
        self._record(1.0 - rss / self.rss0)
        return self.beta.copy()

    def _record(self, ratio):
        cfg = self.config
        if self.k >= 4 and (
            (cfg.path_devmax and ratio > cfg.path_devmax)
            or (cfg.path_fdev and ratio - self.prev < cfg.path_fdev * ratio)
        ):
            self.done = True
        self.prev = ratio
        self.k += 1


# --------------------------------------------------------------------------
# logistic family: IRLS


@dataclass
class _LogisticProblem:
    Xs: np.ndarray  # (n, p+1), Fortran order, column 0 = ones
    y: np.ndarray
    std: _Standardization

    @classmethod
    def from_data(cls, X, y, centered):
        n, p = X.shape
        m = X.mean(0)
        std = _Standardization.from_moments(m, X.var(0), centered)
        Xs = np.empty((n, p + 1), order="F")
        Xs[:, 0] = 1.0
        Xs[:, 1:] = (X - std.center) / std.scale
        Xs[:, 1:][:, ~std.keep] = 0.0
        return cls(Xs=Xs, y=np.ascontiguousarray(y, dtype=float), std=std)

    def lambda_max(self):
        r = self.y - self.y.mean()
        return float(np.max(np.abs(self.Xs[:, 1:].T @ r))) / len(self.y) if self.Xs.shape[1] > 1 else 0.0

    def deviance(self, eta):
        return 2.0 * float(np.sum(np.logaddexp(0.0, eta) - self.y * eta))

    def null_beta(self):
        ybar = min(max(self.y.mean(), P_CLAMP), 1.0 - P_CLAMP)
        b = np.zeros(self.Xs.shape[1])
        b[0] = np.log(ybar / (1.0 - ybar))
        return b


class _IrlsPath(_GramPath):
    """Warm-started solver state for one logistic problem along a lambda path."""

    def __init__(self, prob: _LogisticProblem, config: FitConfig, beta=None):
        self.prob = prob
        self.config = config
        self.pf = prob.std.pf(config.penalize_intercept)
        self.beta = prob.null_beta() if beta is None else beta.copy()
        self.eta = prob.Xs @ self.beta
        self.null_dev = max(prob.deviance(np.full(len(prob.y), prob.null_beta()[0])), 1e-300)
        self.prev = 0.0
        self.k = 0
        self.done = False
        self.sweeps = 0

    def step(self, lam):
        prob, cfg = self.prob, self.config
        ok, sweeps, change, _ = _kernels.irls_cd(
            prob.Xs, prob.y, float(lam), self.pf, self.beta, self.eta, cfg.cd_tolerance,
            cfg.max_sweeps, MAX_OUTER, W_FLOOR, P_CLAMP,
        )
        if not ok:
            raise ConvergenceError(
                f"IRLS did not converge at lambda={lam:.4g} (max change {change:.3g})",
                max_change=float(change),
            )
        self.sweeps = sweeps
        self._record(1.0 - prob.deviance(self.eta) / self.null_dev)
        return self.beta.copy()


class _NullPath:
    """Intercept-only stand-in for a CV fold whose training outcome has one class."""

    def __init__(self, prob: _LogisticProblem):
        self.beta = prob.null_beta()
        self.done = False
        self.sweeps = 0

    def step(self, lam):
        return self.beta.copy()


# --------------------------------------------------------------------------
# public fitting API


def _problem(X, y, family, config):
    centered = not config.penalize_intercept
    if family is GlmFamily.LINEAR:
        return _GramProblem.from_data(X, y, centered)
    return _LogisticProblem.from_data(X, y, centered)


def _path(prob, config, beta=None):
    if isinstance(prob, _GramProblem):
        return _GramPath(prob, config, beta)
    return _IrlsPath(prob, config, beta)


def _to_model(prob, beta_aug, family, lam, config, sweeps=0):
    b0, coef = prob.std.unstandardize(beta_aug)
    return FittedGlm(
        intercept=float(b0),
        coefficients=coef,
        family=family,
        lam=float(lam),
        x_center=prob.std.center.copy(),
        x_scale=prob.std.scale.copy(),
        penalize_intercept=config.penalize_intercept,
        sweeps=int(sweeps),
    )


def _warm_beta(prob, warm: FittedGlm | None):
    if warm is None:
        return None
    if warm.p != len(prob.std.scale):
        raise ShapeError("warm start has a different number of covariates")
    coef = np.where(prob.std.keep, warm.coefficients, 0.0)
    b = np.empty(len(coef) + 1)
    b[1:] = coef * prob.std.scale
    b[0] = warm.intercept + float(prob.std.center @ coef)
    return b


def fit_at_lambda(X, y, family, lam, warm_start: FittedGlm | None = None, config: FitConfig | None = None):
    """Minimize the penalized negative log-likelihood at a single ``lam``."""
    config = config or FitConfig()
    family = GlmFamily.parse(family)
    if lam < 0:
        raise ConfigurationError("lambda must be nonnegative")
    X, y = _check_xy(X, y, family)
    prob = _problem(X, y, family, config)
    state = _path(prob, config, _warm_beta(prob, warm_start))
    beta = state.step(lam)
    return _to_model(prob, beta, family, lam, config, state.sweeps)


def lambda_grid(X, y, family, config: FitConfig | None = None) -> np.ndarray:
    """Geometric grid from the smallest all-zero lambda down by ``lambda_min_ratio``."""
    config = config or FitConfig()
    family = GlmFamily.parse(family)
    X, y = _check_xy(X, y, family)
    return _grid(_problem(X, y, family, config), X.shape, config)


def _grid(prob, shape, config):
    lmax = prob.lambda_max()
    if lmax <= 0:
        return np.zeros(1)
    n, p = shape
    if config.n_lambda == 1:
        return np.array([lmax])
    return lmax * np.geomspace(1.0, config.min_ratio(n, p), config.n_lambda)


def fit_path(X, y, family, config: FitConfig | None = None, lambdas=None, truncate=True):
    """Warm-started path; may stop early (glmnet's deviance rules). Returns (lambdas, models)."""
    config = config or FitConfig()
    family = GlmFamily.parse(family)
    X, y = _check_xy(X, y, family)
    prob = _problem(X, y, family, config)
    lambdas = _grid(prob, X.shape, config) if lambdas is None else np.asarray(lambdas, float)
    state = _path(prob, config)
    models = []
    for lam in lambdas:
        beta = state.step(lam)
        models.append(_to_model(prob, beta, family, lam, config, state.sweeps))
        if truncate and state.done:
            break
    return lambdas[: len(models)], models


@dataclass(frozen=True, eq=False)
class CvCurve:
    lambdas: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    index_min: int
    index_1se: int
    selected: int


def fold_ids(n, k, seed) -> np.ndarray:
    """Seeded fold labels 0..k-1, sizes differing by at most one."""
    if not 2 <= k <= n:
        raise ConfigurationError(f"cv_folds={k} must lie in [2, n={n}]")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    return folds


def _validation_loss(family, y, eta):
    if family is GlmFamily.LINEAR:
        return float(np.mean((y - eta) ** 2))
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def fit_cv(X, y, family, config: FitConfig | None = None):
    """K-fold cross-validated lasso. Returns (model at selected lambda, CvCurve).

    The full-data path and every fold path advance together along the grid.
    With ``cv_patience > 0`` the walk stops once the CV error has stayed more
    than one SE above its running minimum for ``cv_patience`` grid points.
    """
    config = config or FitConfig()
    family = GlmFamily.parse(family)
    X, y = _check_xy(X, y, family)
    n, p = X.shape
    K = config.cv_folds
    folds = fold_ids(n, K, config.seed)
    centered = not config.penalize_intercept

    if family is GlmFamily.LINEAR:
        sxx, sx, sxy = X.T @ X, X.sum(0), X.T @ y
        sy, syy = y.sum(), y @ y
        prob = _GramProblem.from_stats(n, sx, sxx, sxy, sy, syy, centered)
    else:
        prob = _LogisticProblem.from_data(X, y, centered)
    grid = _grid(prob, X.shape, config)
    full = _path(prob, config)

    fold_states, fold_data = [], []
    for k in range(K):
        te = folds == k
        Xte, yte = X[te], y[te]
        if family is GlmFamily.LINEAR:
            fprob = _GramProblem.from_stats(
                n - len(yte), sx - Xte.sum(0), sxx - Xte.T @ Xte, sxy - Xte.T @ yte,
                sy - yte.sum(), syy - yte @ yte, centered,
            )
            state = _path(fprob, config)
        else:
            ytr = y[~te]
            fprob = _LogisticProblem.from_data(X[~te], ytr, centered)
            state = _NullPath(fprob) if ytr.min() == ytr.max() else _path(fprob, config)
        fold_states.append(state)
        fold_data.append((fprob, Xte, yte))
    weights = np.bincount(folds, minlength=K).astype(float)
    wsum = weights.sum()

    betas, sweeps, cvm, cvsd = [], [], [], []
    last = [None] * K
    i_min = 0
    for j, lam in enumerate(grid):
        betas.append(full.step(lam))
        sweeps.append(full.sweeps)
        loss = np.empty(K)
        for k, state in enumerate(fold_states):
            if last[k] is None or not state.done:
                last[k] = state.step(lam)
            fprob, Xte, yte = fold_data[k]
            b0, coef = fprob.std.unstandardize(last[k])
            loss[k] = _validation_loss(family, yte, b0 + Xte @ coef)
        m = float(weights @ loss / wsum)
        cvm.append(m)
        cvsd.append(float(np.sqrt(weights @ (loss - m) ** 2 / wsum / (K - 1))))
        if m < cvm[i_min]:
            i_min = j
        if full.done:
            break
        if (
            config.cv_patience
            and j - i_min >= config.cv_patience
            and m > cvm[i_min] + cvsd[i_min]
        ):
            break

    lambdas = grid[: len(cvm)]
    cvm, cvsd = np.array(cvm), np.array(cvsd)
    i_1se = int(np.flatnonzero(cvm <= cvm[i_min] + cvsd[i_min]).min())
    sel = i_min if config.selection_rule == "min-cv-error" else i_1se
    model = _to_model(prob, betas[sel], family, lambdas[sel], config, sweeps[sel])
    curve = CvCurve(lambdas=lambdas, mean=cvm, se=cvsd, index_min=i_min, index_1se=i_1se, selected=sel)
    return model, curve
