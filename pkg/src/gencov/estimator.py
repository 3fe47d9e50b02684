"""Debiased genetic-covariance estimator, its empirical variance and CI.

Given working-model fits f(b0 + x b) for y and g(g0 + x g) for z, the estimate
over the union of both studies is

    I = mean_N(f g) + mean_{I_z}(v f) + mean_{I_y}(eps g) - mu_f mu_g

with the residual-corrected means mu_f, mu_g. It splits into per-sample terms
Delta_i that sum to I, and sum_i (Delta_i - I/N)^2 estimates its variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Alignment, Dataset, GlmFamily, IndexSets, align_samples
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    DomainError,
    EmptyDataError,
    ShapeError,
)
from .glm import FitConfig, FittedGlm, fit_cv, predict_mean

MODES = ("general", "narrow-sense", "case-control", "cross-fitted")

# Acklam's rational approximation to the inverse normal CDF
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def _acklam_lower(q):
    # q <= 0.5
    if q < _P_LOW:
        t = math.sqrt(-2.0 * math.log(q))
        num = ((((_C[0] * t + _C[1]) * t + _C[2]) * t + _C[3]) * t + _C[4]) * t + _C[5]
        den = (((_D[0] * t + _D[1]) * t + _D[2]) * t + _D[3]) * t + 1.0
        return num / den
    u = q - 0.5
    r = u * u
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * u
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    return num / den


def normal_quantile(q: float) -> float:
    """Inverse standard normal CDF.

    Rational approximation followed by one Halley step against ``erfc``; the
    upper half is handled by symmetry so that 1 - q stays exact.
    """
    q = float(q)
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {q!r}")
    if q == 0.5:
        return 0.0
    lower = min(q, 1.0 - q)  # exact for q > 0.5 (Sterbenz)
    x = _acklam_lower(lower)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - lower
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    x = x - u / (1.0 + 0.5 * x * u)
    return x if q < 0.5 else -x


# --------------------------------------------------------------------------
# inputs and core algebra


@dataclass(frozen=True, eq=False)
class EstimatorInputs:
    """Union covariates, sample bookkeeping, both fits and the observed outcomes."""

    covariates: np.ndarray
    index: IndexSets
    model_f: FittedGlm
    model_g: FittedGlm
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        z = np.asarray(self.z, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != self.index.N:
            raise ShapeError(f"covariates must have N={self.index.N} rows, got shape {X.shape}")
        if self.model_f.p != X.shape[1] or self.model_g.p != X.shape[1]:
            raise ShapeError("model column count does not match covariates")
        if len(y) != self.index.n_y or len(z) != self.index.n_z:
            raise ShapeError(
                f"outcome lengths ({len(y)}, {len(z)}) do not match "
                f"(n_y, n_z) = ({self.index.n_y}, {self.index.n_z})"
            )
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    def fitted(self):
        """Fitted means over the union and residuals over each study."""
        idx = self.index
        if idx.N == 0:
            raise EmptyDataError("no samples in the union")
        if idx.n_y == 0 or idx.n_z == 0:
            raise EmptyDataError("each study needs at least one sample")
        fv = predict_mean(self.model_f, self.covariates)
        gv = predict_mean(self.model_g, self.covariates)
        eps = self.y - fv[idx.idx_y]
        v = self.z - gv[idx.idx_z]
        return fv, gv, eps, v


def estimate_means(inputs: EstimatorInputs):
    """Residual-corrected means (mu_f, mu_g)."""
    fv, gv, eps, v = inputs.fitted()
    return _means(fv, gv, eps, v)


def _means(fv, gv, eps, v):
    return float(fv.mean() + eps.mean()), float(gv.mean() + v.mean())


def _deltas(fv, gv, eps, v, index: IndexSets, mu_f, mu_g):
    fc = fv - mu_f
    gc = gv - mu_g
    d = fc * gc / index.N
    d[index.idx_y] += eps * gc[index.idx_y] / index.n_y
    d[index.idx_z] += v * fc[index.idx_z] / index.n_z
    return d


def delta_terms(inputs: EstimatorInputs, mu_f: float, mu_g: float) -> np.ndarray:
    """Per-sample contributions in union order; they sum to the estimate."""
    fv, gv, eps, v = inputs.fitted()
    return _deltas(fv, gv, eps, v, inputs.index, mu_f, mu_g)


def estimate_I(inputs: EstimatorInputs):
    """Returns (I_hat, delta, mu_f, mu_g)."""
    fv, gv, eps, v = inputs.fitted()
    idx = inputs.index
    mu_f, mu_g = _means(fv, gv, eps, v)
    I_hat = (
        float(np.mean(fv * gv))
        + float(np.mean(v * fv[idx.idx_z]))
        + float(np.mean(eps * gv[idx.idx_y]))
        - mu_f * mu_g
    )
    return I_hat, _deltas(fv, gv, eps, v, idx, mu_f, mu_g), mu_f, mu_g


def variance_and_ci(I_hat: float, delta, N: int, alpha: float = 0.05):
    """Returns (se, (lower, upper)) with se^2 = sum (delta_i - I/N)^2."""
    delta = np.asarray(delta, dtype=float)
    if N < 2:
        raise DegenerateDataError("need N >= 2 for a variance estimate")
    if len(delta) != N:
        raise ShapeError(f"delta has length {len(delta)}, expected N={N}")
    _check_alpha(alpha)
    se = math.sqrt(float(np.sum((delta - I_hat / N) ** 2)))
    if se == 0.0:
        warnings.warn("estimated standard error is zero; confidence interval is a point", RuntimeWarning)
    return se, ci_bounds(I_hat, se, alpha)


def ci_bounds(estimate, se, alpha):
    h = normal_quantile(1.0 - alpha / 2.0) * se
    return estimate - h, estimate + h


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha!r}")


# --------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class CovarianceReport:
    estimate: float
    se: float
    ci_lower: float
    ci_upper: float
    alpha: float
    n_y: int
    n_z: int
    n_overlap: int
    N: int
    mode: str
    lambda_f: float
    lambda_g: float
    support_f: int
    support_g: int
    mu_f: float
    mu_g: float
    seed: int | None = None
    model_f: dict | None = None
    model_g: dict | None = None
    standardized: bool = False
    scale: float = 1.0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def standardize(self, var_y: float, var_z: float) -> "CovarianceReport":
        """Divide estimate, se and CI by sqrt(var_y * var_z)."""
        s = math.sqrt(var_y * var_z)
        if not s > 0:
            raise DegenerateDataError("outcome variance is zero; cannot standardize")
        return replace(
            self,
            estimate=self.estimate / s,
            se=self.se / s,
            ci_lower=self.ci_lower / s,
            ci_upper=self.ci_upper / s,
            standardized=True,
            scale=s,
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def report_from_inputs(inputs: EstimatorInputs, alpha=0.05, mode="general", seed=None) -> CovarianceReport:
    """Estimate, variance and CI for already-fitted working models."""
    _check_alpha(alpha)
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    I_hat, delta, mu_f, mu_g = estimate_I(inputs)
    se, (lo, hi) = variance_and_ci(I_hat, delta, inputs.index.N, alpha)
    idx = inputs.index
    return CovarianceReport(
        estimate=I_hat,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        alpha=float(alpha),
        n_y=idx.n_y,
        n_z=idx.n_z,
        n_overlap=idx.n_o,
        N=idx.N,
        mode=mode,
        lambda_f=inputs.model_f.lam,
        lambda_g=inputs.model_g.lam,
        support_f=len(inputs.model_f.support),
        support_g=len(inputs.model_g.support),
        mu_f=mu_f,
        mu_g=mu_g,
        seed=seed,
        model_f=inputs.model_f.to_dict(),
        model_g=inputs.model_g.to_dict(),
    )


# --------------------------------------------------------------------------
# pipelines


def centered_union(al: Alignment) -> np.ndarray:
    """Union covariates centered by their union sample means."""
    X = np.asarray(al.covariates, dtype=float)
    return X - X.mean(axis=0) if len(X) else X.copy()


def _families(family_f, family_g, narrow_sense):
    if narrow_sense:
        return GlmFamily.LINEAR, GlmFamily.LINEAR, "narrow-sense"
    return GlmFamily.parse(family_f), GlmFamily.parse(family_g), "general"


def run_pipeline(
    ds_y: Dataset,
    ds_z: Dataset,
    family_f="linear",
    family_g="linear",
    fit_config: FitConfig | None = None,
    alpha: float = 0.05,
    narrow_sense: bool = False,
) -> CovarianceReport:
    """Fit both working models by cross-validated lasso on the full studies
    (no sample splitting) and estimate the covariance on the union."""
    _check_alpha(alpha)
    fit_config = fit_config or FitConfig()
    ff, fg, mode = _families(family_f, family_g, narrow_sense)
    al = align_samples(ds_y, ds_z)
    idx = al.index
    if idx.n_y == 0 or idx.n_z == 0:
        raise EmptyDataError("each study needs at least one sample")
    X = centered_union(al)
    model_f, _ = fit_cv(X[idx.idx_y], al.y, ff, fit_config)
    model_g, _ = fit_cv(X[idx.idx_z], al.z, fg, fit_config)
    inputs = EstimatorInputs(X, idx, model_f, model_g, al.y, al.z)
    return report_from_inputs(inputs, alpha, mode, seed=fit_config.seed)


def split_halves(index: IndexSets, seed):
    """Seeded halving of both studies; shared samples land in the same half.

    Returns two boolean masks over the union (half A, half B). Each study
    contributes floor(n/2) samples to half A.
    """
    rng = np.random.default_rng(seed)
    in_y, in_z = index.in_y(), index.in_z()
    both = np.flatnonzero(in_y & in_z)
    y_only = np.flatnonzero(in_y & ~in_z)
    z_only = np.flatnonzero(in_z & ~in_y)
    half_a = np.zeros(index.N, dtype=bool)
    ob = rng.permutation(both)
    n_ob = len(ob) // 2
    half_a[ob[:n_ob]] = True
    half_a[rng.permutation(y_only)[: index.n_y // 2 - n_ob]] = True
    half_a[rng.permutation(z_only)[: index.n_z // 2 - n_ob]] = True
    return half_a, ~half_a


def _sub_alignment(X, al: Alignment, mask):
    """Covariates, IndexSets and outcomes restricted to a union mask."""
    in_y, in_z = al.index.in_y(), al.index.in_z()
    rows = np.flatnonzero(mask)
    sub = IndexSets.from_masks(in_y[rows], in_z[rows])
    # outcomes follow union order within the half
    y_of = np.empty(al.index.N)
    y_of[al.index.idx_y] = al.y
    z_of = np.empty(al.index.N)
    z_of[al.index.idx_z] = al.z
    return X[rows], sub, y_of[rows][sub.idx_y], z_of[rows][sub.idx_z]


def pool_halves(est_1, se_1, est_2, se_2):
    """Average of two half-sample estimates and the SE of that average."""
    return 0.5 * (est_1 + est_2), 0.5 * math.sqrt(se_1**2 + se_2**2)


def run_cross_fitted(
    ds_y: Dataset,
    ds_z: Dataset,
    families=("linear", "linear"),
    fit_config: FitConfig | None = None,
    alpha: float = 0.05,
    split_seed: int = 0,
    narrow_sense: bool = False,
) -> CovarianceReport:
    """Cross-fitted estimate: fit on one half, estimate on the other, swap, average.

    The two half-sample estimates are averaged and their variances pooled as
    se = sqrt(se_1^2 + se_2^2) / 2.
    """
    _check_alpha(alpha)
    fit_config = fit_config or FitConfig()
    ff, fg, _ = _families(families[0], families[1], narrow_sense)
    al = align_samples(ds_y, ds_z)
    idx = al.index
    if idx.n_y < 4 or idx.n_z < 4:
        raise DegenerateDataError("cross-fitting needs at least 4 samples in each study")
    if min(idx.n_y, idx.n_z) // 2 < fit_config.cv_folds:
        raise DegenerateDataError(
            f"half-study too small for {fit_config.cv_folds}-fold cross-validation"
        )
    X = centered_union(al)
    halves = split_halves(idx, split_seed)
    parts = [_sub_alignment(X, al, m) for m in halves]
    fits = []
    for Xh, sub, yh, zh in parts:
        try:
            mf, _ = fit_cv(Xh[sub.idx_y], yh, ff, fit_config)
            mg, _ = fit_cv(Xh[sub.idx_z], zh, fg, fit_config)
        except DegenerateDataError as e:
            raise DegenerateDataError(f"degenerate split: {e}") from e
        fits.append((mf, mg))
    rounds = []
    for (mf, mg), (Xh, sub, yh, zh) in zip(fits, parts[::-1]):
        inputs = EstimatorInputs(Xh, sub, mf, mg, yh, zh)
        rounds.append(report_from_inputs(inputs, alpha, "general", fit_config.seed))
    est, se = pool_halves(rounds[0].estimate, rounds[0].se, rounds[1].estimate, rounds[1].se)
    lo, hi = ci_bounds(est, se, alpha)
    keys = ("estimate", "se", "lambda_f", "lambda_g", "support_f", "support_g", "mu_f", "mu_g", "N")
    return CovarianceReport(
        estimate=est,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        alpha=float(alpha),
        n_y=idx.n_y,
        n_z=idx.n_z,
        n_overlap=idx.n_o,
        N=idx.N,
        mode="cross-fitted",
        lambda_f=0.5 * (rounds[0].lambda_f + rounds[1].lambda_f),
        lambda_g=0.5 * (rounds[0].lambda_g + rounds[1].lambda_g),
        support_f=max(r.support_f for r in rounds),
        support_g=max(r.support_g for r in rounds),
        mu_f=0.5 * (rounds[0].mu_f + rounds[1].mu_f),
        mu_g=0.5 * (rounds[0].mu_g + rounds[1].mu_g),
        seed=fit_config.seed,
        details={
            "split_seed": int(split_seed),
            "rounds": [{k: getattr(r, k) for k in keys} for r in rounds],
        },
    )
