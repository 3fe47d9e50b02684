"""Weighted estimator for a case-control study paired with a cohort study.

The logistic fit on case-control data has a biased intercept; it is shifted by
log(p1 pi0 / (p0 pi1)). Case-control samples are then reweighted by p/pi of
their class so that weighted sums target population quantities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset, GlmFamily, IndexSets, align_samples
from .errors import ConfigurationError, DegenerateDataError, EmptyDataError, UnsupportedDesignError
from .estimator import (
    CovarianceReport,
    EstimatorInputs,
    _check_alpha,
    centered_union,
    ci_bounds,
)
from .glm import FitConfig, fit_cv


@dataclass(frozen=True)
class CaseControlSpec:
    prevalence_p1: float
    pi1: float

    def __post_init__(self):
        for name in ("prevalence_p1", "pi1"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
                raise ConfigurationError(f"{name} must lie in (0, 1), got {v!r}")

    @property
    def p1(self):
        return self.prevalence_p1

    @property
    def p0(self):
        return 1.0 - self.prevalence_p1

    @property
    def pi0(self):
        return 1.0 - self.pi1

    @property
    def case_weight(self):
        return self.p1 / self.pi1

    @property
    def control_weight(self):
        return self.p0 / self.pi0


def correct_intercept(beta0_hat: float, spec: CaseControlSpec) -> float:
    return float(beta0_hat) + math.log(spec.p1 * spec.pi0 / (spec.p0 * spec.pi1))


def compute_weights(index: IndexSets, y, spec: CaseControlSpec) -> np.ndarray:
    """Per-sample weights over the union: 1 on the cohort, p/pi by class on the case-control study."""
    if index.n_o:
        raise UnsupportedDesignError(
            f"case-control mode needs disjoint studies; {index.n_o} samples are shared"
        )
    y = np.asarray(y, dtype=float)
    if len(y) != index.n_y:
        raise ConfigurationError("y length does not match the case-control study size")
    w = np.ones(index.N)
    w[index.idx_y] = np.where(y == 1.0, spec.case_weight, spec.control_weight)
    return w


@dataclass(frozen=True)
class WeightedReport(CovarianceReport):
    sigma2_y0: float = 0.0  # controls
    sigma2_y1: float = 0.0  # cases
    sigma2_z: float = 0.0
    beta0_hat: float = 0.0
    beta0_star: float = 0.0
    prevalence: float = 0.0
    case_fraction: float = 0.0
    weights: dict | None = None
    components: dict | None = None


def estimate_weighted(
    inputs: EstimatorInputs,
    spec: CaseControlSpec,
    alpha: float = 0.05,
    beta0_hat: float | None = None,
    seed=None,
) -> WeightedReport:
    """Weighted estimate; ``inputs.model_f`` must already carry the corrected intercept.

    Each component variance is the sum of squared deviations of its per-sample
    terms from the common constant I/(N w_i), so that the weighted total is
    sum_i (w_i Delta_i - I/N)^2 and reduces to the unweighted variance when all
    weights equal one.
    """
    _check_alpha(alpha)
    idx = inputs.index
    fv, gv, eps, v = inputs.fitted()
    w = compute_weights(idx, inputs.y, spec)
    wy, wz = w[idx.idx_y], w[idx.idx_z]
    N = idx.N
    mu_f = float(np.sum(w * fv) / N + np.sum(wy * eps) / idx.n_y)
    mu_g = float(np.sum(w * gv) / N + np.sum(wz * v) / idx.n_z)
    fc, gc = fv - mu_f, gv - mu_g
    delta = fc * gc / N
    delta[idx.idx_y] += eps * gc[idx.idx_y] / idx.n_y
    delta[idx.idx_z] += v * fc[idx.idx_z] / idx.n_z
    wd = w * delta
    I_check = float(np.sum(wd))

    cases = np.zeros(N, dtype=bool)
    cases[idx.idx_y[inputs.y == 1.0]] = True
    controls = idx.in_y() & ~cases
    cohort = idx.in_z()
    center = I_check / N
    comp, var = {}, {}
    for name, mask, weight in (
        ("y0", controls, spec.control_weight),
        ("y1", cases, spec.case_weight),
        ("z", cohort, 1.0),
    ):
        if np.count_nonzero(mask) < 2:
            raise DegenerateDataError(f"component {name} has fewer than 2 samples")
        comp[name] = float(np.sum(delta[mask]))
        var[name] = float(np.sum((delta[mask] - center / weight) ** 2))
    sigma2 = (
        spec.control_weight**2 * var["y0"] + spec.case_weight**2 * var["y1"] + var["z"]
    )
    se = math.sqrt(sigma2)
    lo, hi = ci_bounds(I_check, se, alpha)
    b0_star = inputs.model_f.intercept
    return WeightedReport(
        estimate=I_check,
        se=se,
        ci_lower=lo,
        ci_upper=hi,
        alpha=float(alpha),
        n_y=idx.n_y,
        n_z=idx.n_z,
        n_overlap=idx.n_o,
        N=N,
        mode="case-control",
        lambda_f=inputs.model_f.lam,
        lambda_g=inputs.model_g.lam,
        support_f=len(inputs.model_f.support),
        support_g=len(inputs.model_g.support),
        mu_f=mu_f,
        mu_g=mu_g,
        seed=seed,
        model_f=inputs.model_f.to_dict(),
        model_g=inputs.model_g.to_dict(),
        sigma2_y0=var["y0"],
        sigma2_y1=var["y1"],
        sigma2_z=var["z"],
        beta0_hat=float(b0_star if beta0_hat is None else beta0_hat),
        beta0_star=float(b0_star),
        prevalence=spec.p1,
        case_fraction=spec.pi1,
        weights={
            "case": spec.case_weight,
            "control": spec.control_weight,
            "cohort": 1.0,
            "sum": float(w.sum()),
        },
        components=comp,
    )


def run_case_control(
    ds_y: Dataset,
    ds_z: Dataset,
    prevalence: float,
    family_g="linear",
    fit_config: FitConfig | None = None,
    alpha: float = 0.05,
    case_fraction: float | None = None,
) -> WeightedReport:
    """Logistic fit on the case-control study, intercept correction, weighted estimate.

    ``case_fraction`` defaults to the observed fraction of cases in ``ds_y``.
    """
    _check_alpha(alpha)
    fit_config = fit_config or FitConfig()
    al = align_samples(ds_y, ds_z)
    idx = al.index
    if idx.n_o:
        raise UnsupportedDesignError(
            f"case-control mode needs disjoint studies; {idx.n_o} samples are shared"
        )
    if idx.n_y == 0 or idx.n_z == 0:
        raise EmptyDataError("each study needs at least one sample")
    y = al.y
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DegenerateDataError("case-control outcome must be 0/1")
    pi1 = float(np.mean(y)) if case_fraction is None else float(case_fraction)
    spec = CaseControlSpec(prevalence_p1=float(prevalence), pi1=pi1)
    X = centered_union(al)
    model_f, _ = fit_cv(X[idx.idx_y], y, GlmFamily.LOGISTIC, fit_config)
    model_g, _ = fit_cv(X[idx.idx_z], al.z, GlmFamily.parse(family_g), fit_config)
    b0 = model_f.intercept
    corrected = model_f.with_intercept(correct_intercept(b0, spec))
    inputs = EstimatorInputs(X, idx, corrected, model_g, y, al.z)
    return estimate_weighted(inputs, spec, alpha, beta0_hat=b0, seed=fit_config.seed)
