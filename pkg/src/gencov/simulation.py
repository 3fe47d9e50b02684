"""Seeded data generators, truth oracles and the coverage-study harness.

Random streams are derived from the root seed with ``SeedSequence`` spawn keys:
(0, i) for replicate i, (1,) for the true coefficient vectors (drawn once per
study, so the target is fixed across replicates) and (2,) for Monte Carlo
truth draws.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import integrate, linalg, signal, special

from .casecontrol import run_case_control
from .data import Dataset, expit
from .errors import (
    ConfigurationError,
    DegenerateDataError,
    GencovError,
    GenerationError,
    OraclePrecisionError,
)
from .estimator import normal_quantile, run_cross_fitted, run_pipeline
from .glm import FitConfig

TRUE_MODELS = ("linear", "logistic", "probit", "m1", "m2")
BINARY_MODELS = ("logistic", "probit")
MIN_TRUTH_DRAWS = 1_000_000
MAX_TRUTH_DRAWS = 16_000_000
_BATCHES = 100

# slopes of the population least-squares projections of m1 and m2 on x_1..x_6
# under N(0, AR(1)) covariates; by Stein's lemma these are E[grad m]
M1_PROJECTION = (0.0, 0.0, -4.0, 0.0, 2.0, 1.0)
M2_PROJECTION = (0.0, 0.0, 1.2, 0.0, 2.0, 1.0)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SimulationConfig:
    n_y: int
    n_z: int
    s_beta: int
    s_gamma: int
    overlap: str = "full"  # full | disjoint | partial
    n_overlap: int | None = None  # partial only
    p: int = 500
    design: str = "gaussian-ar1"  # gaussian-ar1 | synthetic-genotype
    rho: float = 0.6
    maf: float = 0.2  # synthetic-genotype only
    coef_scheme: str = "ones"  # ones | gaussian
    positions: str = "first-s"  # first-s | random
    target_var_f: float = 4.0
    target_var_g: float = 4.0
    error_corr: float = 0.4
    model_f: str = "linear"
    model_g: str = "linear"
    intercept_f: float = 0.0
    intercept_g: float = 0.0
    fit_f: str = "linear"
    fit_g: str = "linear"
    estimator: str = "pipeline"  # pipeline | cross-fitted | case-control
    case_fraction: float = 0.5  # case-control only
    alpha: float = 0.05
    replications: int = 300
    seed: int = 0
    cv_folds: int = 10
    truth_draws: int = MIN_TRUTH_DRAWS
    name: str = ""

    def __post_init__(self):
        def bad(name, why):
            raise ConfigurationError(f"{name}: {why}")

        if self.s_beta > self.p:
            bad("s_beta", f"{self.s_beta} exceeds p={self.p}")
        if self.s_gamma > self.p:
            bad("s_gamma", f"{self.s_gamma} exceeds p={self.p}")
        if not abs(self.error_corr) < 1:
            bad("error_corr", "must satisfy |error_corr| < 1")
        if not abs(self.rho) < 1:
            bad("rho", "must satisfy |rho| < 1")
        if self.design == "synthetic-genotype" and not 0 < self.maf <= 0.5:
            bad("maf", "must lie in (0, 0.5]")
        if self.overlap == "full" and self.n_y != self.n_z:
            bad("overlap", "full overlap requires n_y == n_z")
        if self.overlap == "partial":
            if self.n_overlap is None:
                bad("n_overlap", "required for partial overlap")
            if not 0 <= self.n_overlap <= min(self.n_y, self.n_z):
                bad("n_overlap", "must lie in [0, min(n_y, n_z)]")
        if {"m1", "m2"} & {self.model_f, self.model_g}:
            if self.p < 6:
                bad("p", "m1/m2 models need p >= 6")
            if self.design != "gaussian-ar1":
                bad("design", "m1/m2 models are defined for the gaussian-ar1 design")
        if self.fit_f == "logistic" and self.model_f not in BINARY_MODELS:
            bad("fit_f", f"logistic fit needs a binary true model, got {self.model_f!r}")
        if self.fit_g == "logistic" and self.model_g not in BINARY_MODELS:
            bad("fit_g", f"logistic fit needs a binary true model, got {self.model_g!r}")
        if self.estimator == "case-control":
            if self.fit_f != "logistic":
                bad("fit_f", "case-control estimator needs a logistic fit for y")
            if self.overlap != "disjoint":
                bad("overlap", "case-control estimator needs disjoint studies")
            if not 0 < self.case_fraction < 1:
                bad("case_fraction", "must lie in (0, 1)")
            if self.n_y * self.case_fraction != round(self.n_y * self.case_fraction):
                bad("case_fraction", "n_y * case_fraction must be an integer")
        if not 0 < self.alpha < 1:
            bad("alpha", "must lie in (0, 1)")
        if self.truth_draws < MIN_TRUTH_DRAWS:
            bad("truth_draws", f"must be at least {MIN_TRUTH_DRAWS}")

    @property
    def n_o(self) -> int:
        if self.overlap == "full":
            return self.n_y
        if self.overlap == "disjoint":
            return 0
        return int(self.n_overlap)

    @property
    def N(self) -> int:
        return self.n_y + self.n_z - self.n_o

    def to_dict(self) -> dict:
        return asdict(self)

    def digest_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "SimulationConfig":
        validate_config_dict(data)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SimulationConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(data)


def load_schema(name: str) -> dict:
    text = resources.files("gencov").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def validate_config_dict(data):
    """Schema validation; the error names the first failing field."""
    import jsonschema

    validator = jsonschema.Draft202012Validator(load_schema("simulation_config.schema.json"))
    errors = sorted(validator.iter_errors(data), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        e = errors[0]
        where = ".".join(str(x) for x in e.absolute_path)
        if not where and e.validator == "required":
            where = e.message.split("'")[1]
        elif not where and e.validator == "additionalProperties":
            where = e.message.split("'")[1]
        raise ConfigurationError(f"{where or '<root>'}: {e.message}")


def bundled_configs() -> dict:
    """Name -> path of every config shipped with the package."""
    root = resources.files("gencov").joinpath("configs")
    return {
        p.name[: -len(".json")]: Path(str(p))
        for p in sorted(root.iterdir(), key=lambda q: q.name)
        if p.name.endswith(".json")
    }


# --------------------------------------------------------------------------
# covariates and errors


def sample_ar1_design(n, p, rho, rng) -> np.ndarray:
    """Rows i.i.d. N(0, Sigma) with Sigma_jk = rho^|j-k|, by the AR(1) recursion."""
    if not abs(rho) < 1:
        raise ConfigurationError("rho must satisfy |rho| < 1")
    E = rng.standard_normal((n, p))
    if p == 0 or n == 0:
        return E
    c = math.sqrt(1.0 - rho * rho)
    E[:, 0] /= c  # so that x_1 = e_1
    return signal.lfilter([c], [1.0, -rho], E, axis=1)


def sample_synthetic_genotypes(n, p, maf, rho, rng, center=False) -> np.ndarray:
    """Allele counts in {0, 1, 2} from two thresholded AR(1) latent haplotypes."""
    if not 0 < maf <= 0.5:
        raise ConfigurationError("maf must lie in (0, 0.5]")
    t = normal_quantile(1.0 - maf)
    G = (sample_ar1_design(n, p, rho, rng) > t).astype(float)
    G += sample_ar1_design(n, p, rho, rng) > t
    if center:
        G -= G.mean(axis=0)
    return G


def sample_correlated_errors(n, corr, rng):
    """(eps, v): i.i.d. bivariate normal pairs, unit variances, correlation ``corr``."""
    if not abs(corr) < 1:
        raise ConfigurationError("error correlation must satisfy |corr| < 1")
    a = rng.standard_normal(n)
    b = rng.standard_normal(n)
    return a, corr * a + math.sqrt(1.0 - corr * corr) * b


def sample_design(config: SimulationConfig, n, rng, p=None):
    p = config.p if p is None else p
    if config.design == "gaussian-ar1":
        return sample_ar1_design(n, p, config.rho, rng)
    if config.design == "synthetic-genotype":
        return sample_synthetic_genotypes(n, p, config.maf, config.rho, rng)
    raise ConfigurationError(f"design: unknown design {config.design!r}")


def design_lags(config: SimulationConfig) -> np.ndarray:
    """Population covariance of columns j and j+k, for k = 0..p-1."""
    k = np.arange(config.p)
    if config.design == "gaussian-ar1":
        return config.rho ** k.astype(float)
    if config.design != "synthetic-genotype":
        raise ConfigurationError(f"design: unknown design {config.design!r}")
    maf = config.maf
    h2 = normal_quantile(1.0 - maf) ** 2

    def tail_cov(r):
        # P(a > t, b > t) - maf^2 for a standard bivariate normal with correlation r
        if r == 0.0:
            return 0.0
        f = lambda s: math.exp(-h2 / (1.0 + s)) / (2.0 * math.pi * math.sqrt(1.0 - s * s))
        return integrate.quad(f, 0.0, r, epsabs=1e-15, epsrel=1e-12)[0]

    out = np.zeros(config.p)
    out[0] = 2.0 * maf * (1.0 - maf)
    for j in range(1, config.p):
        r = config.rho**j
        if abs(r) < 1e-13:
            break
        out[j] = 2.0 * tail_cov(r)
    return out


def quadratic_form(beta, gamma, rho=None, lags=None) -> float:
    """beta' Sigma gamma for a Toeplitz Sigma given by ``lags`` (AR(1) if ``rho``)."""
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if lags is None:
        lags = float(rho) ** np.arange(len(beta), dtype=float)
    sb, sg = np.flatnonzero(beta), np.flatnonzero(gamma)
    if not len(sb) or not len(sg):
        return 0.0
    S = lags[np.abs(sb[:, None] - sg[None, :])]
    return float(beta[sb] @ S @ gamma[sg])


# --------------------------------------------------------------------------
# coefficients and outcomes


def make_coefficients(p, s, scheme="ones", positions="first-s", rng=None) -> np.ndarray:
    if not 0 <= s <= p:
        raise ConfigurationError(f"sparsity {s} must lie in [0, p={p}]")
    beta = np.zeros(p)
    if s == 0:
        return beta
    if positions == "first-s":
        support = np.arange(s)
    elif positions == "random":
        support = np.sort(rng.choice(p, size=s, replace=False))
    else:
        raise ConfigurationError(f"positions: unknown value {positions!r}")
    if scheme == "ones":
        beta[support] = 1.0
    elif scheme == "gaussian":
        beta[support] = rng.standard_normal(s)
    else:
        raise ConfigurationError(f"coef_scheme: unknown value {scheme!r}")
    return beta


def rescale_to_variance(beta, rho, target, lags=None) -> np.ndarray:
    """beta * sqrt(target / beta' Sigma beta) for the AR(1) (or given Toeplitz) Sigma."""
    q = quadratic_form(beta, beta, rho, lags)
    if not q > 0:
        raise DegenerateDataError("cannot rescale a coefficient vector with zero variance")
    return np.asarray(beta, dtype=float) * math.sqrt(target / q)


def _phi(t):
    return np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _std_normal_cdf(t):
    return special.ndtr(t)


def true_mean(model, X, beta, intercept=0.0) -> np.ndarray:
    """Population conditional mean f*(x) of a true outcome model."""
    X = np.asarray(X, dtype=float)
    if model in ("m1", "m2"):
        if X.shape[1] < 6:
            raise ConfigurationError("m1/m2 need at least 6 covariates")
        x1, x2, x3, x5, x6 = X[:, 0], X[:, 1], X[:, 2], X[:, 4], X[:, 5]
        if model == "m1":
            return -5.0 + 2.0 * np.sin(np.pi * x1 * x2) + 4.0 * (x3 - 0.5) ** 2 + 2.0 * x5 + x6
        return 2.0 * np.sin(np.pi / 2.0 * x1) * x2 + 2.0 * x3**3 / 5.0 + 2.0 * x5 + x6
    eta = intercept + X @ beta
    if model == "linear":
        return eta
    if model == "logistic":
        return expit(eta)
    if model == "probit":
        return _std_normal_cdf(eta)
    raise ConfigurationError(f"unknown outcome model {model!r}")


def generate_outcome(model, X, beta, noise, intercept=0.0) -> np.ndarray:
    """Draw outcomes. ``noise`` is Gaussian for linear/probit/m1/m2 and uniform(0,1) for logistic."""
    X = np.asarray(X, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (X.shape[0],):
        raise ConfigurationError("noise length must match the number of rows")
    if model in ("linear", "m1", "m2"):
        return true_mean(model, X, beta, intercept) + noise
    if model == "logistic":
        return (noise < expit(intercept + X @ beta)).astype(float)
    if model == "probit":
        return (intercept + X @ beta + noise > 0).astype(float)
    raise ConfigurationError(f"unknown outcome model {model!r}")


def case_control_subsample(X, y, n_cases, n_controls, rng, ids=None) -> Dataset:
    """Uniform subset with exactly ``n_cases`` cases and ``n_controls`` controls."""
    y = np.asarray(y, dtype=float)
    case_rows = np.flatnonzero(y == 1.0)
    control_rows = np.flatnonzero(y == 0.0)
    if len(case_rows) < n_cases or len(control_rows) < n_controls:
        raise GenerationError(
            f"pool has {len(case_rows)} cases and {len(control_rows)} controls; "
            f"need {n_cases} and {n_controls}"
        )
    rows = np.sort(
        np.concatenate(
            [rng.choice(case_rows, n_cases, replace=False), rng.choice(control_rows, n_controls, replace=False)]
        )
    )
    ids = [f"cc{i}" for i in range(len(y))] if ids is None else list(ids)
    return Dataset(
        ids=tuple(ids[i] for i in rows),
        covariates=np.asarray(X)[rows],
        outcome=y[rows],
        outcome_kind="binary",
    )


# --------------------------------------------------------------------------
# per-study quantities


def _stream(config: SimulationConfig, *key):
    return np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=key))


def replicate_seed(root_seed, i) -> int:
    ss = np.random.SeedSequence(root_seed, spawn_key=(0, int(i)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True, eq=False)
class StudyCoefficients:
    beta: np.ndarray
    gamma: np.ndarray
    lags: np.ndarray


def study_coefficients(config: SimulationConfig) -> StudyCoefficients:
    """True beta and gamma, drawn once per study and rescaled to the variance targets."""
    rng = _stream(config, 1)
    lags = design_lags(config)
    out = []
    for s, target in ((config.s_beta, config.target_var_f), (config.s_gamma, config.target_var_g)):
        b = make_coefficients(config.p, s, config.coef_scheme, config.positions, rng)
        out.append(rescale_to_variance(b, None, target, lags) if s else b)
    return StudyCoefficients(beta=out[0], gamma=out[1], lags=lags)


_GH = np.polynomial.hermite_e.hermegauss(201)


def _gauss_expect(fun, sd):
    """E[fun(t)] for t ~ N(0, sd^2) by Gauss-Hermite quadrature."""
    x, w = _GH
    return float(w @ fun(sd * x) / math.sqrt(2.0 * math.pi))


def population_projection(model, beta, intercept, config: SimulationConfig, lags=None) -> np.ndarray:
    """Slope of the population least-squares fit of f*(x) on x (Gaussian designs)."""
    if model == "linear":
        return np.asarray(beta, dtype=float).copy()
    if config.design != "gaussian-ar1":
        raise ConfigurationError(
            "design: linear projections of nonlinear models need the gaussian-ar1 design"
        )
    if model in ("m1", "m2"):
        out = np.zeros(config.p)
        out[:6] = M1_PROJECTION if model == "m1" else M2_PROJECTION
        return out
    lags = design_lags(config) if lags is None else lags
    sd = math.sqrt(quadratic_form(beta, beta, lags=lags))
    if sd == 0.0:
        return np.zeros(config.p)
    # Stein: Cov(h(x b), x) = Sigma b E[h'(x b)]
    if model == "probit":
        scale = float(_phi(np.array(intercept / math.sqrt(1 + sd * sd)))) / math.sqrt(1 + sd * sd)
    elif model == "logistic":
        scale = _gauss_expect(lambda t: expit(intercept + t) * (1.0 - expit(intercept + t)), sd)
    else:
        raise ConfigurationError(f"unknown outcome model {model!r}")
    return np.asarray(beta, dtype=float) * scale


def population_prevalence(config: SimulationConfig, coefs: StudyCoefficients) -> float:
    """P(y = 1) in the population for a binary true model of y."""
    b0 = config.intercept_f
    if config.design == "gaussian-ar1":
        sd = math.sqrt(quadratic_form(coefs.beta, coefs.beta, lags=coefs.lags))
        if config.model_f == "probit":
            return float(_std_normal_cdf(b0 / math.sqrt(1.0 + sd * sd)))
        if config.model_f == "logistic":
            return _gauss_expect(lambda t: expit(b0 + t), sd)
    elif config.model_f in BINARY_MODELS:
        rng = _stream(config, 3)
        X = sample_design(config, MIN_TRUTH_DRAWS // 10, rng)
        return float(np.mean(true_mean(config.model_f, X, coefs.beta, b0)))
    raise ConfigurationError(f"model_f: {config.model_f!r} is not a binary model")


@dataclass(frozen=True)
class Truth:
    value: float
    provenance: str  # analytic | monte-carlo
    se: float = 0.0
    draws: int = 0
    target: str = "genetic-covariance"  # or narrow-sense


def _low_dim_moments(config, coefs):
    """Covariance of (x_1..x_6, x beta, x gamma) under the Gaussian design."""
    p = config.p
    k = min(6, p)
    L = np.zeros((k + 2, p))
    L[np.arange(k), np.arange(k)] = 1.0
    L[k], L[k + 1] = coefs.beta, coefs.gamma
    S = linalg.toeplitz(coefs.lags)
    return k, L @ S @ L.T


def _mc_pairs(config, coefs, draws, rng):
    """Yields chunks of (f*, g*) evaluated on population draws."""
    chunk = 100_000
    if config.design == "gaussian-ar1":
        k, M = _low_dim_moments(config, coefs)
        w, V = np.linalg.eigh(M)
        root = V * np.sqrt(np.clip(w, 0.0, None))
        for start in range(0, draws, chunk):
            U = rng.standard_normal((min(chunk, draws - start), k + 2)) @ root.T
            yield (
                _mean_from_low_dim(config.model_f, U, k, config.intercept_f),
                _mean_from_low_dim(config.model_g, U, k + 1, config.intercept_g),
            )
    else:
        sb = np.flatnonzero(coefs.beta)
        sg = np.flatnonzero(coefs.gamma)
        top = int(max(sb.max(initial=0), sg.max(initial=0))) + 1
        for start in range(0, draws, chunk):
            X = sample_design(config, min(chunk, draws - start), rng, p=top)
            yield (
                true_mean(config.model_f, X, coefs.beta[:top], config.intercept_f),
                true_mean(config.model_g, X, coefs.gamma[:top], config.intercept_g),
            )


def _mean_from_low_dim(model, U, col, intercept):
    # columns of U: x_1..x_6, x beta, x gamma
    if model in ("m1", "m2"):
        return true_mean(model, U[:, :6], None)
    return true_mean(model, U[:, [col]], np.ones(1), intercept)


def truth_details(config: SimulationConfig, coefs: StudyCoefficients | None = None, draws=None) -> Truth:
    """Target of the coverage study.

    Both working models linear: the narrow-sense covariance of the population
    projections (analytic). Both true models linear: beta' Sigma gamma.
    Otherwise Cov(f*(x), g*(x)) by Monte Carlo with a batch-means SE.
    """
    coefs = coefs or study_coefficients(config)
    if config.fit_f == "linear" and config.fit_g == "linear":
        bp = population_projection(config.model_f, coefs.beta, config.intercept_f, config, coefs.lags)
        gp = population_projection(config.model_g, coefs.gamma, config.intercept_g, config, coefs.lags)
        target = "genetic-covariance" if "linear" in (config.model_f, config.model_g) else "narrow-sense"
        return Truth(quadratic_form(bp, gp, lags=coefs.lags), "analytic", target=target)
    if config.model_f == "linear" and config.model_g == "linear":
        return Truth(quadratic_form(coefs.beta, coefs.gamma, lags=coefs.lags), "analytic")
    return monte_carlo_truth(config, coefs, draws or config.truth_draws)


def monte_carlo_truth(config, coefs, draws) -> Truth:
    if draws < MIN_TRUTH_DRAWS:
        raise ConfigurationError(f"truth_draws must be at least {MIN_TRUTH_DRAWS}")
    rng = _stream(config, 2, int(draws))
    fs, gs = zip(*_mc_pairs(config, coefs, draws, rng))
    f = np.concatenate(fs)
    g = np.concatenate(gs)
    per = np.array_split(np.arange(draws), _BATCHES)
    covs = np.array([np.cov(f[b], g[b])[0, 1] for b in per])
    return Truth(
        value=float(covs.mean()),
        provenance="monte-carlo",
        se=float(covs.std(ddof=1) / math.sqrt(_BATCHES)),
        draws=int(draws),
    )


def truth_value(config: SimulationConfig):
    """(truth, provenance)."""
    t = truth_details(config)
    return t.value, t.provenance


# --------------------------------------------------------------------------
# replicates


def generate_replicate(config: SimulationConfig, coefs: StudyCoefficients, rng, prevalence=None):
    """One simulated pair of studies (ds_y, ds_z)."""
    if config.estimator == "case-control":
        return _generate_case_control(config, coefs, rng)
    N, n_o = config.N, config.n_o
    X = sample_design(config, N, rng)
    eps, v = sample_correlated_errors(N, config.error_corr, rng)
    y_noise = rng.random(N) if config.model_f == "logistic" else eps
    z_noise = rng.random(N) if config.model_g == "logistic" else v
    y = generate_outcome(config.model_f, X, coefs.beta, y_noise, config.intercept_f)
    z = generate_outcome(config.model_g, X, coefs.gamma, z_noise, config.intercept_g)
    ids = np.array([f"s{i}" for i in range(N)])
    rows_y = np.arange(config.n_y)
    rows_z = np.concatenate([np.arange(n_o), np.arange(config.n_y, N)])
    kind_y = "binary" if config.model_f in BINARY_MODELS else "continuous"
    kind_z = "binary" if config.model_g in BINARY_MODELS else "continuous"
    ds_y = Dataset(ids=tuple(ids[rows_y]), covariates=X[rows_y], outcome=y[rows_y], outcome_kind=kind_y)
    ds_z = Dataset(ids=tuple(ids[rows_z]), covariates=X[rows_z], outcome=z[rows_z], outcome_kind=kind_z)
    return ds_y, ds_z


def _generate_case_control(config, coefs, rng, max_attempts=6):
    n_cases = int(round(config.n_y * config.case_fraction))
    n_controls = config.n_y - n_cases
    pool = 4 * config.n_y
    for _ in range(max_attempts):
        X = sample_design(config, pool, rng)
        eps, _ = sample_correlated_errors(pool, config.error_corr, rng)
        noise = rng.random(pool) if config.model_f == "logistic" else eps
        y = generate_outcome(config.model_f, X, coefs.beta, noise, config.intercept_f)
        if np.count_nonzero(y == 1) >= n_cases and np.count_nonzero(y == 0) >= n_controls:
            ds_y = case_control_subsample(X, y, n_cases, n_controls, rng)
            break
        pool *= 2
    else:
        raise GenerationError(
            f"no pool with {n_cases} cases and {n_controls} controls after {max_attempts} attempts"
        )
    Xz = sample_design(config, config.n_z, rng)
    _, v = sample_correlated_errors(config.n_z, config.error_corr, rng)
    z_noise = rng.random(config.n_z) if config.model_g == "logistic" else v
    z = generate_outcome(config.model_g, Xz, coefs.gamma, z_noise, config.intercept_g)
    kind_z = "binary" if config.model_g in BINARY_MODELS else "continuous"
    ds_z = Dataset(
        ids=tuple(f"z{i}" for i in range(config.n_z)), covariates=Xz, outcome=z, outcome_kind=kind_z
    )
    return ds_y, ds_z


def run_replicate(config: SimulationConfig, seed, coefs=None, prevalence=None):
    """Generate and analyse one replicate; returns the estimator report."""
    coefs = coefs or study_coefficients(config)
    rng = np.random.default_rng(seed)
    ds_y, ds_z = generate_replicate(config, coefs, rng)
    fit = FitConfig(cv_folds=config.cv_folds, seed=int(seed))
    if config.estimator == "case-control":
        if prevalence is None:
            prevalence = population_prevalence(config, coefs)
        return run_case_control(
            ds_y, ds_z, prevalence, config.fit_g, fit, config.alpha, config.case_fraction
        )
    narrow = config.fit_f == "linear" and config.fit_g == "linear"
    if config.estimator == "cross-fitted":
        return run_cross_fitted(
            ds_y, ds_z, (config.fit_f, config.fit_g), fit, config.alpha, split_seed=int(seed), narrow_sense=narrow
        )
    if config.estimator != "pipeline":
        raise ConfigurationError(f"estimator: unknown value {config.estimator!r}")
    return run_pipeline(ds_y, ds_z, config.fit_f, config.fit_g, fit, config.alpha, narrow_sense=narrow)


RECORD_FIELDS = (
    "replicate", "seed", "estimate", "se", "ci_lower", "ci_upper", "covered",
    "lambda_f", "lambda_g", "support_f", "support_g",
)


def _replicate_task(args):
    cfg_dict, i, truth, prevalence = args
    config = SimulationConfig(**cfg_dict)
    seed = replicate_seed(config.seed, i)
    try:
        r = run_replicate(config, seed, prevalence=prevalence)
    except GencovError as e:
        err = type(e)(f"replicate {i} (seed {seed}) failed: {e}")
        err.replicate_seed = seed
        raise err from e
    return {
        "replicate": i,
        "seed": seed,
        "estimate": r.estimate,
        "se": r.se,
        "ci_lower": r.ci_lower,
        "ci_upper": r.ci_upper,
        "covered": bool(r.ci_lower <= truth <= r.ci_upper),
        "lambda_f": r.lambda_f,
        "lambda_g": r.lambda_g,
        "support_f": r.support_f,
        "support_g": r.support_g,
    }


@dataclass(frozen=True)
class CoverageReport:
    empirical_coverage: float
    mean_se: float
    mean_estimate: float
    sd_estimate: float
    truth: float
    truth_provenance: str
    truth_se: float
    truth_draws: int
    truth_target: str
    replications: int
    config: dict
    prevalence: float | None = None
    records: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def default_workers() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover
        return max(1, os.cpu_count() or 1)


def run_coverage_study(config: SimulationConfig, threads: int | None = None) -> CoverageReport:
    """Run ``config.replications`` seeded replicates and summarise coverage.

    Records are ordered by replicate index, so the report does not depend on
    the number of workers.
    """
    coefs = study_coefficients(config)
    truth = truth_details(config, coefs)
    prevalence = population_prevalence(config, coefs) if config.estimator == "case-control" else None
    workers = default_workers() if threads is None else max(1, int(threads))
    tasks = [(config.to_dict(), i, truth.value, prevalence) for i in range(config.replications)]
    if workers == 1 or config.replications == 1:
        records = [_replicate_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_replicate_task, tasks, chunksize=1))
    records.sort(key=lambda r: r["replicate"])
    se = np.array([r["se"] for r in records])
    est = np.array([r["estimate"] for r in records])
    mean_se = float(se.mean())

    if truth.provenance == "monte-carlo":
        draws = truth.draws
        while truth.se > mean_se / 20.0:
            draws *= 4
            if draws > MAX_TRUTH_DRAWS:
                raise OraclePrecisionError(
                    f"Monte Carlo truth SE {truth.se:.3g} exceeds mean SE / 20 = {mean_se / 20:.3g}"
                )
            truth = monte_carlo_truth(config, coefs, draws)
        for r in records:
            r["covered"] = bool(r["ci_lower"] <= truth.value <= r["ci_upper"])

    covered = np.array([r["covered"] for r in records])
    return CoverageReport(
        empirical_coverage=float(covered.mean()),
        mean_se=mean_se,
        mean_estimate=float(est.mean()),
        sd_estimate=float(est.std(ddof=1)) if len(est) > 1 else 0.0,
        truth=truth.value,
        truth_provenance=truth.provenance,
        truth_se=truth.se,
        truth_draws=truth.draws,
        truth_target=truth.target,
        replications=config.replications,
        config=config.to_dict(),
        prevalence=prevalence,
        records=records,
    )


def write_replicates_csv(report: CoverageReport, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "estimate", "se", "ci_lower", "ci_upper", "covered"])
        for r in report.records:
            w.writerow(
                [r["seed"], repr(r["estimate"]), repr(r["se"]), repr(r["ci_lower"]),
                 repr(r["ci_upper"]), int(r["covered"])]
            )


def config_field_names():
    return [f.name for f in fields(SimulationConfig)]
