"""Acceptance suite: coverage reproduction of the bundled studies plus fast
algebraic, solver and generator checks. Each test prints one pass/fail line.

The coverage studies run every bundled config end to end through the CLI
(300 replicates each), so this module takes a few hours on a single core.
"""

import json
import math

import numpy as np
import pytest

from gencov.casecontrol import CaseControlSpec, estimate_weighted
from gencov.cli import main
from gencov.data import GlmFamily, IndexSets
from gencov.estimator import EstimatorInputs, estimate_I, normal_quantile, report_from_inputs, variance_and_ci
from gencov.glm import FitConfig, FittedGlm, fit_at_lambda, lambda_grid
from gencov.simulation import (
    bundled_configs,
    make_coefficients,
    rescale_to_variance,
    sample_ar1_design,
    sample_correlated_errors,
    generate_outcome,
)
from oracles import kkt_violation, lasso_objective, prox_gradient_lasso

CONFIGS = bundled_configs()


class _Studies:
    """Runs each bundled config once per thread count, on demand."""

    def __init__(self, root):
        self.root = root
        self.cache = {}

    def run(self, name, threads=1):
        key = (name, threads)
        if key not in self.cache:
            out = self.root / f"{name}-t{threads}"
            code = main(["simulate", "--config", str(CONFIGS[name]), "--out", str(out), "--threads", str(threads)])
            assert code == 0, f"simulate {name} exited with {code}"
            self.cache[key] = out
        return self.cache[key]

    def report(self, name, threads=1):
        return json.loads((self.run(name, threads) / "report.json").read_text())


@pytest.fixture(scope="session")
def studies(tmp_path_factory):
    return _Studies(tmp_path_factory.mktemp("acceptance"))


def _within(value, target, tol):
    return abs(value - target) <= tol


def _cov_line(r):
    return f"coverage={r['empirical_coverage']:.4f} mean_se={r['mean_se']:.4f} truth={r['truth']:.5g}"


# --------------------------------------------------------------------------
# coverage reproductions


def test_criterion_1_linear_table(studies, criterion_log):
    r = studies.report("table1_800_800_s5_s5_overlap")
    cov, se = r["empirical_coverage"], r["mean_se"]
    ok = _within(cov, 0.917, 0.05) and 0.88 <= cov <= 0.98 and _within(se, 0.228, 0.2 * 0.228)
    criterion_log(1, ok, f"linear/linear {_cov_line(r)} (target coverage 0.917+-0.05 in [0.88,0.98], SE 0.228+-20%)")
    assert ok


def test_criterion_2_logistic_table(studies, criterion_log):
    r = studies.report("table2_logistic_800_800_s5_s5_overlap")
    ok = _within(r["empirical_coverage"], 0.930, 0.05)
    criterion_log(2, ok, f"logistic/logistic {_cov_line(r)} (target 0.930+-0.05)")
    assert ok


def test_criterion_3_probit_robustness(studies, criterion_log):
    lin = studies.report("table3_probit_linearfit_800_800_s10_s2_overlap")
    logi = studies.report("table3_probit_logisticfit_800_800_s10_s2_overlap")
    ok_lin = _within(lin["empirical_coverage"], 0.953, 0.05)
    ok_log = _within(logi["empirical_coverage"], 0.923, 0.05)
    ok = ok_lin and ok_log
    criterion_log(
        3, ok,
        f"probit truth, linear fit {_cov_line(lin)} (target 0.953+-0.05); "
        f"logistic fit {_cov_line(logi)} (target 0.923+-0.05)",
    )
    assert ok


def test_criterion_4_narrow_sense_m2(studies, criterion_log):
    r = studies.report("table4_m2_m2_800_800_overlap")
    ok_cov = _within(r["empirical_coverage"], 0.957, 0.06)
    ok_truth = _within(r["truth"], 11.1, 0.02 * 11.1)
    ok = ok_cov and ok_truth and r["truth_provenance"] == "analytic"
    criterion_log(4, ok, f"(m2,m2) narrow-sense {_cov_line(r)} (target 0.957+-0.06; truth 11.1+-2%)")
    assert ok


def test_criterion_5_case_control(studies, criterion_log):
    r = studies.report("table5_casecontrol_800_800_s5_s5")
    ok = _within(r["empirical_coverage"], 0.950, 0.05)
    criterion_log(5, ok, f"case-control {_cov_line(r)} prevalence={r['prevalence']:.4f} (target 0.950+-0.05)")
    assert ok


def test_criterion_6_cross_fitting(studies, criterion_log):
    r = studies.report("table6_crossfit_800_800_s5_s5_overlap")
    ok = _within(r["empirical_coverage"], 0.9233, 0.05)
    criterion_log(6, ok, f"cross-fitted {_cov_line(r)} (target 0.9233+-0.05)")
    assert ok


# --------------------------------------------------------------------------
# algebraic identities


def _model(rng, p, family):
    b = rng.normal(size=p) * (rng.random(p) < 0.7)
    return FittedGlm(
        intercept=float(rng.normal()), coefficients=b, family=GlmFamily.parse(family), lam=0.0,
        x_center=np.zeros(p), x_scale=np.ones(p),
    )


def _instance(rng, regime):
    n_y, n_z, p = (int(v) for v in rng.integers(2, 25, 3))
    if regime == "full":
        n_z = n_y
        in_y = in_z = np.ones(n_y, bool)
    elif regime == "disjoint":
        in_y = np.r_[np.ones(n_y), np.zeros(n_z)].astype(bool)
        in_z = ~in_y
    else:
        n_o = int(rng.integers(1, min(n_y, n_z) + 1))
        N = n_y + n_z - n_o
        in_y = np.arange(N) < n_y
        in_z = np.arange(N) >= n_y - n_o
        perm = rng.permutation(N)
        in_y, in_z = in_y[perm], in_z[perm]
    idx = IndexSets.from_masks(in_y, in_z)
    fam_f, fam_g = rng.choice(["linear", "logistic"], 2)
    X = rng.standard_normal((idx.N, p)) * 10.0 ** rng.uniform(-2, 2)
    y = rng.standard_normal(idx.n_y) * 3 if fam_f == "linear" else (rng.random(idx.n_y) < 0.5).astype(float)
    z = rng.standard_normal(idx.n_z) * 3 if fam_g == "linear" else (rng.random(idx.n_z) < 0.5).astype(float)
    return EstimatorInputs(X, idx, _model(rng, p, fam_f), _model(rng, p, fam_g), y, z)


def test_criterion_7_algebraic_identities(criterion_log):
    rng = np.random.default_rng(20240607)
    regimes = ("full", "disjoint", "partial")
    worst_sum = 0.0
    for k in range(1000):
        inputs = _instance(rng, regimes[k % 3])
        I, d, _, _ = estimate_I(inputs)
        scale = max(abs(I), np.abs(d).sum(), 1e-300)
        worst_sum = max(worst_sum, abs(d.sum() - I) / scale)

    # pi1 = p1: weighted report equals the unweighted one
    worst_red = 0.0
    for k in range(1000):
        n_y, n_z, p = int(rng.integers(4, 25)), int(rng.integers(2, 25)), int(rng.integers(1, 8))
        idx = IndexSets.from_masks(np.r_[np.ones(n_y), np.zeros(n_z)].astype(bool), np.r_[np.zeros(n_y), np.ones(n_z)].astype(bool))
        y = np.r_[1.0, 1.0, 0.0, 0.0, (rng.random(n_y - 4) < 0.5).astype(float)]
        X = rng.standard_normal((idx.N, p))
        inputs = EstimatorInputs(X, idx, _model(rng, p, "logistic"), _model(rng, p, "linear"), y, rng.standard_normal(n_z))
        p1 = float(rng.uniform(0.01, 0.99))
        w = estimate_weighted(inputs, CaseControlSpec(p1, p1))
        u = report_from_inputs(inputs, 0.05, "general")
        for a, b in ((w.estimate, u.estimate), (w.se, u.se), (w.ci_lower, u.ci_lower), (w.ci_upper, u.ci_upper)):
            worst_red = max(worst_red, abs(a - b) / max(1.0, abs(b)))

    # intercept-only fits give a zero estimate
    worst_null = 0.0
    for k in range(50):
        N = int(rng.integers(10, 40))
        X = rng.standard_normal((N, 4))
        y, z = rng.standard_normal(N) + 3, rng.standard_normal(N) - 1
        mf = fit_at_lambda(X, y, "linear", 1.01 * lambda_grid(X, y, "linear")[0])
        mg = fit_at_lambda(X, z, "linear", 1.01 * lambda_grid(X, z, "linear")[0])
        idx = IndexSets.from_masks(np.ones(N, bool), np.ones(N, bool))
        worst_null = max(worst_null, abs(estimate_I(EstimatorInputs(X, idx, mf, mg, y, z))[0]))

    # CI geometry
    worst_ci = 0.0
    for k in range(200):
        inputs = _instance(rng, regimes[k % 3])
        if inputs.index.N < 2:
            continue
        I, d, _, _ = estimate_I(inputs)
        alpha = float(rng.uniform(0.001, 0.5))
        se, (lo, hi) = variance_and_ci(I, d, inputs.index.N, alpha)
        zq = normal_quantile(1 - alpha / 2)
        s_ref = math.sqrt(np.sum((d - I / inputs.index.N) ** 2))
        scale = max(1.0, abs(I), se)
        worst_ci = max(
            worst_ci, abs(hi - lo - 2 * zq * se) / scale, abs((hi + lo) / 2 - I) / scale, abs(se - s_ref) / max(s_ref, 1e-300)
        )

    ok = worst_sum <= 1e-10 and worst_red <= 1e-10 and worst_null <= 1e-10 and worst_ci <= 1e-10
    criterion_log(
        7, ok,
        f"sum-delta rel err {worst_sum:.2e}, pi1=p1 reduction err {worst_red:.2e}, "
        f"intercept-only |I| {worst_null:.2e}, CI geometry err {worst_ci:.2e} (all <= 1e-10; 1000 instances for the sum and reduction checks)",
    )
    assert ok


# --------------------------------------------------------------------------
# solver oracle


def test_criterion_8_solver_oracle(criterion_log):
    rng = np.random.default_rng(8080)
    cfg = FitConfig()
    worst_gap = worst_kkt = 0.0
    for k in range(100):
        family = "linear" if k % 2 == 0 else "logistic"
        n, p = int(rng.integers(15, 51)), int(rng.integers(1, 11))
        X = rng.standard_normal((n, p)) * rng.uniform(0.3, 3.0, p) + rng.uniform(-1, 1, p)
        b = rng.normal(size=p) * (rng.random(p) < 0.5)
        if family == "linear":
            y = 0.5 + X @ b + rng.standard_normal(n)
        else:
            y = (rng.random(n) < 1 / (1 + np.exp(-(X @ b) * 0.7))).astype(float)
            if y.min() == y.max():
                y[0] = 1 - y[0]
        lam = float(lambda_grid(X, y, family)[0] * rng.uniform(0.05, 0.9))
        m = fit_at_lambda(X, y, family, lam, config=cfg)
        b0, bb = prox_gradient_lasso(X, y, family, lam)
        gap = lasso_objective(X, y, family, m.intercept, m.coefficients, lam) - lasso_objective(X, y, family, b0, bb, lam)
        worst_gap = max(worst_gap, gap)
        worst_kkt = max(worst_kkt, kkt_violation(X, y, family, m))
    ok = worst_gap <= 1e-8 and worst_kkt <= 10 * cfg.cd_tolerance
    criterion_log(
        8, ok,
        f"max objective gap vs proximal gradient {worst_gap:.2e} (<= 1e-8), "
        f"max KKT violation {worst_kkt:.2e} (<= {10 * cfg.cd_tolerance:.0e}); 100 instances",
    )
    assert ok


# --------------------------------------------------------------------------
# generators


def test_criterion_9_generator_statistics(criterion_log):
    rng = np.random.default_rng(99)
    X = sample_ar1_design(100_000, 4, 0.6, rng)
    S = np.cov(X, rowvar=False)
    ar1_err = float(np.max(np.abs(S - 0.6 ** np.abs(np.subtract.outer(np.arange(4), np.arange(4))))))

    e, v = sample_correlated_errors(100_000, 0.4, rng)
    corr_err = abs(float(np.corrcoef(e, v)[0, 1]) - 0.4)

    var_err = {}
    Xb = sample_ar1_design(100_000, 20, 0.6, rng)
    for target in (4.0, 6.25):
        beta = rescale_to_variance(make_coefficients(20, 5), 0.6, target)
        var_err[target] = abs(float((Xb @ beta).var()) - target)

    Xp = sample_ar1_design(20_000, 10, 0.6, rng)
    bp = rescale_to_variance(make_coefficients(10, 5), 0.6, 4.0)
    yp = generate_outcome("probit", Xp, bp, rng.standard_normal(20_000))
    bal_err = abs(float(yp.mean()) - 0.5)

    # the 6.25 tolerance scales the 4.0 one proportionally
    ok = ar1_err <= 0.02 and corr_err <= 0.01 and var_err[4.0] <= 0.05 and var_err[6.25] <= 0.05 * 6.25 / 4 and bal_err <= 0.01
    criterion_log(
        9, ok,
        f"AR(1) cov err {ar1_err:.4f} (<=0.02), error corr err {corr_err:.4f} (<=0.01), "
        f"Var(x beta)=4 err {var_err[4.0]:.4f} (<=0.05), =6.25 err {var_err[6.25]:.4f} (<=0.078), "
        f"probit balance err {bal_err:.4f} (<=0.01)",
    )
    assert ok


# --------------------------------------------------------------------------
# determinism


def _strip_clock(text):
    d = json.loads(text)
    d["manifest"].pop("wall_clock")
    return json.dumps(d, sort_keys=True)


def test_criterion_10_determinism(studies, criterion_log):
    mismatched = []
    for name in CONFIGS:
        a, b = studies.run(name, threads=1), studies.run(name, threads=2)
        same_report = _strip_clock((a / "report.json").read_text()) == _strip_clock((b / "report.json").read_text())
        same_csv = (a / "replicates.csv").read_bytes() == (b / "replicates.csv").read_bytes()
        if not (same_report and same_csv):
            mismatched.append(name)
    ok = not mismatched
    criterion_log(
        10, ok,
        f"{len(CONFIGS) - len(mismatched)}/{len(CONFIGS)} bundled configs byte-identical across --threads 1 and 2"
        + (f"; mismatched: {', '.join(mismatched)}" if mismatched else ""),
    )
    assert ok
