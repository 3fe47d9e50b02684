"""Command-line front end: ``gencov estimate | case-control | simulate``.

Reports go to stdout (or ``--out``) as JSON; diagnostics go to stderr. Exit
codes: 0 success, 2 data error, 3 convergence failure, 64 usage error,
65 invalid configuration, 70 internal/generation failure, 74 I/O error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .casecontrol import run_case_control
from .data import GlmFamily, load_dataset
from .errors import ConfigurationError, ConvergenceError, DataError, GencovError
from .estimator import run_cross_fitted, run_pipeline
from .glm import FitConfig
from .simulation import SimulationConfig, default_workers, run_coverage_study, write_replicates_csv

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONVERGENCE = 3
EXIT_USAGE = 64
EXIT_CONFIG = 65
EXIT_SOFTWARE = 70
EXIT_IO = 74

# options that do not affect results and are left out of the recorded command line
_VOLATILE = {"--out": True, "--threads": True}

log = logging.getLogger("gencov")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _probability(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _study_args(p, family_y=True):
    p.add_argument("--y-file", required=True, help="CSV of the y study")
    p.add_argument("--z-file", required=True, help="CSV of the z study")
    p.add_argument("--id-col", default="id", help="sample id column (default: id)")
    p.add_argument("--y-col", default="y", help="outcome column in the y file (default: y)")
    p.add_argument("--z-col", default="z", help="outcome column in the z file (default: z)")
    if family_y:
        p.add_argument("--family-y", choices=["linear", "logistic"], default="linear")
    p.add_argument("--family-z", choices=["linear", "logistic"], default="linear")
    p.add_argument("--alpha", type=_probability, default=0.05)
    p.add_argument("--seed", type=_seed, default=0, help="seed for CV folds and splits")
    p.add_argument("--cv-folds", type=_positive_int, default=10)
    p.add_argument("--selection-rule", choices=["min-cv-error", "one-se"], default="min-cv-error")
    p.add_argument("--penalize-intercept", action="store_true")
    p.add_argument("--threads", type=_positive_int, default=None, help="worker cap")
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gencov", description="Genetic covariance estimation and inference.")
    parser.add_argument("--version", action="version", version=f"gencov {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="covariance estimate from two study files")
    _study_args(est)
    est.add_argument("--narrow-sense", action="store_true", help="force linear working models")
    est.add_argument("--cross-fit", action="store_true", help="two-fold cross-fitted estimate")
    est.add_argument(
        "--standardized", action="store_true", help="divide estimate, se and CI by sqrt(Var(Y) Var(Z))"
    )

    cc = sub.add_parser("case-control", help="weighted estimate for a case-control y study")
    _study_args(cc, family_y=False)
    cc.add_argument("--prevalence", type=_probability, required=True, help="population P(y = 1)")
    cc.add_argument(
        "--case-fraction", type=_probability, default=None, help="case fraction (default: observed)"
    )

    sim = sub.add_parser("simulate", help="Monte Carlo coverage study")
    sim.add_argument("--config", required=True, help="SimulationConfig JSON file")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--threads", type=_positive_int, default=None, help="worker cap")
    return parser


# --------------------------------------------------------------------------
# manifest


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _canonical_argv(argv):
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
            continue
        key = a.split("=", 1)[0]
        if key in _VOLATILE:
            skip = "=" not in a
            continue
        out.append(a)
    return out


def _manifest(argv, config: dict, seed, inputs, started, t0):
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    return {
        "command_line": ["gencov", *_canonical_argv(argv)],
        "config_digest": digest,
        "seed": seed,
        "version": __version__,
        "wall_clock": {"started": started, "elapsed_seconds": round(time.perf_counter() - t0, 3)},
        "input_digests": {str(p): _sha256_file(p) for p in inputs},
    }


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(text, out):
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(out).write_text(text, encoding="utf-8")


# --------------------------------------------------------------------------
# commands


def _fit_config(args) -> FitConfig:
    return FitConfig(
        cv_folds=args.cv_folds,
        selection_rule=args.selection_rule,
        penalize_intercept=args.penalize_intercept,
        seed=args.seed,
    )


def _resolved(args, keys):
    return {k: getattr(args, k) for k in keys}


def cmd_estimate(args, argv, started, t0) -> int:
    fam_y = "linear" if args.narrow_sense else args.family_y
    fam_z = "linear" if args.narrow_sense else args.family_z
    ds_y = load_dataset(args.y_file, args.id_col, args.y_col, _kind(fam_y))
    ds_z = load_dataset(args.z_file, args.id_col, args.z_col, _kind(fam_z))
    fit = _fit_config(args)
    if args.cross_fit:
        report = run_cross_fitted(
            ds_y, ds_z, (fam_y, fam_z), fit, args.alpha, split_seed=args.seed, narrow_sense=args.narrow_sense
        )
    else:
        report = run_pipeline(ds_y, ds_z, fam_y, fam_z, fit, args.alpha, narrow_sense=args.narrow_sense)
    if args.standardized:
        report = report.standardize(_var(ds_y.outcome), _var(ds_z.outcome))
    out = report.to_dict()
    cfg = _resolved(
        args,
        ("family_y", "family_z", "alpha", "seed", "cv_folds", "selection_rule", "penalize_intercept",
         "narrow_sense", "cross_fit", "standardized", "id_col", "y_col", "z_col"),
    )
    out["manifest"] = _manifest(argv, cfg, args.seed, [args.y_file, args.z_file], started, t0)
    _emit(_dump(out), args.out)
    return EXIT_OK


def cmd_case_control(args, argv, started, t0) -> int:
    ds_y = load_dataset(args.y_file, args.id_col, args.y_col, "binary")
    ds_z = load_dataset(args.z_file, args.id_col, args.z_col, _kind(args.family_z))
    report = run_case_control(
        ds_y, ds_z, args.prevalence, args.family_z, _fit_config(args), args.alpha, args.case_fraction
    )
    out = report.to_dict()
    cfg = _resolved(
        args,
        ("family_z", "alpha", "seed", "cv_folds", "selection_rule", "penalize_intercept", "prevalence",
         "case_fraction", "id_col", "y_col", "z_col"),
    )
    out["manifest"] = _manifest(argv, cfg, args.seed, [args.y_file, args.z_file], started, t0)
    _emit(_dump(out), args.out)
    return EXIT_OK


def cmd_simulate(args, argv, started, t0) -> int:
    config = SimulationConfig.load(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = args.threads or default_workers()
    log.info("running %d replicates with %d workers", config.replications, threads)
    report = run_coverage_study(config, threads=threads)
    out = report.to_dict()
    out["manifest"] = _manifest(argv, config.to_dict(), config.seed, [args.config], started, t0)
    (out_dir / "report.json").write_text(_dump(out), encoding="utf-8")
    write_replicates_csv(report, out_dir / "replicates.csv")
    print(
        f"coverage={report.empirical_coverage:.4f} mean_se={report.mean_se:.4g} "
        f"truth={report.truth:.6g} replications={report.replications}"
    )
    return EXIT_OK


def _kind(family):
    return "binary" if GlmFamily.parse(family) is GlmFamily.LOGISTIC else "continuous"


def _var(v):
    return float(np.var(v, ddof=1))


_COMMANDS = {"estimate": cmd_estimate, "case-control": cmd_case_control, "simulate": cmd_simulate}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    logging.captureWarnings(True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _COMMANDS[args.command](args, argv, started, t0)
    except ConvergenceError as e:
        log.error("convergence failure: %s", e)
        return EXIT_CONVERGENCE
    except DataError as e:
        log.error("data error: %s", e)
        return EXIT_DATA
    except ConfigurationError as e:
        log.error("invalid configuration: %s", e)
        return EXIT_CONFIG
    except GencovError as e:
        log.error("%s: %s", type(e).__name__, e)
        return EXIT_SOFTWARE
    except OSError as e:
        log.error("I/O error: %s", e)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
