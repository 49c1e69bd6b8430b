"""Command-line interface: ``estimate``, ``simulate`` and ``sensitivity``.

Exit codes: 0 success, 2 input or configuration error, 3 non-convergence
(a report with diagnostics is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from sorcall import __version__
from sorcall.equations import (
    build_cc,
    build_cor,
    build_corx,
    build_dr,
    build_ipw,
    build_multicall_dr,
    build_multicall_ipw,
    build_multicall_reg,
    build_reg,
    impute_unsure,
    pc_estimator,
)
from sorcall.errors import ConfigurationError, DataError, IdentificationError, StudyFailure
from sorcall.io import Manifest, covariate_law, read_census, read_manifest, read_survey, write_report
from sorcall.model import SurveyDataset
from sorcall.solver import SolverOptions, bootstrap, confidence_interval, fit

log = logging.getLogger("sorcall")

DEFAULT_SEED = 20250101
EXIT_OK, EXIT_INPUT, EXIT_NOCONV = 0, 2, 3
METHODS = ("ipw", "reg", "dr", "cc", "mar", "cor", "corx", "pc")


class InputError(Exception):
    """Wraps anything that should map to exit code 2."""


def _parse_grid(text: str) -> list[float]:
    parts = [p for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise InputError(f"invalid grid {text!r}") from None


# --------------------------------------------------------------------------
# estimate
# --------------------------------------------------------------------------


def _load(args) -> tuple[Manifest, SurveyDataset, object]:
    manifest = read_manifest(args.manifest)
    sf = read_survey(args.data, manifest)
    data = sf.data
    if sf.unsure is not None and sf.unsure.any():
        X = np.column_stack([np.ones(data.y.shape[0]), data.respondent_covariates()])
        y = impute_unsure(X, data.y, sf.unsure, data.weight[data.respondent],
                          stochastic=args.stochastic_impute,
                          rng=np.random.default_rng(args.seed))
        data = SurveyDataset(data.weight, data.r, y, data.x_missing, data.x_observed,
                             data.missing_names, data.observed_names)
    dist = None
    if args.census:
        dist = covariate_law(read_census(args.census), data, manifest)
    if args.calls != "K":
        k = int(args.calls)
        data = data.collapse_calls(k)
    return manifest, data, dist


def _builder(method: str, manifest: Manifest, data: SurveyDataset, dist, estimand, delta):
    models = manifest.working_models()
    multi = data.K >= 3
    if method in ("ipw", "reg", "dr", "mar") and dist is None:
        raise InputError(f"method {method} needs --census")
    if method == "ipw" or method == "mar":
        if multi and method == "ipw" and not delta:
            return lambda d: build_multicall_ipw(d, models, estimand, dist)
        return lambda d: build_ipw(d, models, estimand, dist, delta=delta)
    if method == "reg":
        if multi and not delta:
            return lambda d: build_multicall_reg(d, models, estimand, dist)
        return lambda d: build_reg(d, models, estimand, dist, delta=delta)
    if method == "dr":
        if multi and not delta:
            return lambda d: build_multicall_dr(d, models, estimand, dist)
        return lambda d: build_dr(d, models, estimand, dist, delta=delta)
    if method == "cc":
        return lambda d: build_cc(d, estimand)
    if method == "cor":
        if estimand.kind != "mean":
            raise InputError("cor supports the mean estimand only")
        return lambda d: build_cor(d)
    if method == "corx":
        if dist is None:
            raise InputError("method corx needs --census")
        return lambda d: build_corx(d, models.outcome_last or models.outcome, models.family,
                                    dist)[0]
    raise InputError(f"unknown method {method!r}")


def _propensity_ranges(data: SurveyDataset, manifest: Manifest, params: dict) -> dict:
    models = manifest.working_models()
    X = data.respondent_covariates()
    out = {}
    g = params.get("gamma")
    if g is None:
        return out
    gam = models.odds(X, data.y) @ g
    for key, base in (("alpha1", models.baseline1), ("alpha2", models.baseline2)):
        if key in params:
            pi = expit(base(X) @ params[key] + gam)
            out[key.replace("alpha", "pi")] = {"min": float(pi.min()), "max": float(pi.max())}
    return out


def _estimate_once(method, manifest, data, dist, estimand, delta, seed, boot):
    """Returns (report dict, converged)."""
    if method == "pc":
        res = pc_estimator(data)
        lo, hi = res.interval()
        params = [{"name": f"p{j + 1}", "estimate": float(v), "se": None, "lower": None,
                   "upper": None} for j, v in enumerate(res.p)]
        params.append({"name": "theta", "estimate": res.theta, "se": res.se,
                       "lower": lo, "upper": hi})
        return {"parameters": params, "solver": {"converged": True}}, True
    build = _builder(method, manifest, data, dist, estimand, delta)
    system = build(data)
    if method == "mar":
        system = system.fix(gamma=0.0)
    opts = SolverOptions(seed=seed)
    res = fit(system, opts, warm_start=method in ("ipw", "reg", "dr"))
    report = {
        "solver": {
            "system": system.name,
            "converged": res.converged,
            "iterations": res.iterations,
            "residual_norm": res.residual_norm,
            "restarts": res.restarts,
            "message": res.message,
        },
    }
    ci = confidence_interval(res)
    report["parameters"] = [
        {"name": lab, "estimate": float(v), "se": float(s), "lower": float(a), "upper": float(b)}
        for lab, v, s, (a, b) in zip(res.labels, res.params, res.se, ci)
    ]
    if res.converged:
        blocks = system.expand(res.params)
        report["positivity"] = _propensity_ranges(data, manifest, blocks)
    if method == "corx":
        _, setup = build_corx(data, manifest.working_models().outcome, manifest.family, dist)
        report["clipped_support_points"] = setup.clipped
    if boot and res.converged:
        mk = (lambda d: build(d).fix(gamma=0.0)) if method == "mar" else build
        cov, failed = bootstrap(mk, data, boot, seed, opts)
        report["bootstrap"] = {
            "resamples": boot,
            "failed": failed,
            "se": dict(zip(res.labels, np.sqrt(np.diag(cov)).tolist())),
        }
    return report, res.converged and res.covariance is not None


def cmd_estimate(args) -> int:
    manifest, data, dist = _load(args)
    estimand = manifest.estimand(args.estimand)
    report, ok = _estimate_once(args.method, manifest, data, dist, estimand, args.delta,
                                args.seed, args.bootstrap)
    report.update({
        "command": "estimate",
        "method": args.method,
        "estimand": args.estimand,
        "delta": args.delta,
        "n": data.n,
        "calls": data.K,
        "respondents": int(data.respondent.sum()),
        "seed": args.seed,
    })
    _print_parameters(report["parameters"])
    if args.out:
        write_report(report, args.out)
    return EXIT_OK if ok else EXIT_NOCONV


def _print_parameters(params) -> None:
    width = max(len(p["name"]) for p in params)
    for p in params:
        se = p["se"]
        tail = "" if se is None else f"  se {se:.4f}  ({p['lower']:.4f}, {p['upper']:.4f})"
        print(f"{p['name']:<{width}}  {p['estimate']:.4f}{tail}")


# --------------------------------------------------------------------------
# sensitivity
# --------------------------------------------------------------------------


def cmd_sensitivity(args) -> int:
    grid = _parse_grid(args.grid)
    if not grid:
        raise InputError("empty --grid")
    if args.method not in ("ipw", "reg", "dr"):
        raise InputError("sensitivity supports ipw, reg and dr")
    manifest, data, dist = _load(args)
    if data.K > 2:
        data = data.collapse_calls(2)
    estimand = manifest.estimand(args.estimand)
    points, all_ok = [], True
    for d in grid:
        rep, ok = _estimate_once(args.method, manifest, data, dist, estimand, d, args.seed, 0)
        all_ok &= ok
        points.append({"delta": d, **rep})
        theta = [p for p in rep["parameters"] if p["name"].startswith("theta")]
        print(f"delta {d:+.3f}: " + ", ".join(
            f"{p['name']} {p['estimate']:.4f} ({p['lower']:.4f}, {p['upper']:.4f})"
            for p in theta))
    report = {"command": "sensitivity", "method": args.method, "estimand": args.estimand,
              "grid": grid, "points": points, "seed": args.seed}
    if args.out:
        write_report(report, args.out)
    return EXIT_OK if all_ok else EXIT_NOCONV


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    from sorcall.simulate import run_study, scenario, sensitivity_scenario
    from sorcall.simulate.study import MAR, PROPOSED

    fam = args.family
    if fam not in ("binary", "continuous"):
        raise InputError(f"unknown family {fam!r}")
    try:
        if args.scenario.lower() == "sensitivity":
            spec = sensitivity_scenario(args.delta or 0.0)
        else:
            spec = scenario(args.scenario, fam)
    except ConfigurationError as err:
        raise InputError(str(err)) from None
    spec = spec.with_(n=args.n, replicates=args.reps, seed=args.seed)
    estimators = tuple(args.estimators.split(",")) if args.estimators else PROPOSED + MAR
    stem = f"{spec.name}_{spec.family}"
    try:
        report = run_study(spec, estimators, jobs=args.jobs)
        code = EXIT_OK
    except StudyFailure as err:
        print(str(err), file=sys.stderr)
        report, code = err.report, EXIT_NOCONV
    jp, cp = report.write(args.out_dir, stem)
    print(f"scenario {spec.name} ({spec.family}), n={spec.n}, replicates={spec.replicates}")
    print("95% coverage")
    print(report.coverage_table())
    print(f"wrote {jp} and {cp}")
    return code


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="survey CSV")
    p.add_argument("--census", help="covariate law CSV (mass or count column)")
    p.add_argument("--manifest", required=True, help="YAML manifest of column roles")
    p.add_argument("--estimand", default="mean", help="'mean' or 'logit:<col>,<col>'")
    p.add_argument("--calls", default="2", help="number of calls to use, or K for all")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="write the JSON report here")
    p.add_argument("--stochastic-impute", action="store_true",
                   help="impute unsure respondents by random draws instead of thresholding")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sorcall", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate a population quantity from survey data")
    _data_args(est)
    est.add_argument("--method", choices=METHODS, default="dr")
    est.add_argument("--delta", type=float, default=0.0,
                     help="offset added to the second-call log odds ratio")
    est.add_argument("--bootstrap", type=int, default=0, metavar="B",
                     help="also report bootstrap standard errors from B resamples")
    est.set_defaults(func=cmd_estimate)

    sen = sub.add_parser("sensitivity", help="sweep the second-call odds-ratio offset")
    _data_args(sen)
    sen.add_argument("--method", default="dr")
    sen.add_argument("--grid", default="-0.5,-0.2,-0.1,0,0.1,0.2,0.5")
    sen.set_defaults(func=cmd_sensitivity, delta=0.0, bootstrap=0)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study")
    sim.add_argument("--scenario", required=True, help="TT, FT, TF, FF or sensitivity")
    sim.add_argument("--family", default="binary")
    sim.add_argument("--reps", type=int, default=1000)
    sim.add_argument("--n", type=int, default=5000)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--delta", type=float, default=0.0,
                     help="stableness violation for the sensitivity scenario")
    sim.add_argument("--estimators", default=None,
                     help="comma-separated subset of ipw,reg,dr,ipw_mar,reg_mar,dr_mar")
    sim.add_argument("--out-dir", default=".")
    sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # a grid such as "-0.5,0,0.5" would otherwise be taken for an option
    for j in range(len(argv) - 1):
        if argv[j] in ("--grid", "--delta"):
            argv[j], argv[j + 1] = f"{argv[j]}={argv[j + 1]}", ""
    argv = [a for a in argv if a != ""]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.seed is None:
        args.seed = DEFAULT_SEED
        log.info("no --seed given; using %d", DEFAULT_SEED)
    try:
        return args.func(args)
    except (InputError, DataError, ConfigurationError, IdentificationError,
            FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
