"""Monte Carlo harness: replicate, estimate, summarize coverage and bias."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm

from sorcall.equations import WorkingModels, build_dr, build_ipw, build_reg
from sorcall.equations.multicall import (
    build_multicall_dr,
    build_multicall_ipw,
    build_multicall_reg,
)
from sorcall.errors import ConfigurationError, StudyFailure
from sorcall.model import EstimandSpec
from sorcall.glm import fit_logistic
from sorcall.simulate.generate import ChoiceParams, Draw, generate, generate_choice_model, substream
from sorcall.simulate.mar import MAR_BUILDERS
from sorcall.simulate.scenarios import (
    ScenarioSpec,
    population_distribution,
    population_truth,
    sensitivity_scenario,
)
from sorcall.solver import SolverOptions, fit

PROPOSED = ("ipw", "reg", "dr")
MAR = ("ipw_mar", "reg_mar", "dr_mar")
MULTICALL = ("ipw_k", "reg_k", "dr_k")
FAILURE_RATE = 0.01
Z95 = float(norm.ppf(0.975))

CSV_FIELDS = ("replicate", "estimator", "parameter", "estimate", "se", "lower", "upper",
              "covered", "converged")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else format(v, ".17g")
    return str(v)


def _system_for(name: str, draw: Draw, spec: ScenarioSpec):
    family = "binary" if spec.family == "binary" else "gaussian"
    if name in MAR_BUILDERS:
        return MAR_BUILDERS[name](draw, family)
    models = WorkingModels.linear(2, family, names=("xa", "xb"))
    dist = population_distribution()
    est = EstimandSpec()
    if name == "ipw":
        return build_ipw(draw.data, models, est, dist)
    if name == "reg":
        return build_reg(draw.data, models, est, dist)
    if name == "dr":
        return build_dr(draw.data, models, est, dist)
    if name in MULTICALL:
        if spec.calls < 3:
            raise ConfigurationError(f"{name} needs a scenario with a third call")
        builder = {"ipw_k": build_multicall_ipw, "reg_k": build_multicall_reg,
                   "dr_k": build_multicall_dr}[name]
        return builder(draw.data, models, est, dist)
    raise ConfigurationError(f"unknown estimator {name!r}")


_TRACKED = {"theta": "theta[theta]", "gamma": "gamma[y]"}


def run_replicate(spec: ScenarioSpec, rep: int, estimators: Sequence[str],
                  truth: dict[str, float]) -> list[tuple]:
    """Rows ``(rep, estimator, parameter, est, se, lo, hi, covered, converged)``."""
    rng = substream(spec.seed, spec.code, rep)
    draw = generate(spec, rng)
    solver_seed = int(rng.integers(0, 2**31 - 1))
    rows = []
    for name in estimators:
        try:
            system = _system_for(name, draw, spec)
            res = fit(system, SolverOptions(seed=solver_seed))
            ok = res.converged and res.covariance is not None
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            res, ok = None, False
        for par, label in _TRACKED.items():
            if res is not None and label not in res.labels:
                continue
            if res is None and par == "gamma" and name in MAR:
                continue
            if ok:
                est, se = res.get(label)
                lo, hi = est - Z95 * se, est + Z95 * se
                cov = bool(lo <= truth[par] <= hi)
            else:
                est = se = lo = hi = float("nan")
                cov = False
            rows.append((rep, name, par, est, se, lo, hi, cov, ok))
    return rows


@dataclass(frozen=True)
class Summary:
    estimator: str
    parameter: str
    truth: float
    replicates: int
    failed: int
    mean_bias: float
    median_bias: float
    mc_sd: float
    mean_se: float
    median_se: float
    coverage: float


@dataclass
class StudyReport:
    """Per-replicate rows plus per-(estimator, parameter) summaries."""

    scenario: dict
    truth: dict[str, float]
    rows: list[tuple]
    summaries: list[Summary] = field(default_factory=list)

    def summary(self, estimator: str, parameter: str = "theta") -> Summary:
        for s in self.summaries:
            if s.estimator == estimator and s.parameter == parameter:
                return s
        raise KeyError((estimator, parameter))

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "scenario": self.scenario,
            "truth": self.truth,
            "summaries": [asdict(s) for s in self.summaries],
        }

    def write(self, out_dir: str | Path, stem: str) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jp, cp = out / f"{stem}.json", out / f"{stem}.csv"
        jp.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        cp.write_text(self.csv_text())
        return jp, cp

    def coverage_table(self) -> str:
        """Plain-text coverage table: estimators across, parameters down."""
        names = list(dict.fromkeys(s.estimator for s in self.summaries))
        lines = ["param  " + " ".join(f"{n:>8}" for n in names)]
        for par in ("theta", "gamma"):
            vals = []
            for n in names:
                try:
                    vals.append(f"{self.summary(n, par).coverage:8.3f}")
                except KeyError:
                    vals.append(f"{'':>8}")
            lines.append(f"{par:<6} " + " ".join(vals))
        return "\n".join(lines)


def summarize(rows: Sequence[tuple], truth: dict[str, float]) -> list[Summary]:
    out = []
    keys = list(dict.fromkeys((r[1], r[2]) for r in rows))
    for est, par in keys:
        sel = [r for r in rows if r[1] == est and r[2] == par]
        ok = [r for r in sel if r[8]]
        vals = np.array([r[3] for r in ok])
        ses = np.array([r[4] for r in ok])
        bias = vals - truth[par]
        nan = float("nan")
        out.append(Summary(
            estimator=est,
            parameter=par,
            truth=truth[par],
            replicates=len(sel),
            failed=len(sel) - len(ok),
            mean_bias=float(bias.mean()) if ok else nan,
            median_bias=float(np.median(bias)) if ok else nan,
            mc_sd=float(vals.std(ddof=1)) if len(ok) > 1 else nan,
            mean_se=float(ses.mean()) if ok else nan,
            median_se=float(np.median(ses)) if ok else nan,
            coverage=float(np.mean([r[7] for r in ok])) if ok else nan,
        ))
    return out


def run_study(
    spec: ScenarioSpec,
    estimators: Sequence[str] = PROPOSED + MAR,
    jobs: int = 1,
    replicates: int | None = None,
    strict: bool = True,
    progress: Callable[[int], None] | None = None,
) -> StudyReport:
    """Run ``replicates`` independent replicates and summarize.

    Replicate ``i`` draws from the substream keyed by ``(seed, code, i)``, so
    the report is identical for any ``jobs``. With ``strict``, more than 1%
    failed replicates for any estimator raises :class:`StudyFailure`.
    """
    reps = spec.replicates if replicates is None else replicates
    truth = {"theta": population_truth(spec), "gamma": float(spec.gamma)}
    if jobs == 1:
        chunks = []
        for i in range(reps):
            chunks.append(run_replicate(spec, i, estimators, truth))
            if progress:
                progress(i)
    else:
        chunks = Parallel(n_jobs=jobs)(
            delayed(run_replicate)(spec, i, estimators, truth) for i in range(reps)
        )
    rows = [row for chunk in chunks for row in chunk]
    scen = asdict(spec)
    scen["replicates"] = reps
    report = StudyReport(scen, truth, rows, summarize(rows, truth))
    if strict and reps:
        bad = [s for s in report.summaries if s.failed > FAILURE_RATE * s.replicates]
        if bad:
            detail = ", ".join(f"{s.estimator}/{s.parameter}: {s.failed}" for s in bad)
            err = StudyFailure(f"scenario {spec.name}/{spec.family}: too many failures ({detail})")
            err.report = report
            raise err
    return report


def run_sensitivity_study(
    grid: Sequence[float] = (-0.2, -0.1, 0.0, 0.1, 0.2),
    estimators: Sequence[str] = ("ipw", "reg", "dr", "dr_mar"),
    jobs: int = 1,
    replicates: int | None = None,
    strict: bool = True,
    **overrides,
) -> dict[float, StudyReport]:
    """Generate with second-call odds ratio offset by each ``delta``; analyze assuming none."""
    return {
        float(d): run_study(sensitivity_scenario(d, **overrides), estimators, jobs,
                            replicates, strict)
        for d in grid
    }


CHOICE_CODE = 900


def choice_model_odds_ratios(params: ChoiceParams = ChoiceParams(), replicates: int = 5000,
                             seed: int = 20250101) -> np.ndarray:
    """Per-replicate ``(gamma1, gamma2)`` from logistic fits on the choice model.

    ``gamma1`` is the coefficient of ``y`` in a logistic regression of ``r1`` on
    ``(1, x, y)``; ``gamma2`` is the same coefficient for ``r2`` among first-call
    nonrespondents. Replicates whose fits do not converge are returned as NaN.
    """
    out = np.full((replicates, 2), np.nan)
    for b in range(replicates):
        d = generate_choice_model(params, substream(seed, CHOICE_CODE, b))
        X = np.column_stack([np.ones_like(d.x), d.x, d.y])
        c1, ok1 = fit_logistic(X, d.r1)
        later = d.r1 == 0
        c2, ok2 = fit_logistic(X[later], d.r2[later])
        if ok1 and ok2:
            out[b] = c1[2], c2[2]
    return out
