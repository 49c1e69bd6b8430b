"""Comparison estimators: complete case, MAR, continuum of resistance, and
parameter counting. Also the imputation step for unsure respondents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit
from scipy.stats import norm

from sorcall.equations.common import OutcomePart, Prepared, WorkingModels, cc_start
from sorcall.equations.systems import Block, EquationSystem, Layout, Moments
from sorcall.equations.twocall import build_ipw
from sorcall.errors import ConfigurationError, DataError, IdentificationError
from sorcall.glm import fit_logistic
from sorcall.model import (
    CovariateDistribution,
    EstimandSpec,
    FeatureMap,
    FloatArray,
    SurveyDataset,
    estimand_fn,
)
from sorcall.solver import SolveResult, SolverOptions, fit


def _last_call(data: SurveyDataset) -> int:
    """Latest call (1-based) at which some unit first responded."""
    r = data.r
    new = np.diff(np.column_stack([np.zeros(data.n, np.int8), r]), axis=1)
    active = np.nonzero(new.sum(axis=0) > 0)[0]
    if active.size == 0:
        raise DataError("no respondents")
    return int(active[-1]) + 1


def build_cc(data: SurveyDataset, spec: EstimandSpec) -> EquationSystem:
    """``sum_i w_i r_K,i m(x_i, y_i; theta) = 0``."""
    p = Prepared(data, None)
    zero = np.zeros(spec.dim)
    layout = Layout((Block("theta", spec.names),))
    start = cc_start(spec, p)

    def unit_fn(par):
        return Moments(p.index, estimand_fn(spec, p.X, p.y, par["theta"]), zero)

    return EquationSystem("cc", layout, unit_fn, p.weight, init_fn=lambda: start)


def cc_estimator(data: SurveyDataset, spec: EstimandSpec = EstimandSpec(),
                 opts: SolverOptions | None = None) -> SolveResult:
    return fit(build_cc(data, spec), opts, warm_start=False)


def mar_estimator(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    opts: SolverOptions | None = None,
    **options,
) -> SolveResult:
    """IPW with the odds ratio held at zero."""
    system = build_ipw(data, models, spec, dist, **options)
    return fit(system.fix(gamma=0.0), opts, warm_start=False)


def build_cor(data: SurveyDataset) -> EquationSystem:
    """Nonrespondents imputed with the weighted mean of the latest respondents.

    Parameters ``(mu_last, theta)``.
    """
    k = _last_call(data)
    p = Prepared(data, None)
    r = data.r[data.respondent].astype(float)
    latest = r[:, k - 1] - (r[:, k - 2] if k > 1 else 0.0)
    resp_share = p.weight[p.index].sum()
    w = p.weight[p.index]
    mu0 = float(np.average(p.y, weights=w * latest))
    th0 = float(np.sum(w * p.y) + (1 - resp_share) * mu0)
    layout = Layout((Block("mu_last", ("mean",)), Block("theta", ("theta",))))
    nonresp = np.nonzero(~data.respondent)[0]
    index = np.concatenate([p.index, nonresp])
    y = p.y
    n_non = nonresp.size

    def unit_fn(par):
        mu, th = par["mu_last"][0], par["theta"][0]
        resp = np.column_stack([latest * (y - mu), y - th])
        non = np.column_stack([np.zeros(n_non), np.full(n_non, mu - th)])
        return Moments(index, np.vstack([resp, non]), np.zeros(2))

    return EquationSystem("cor", layout, unit_fn, p.weight,
                          init_fn=lambda: np.array([mu0, th0]))


def cor_estimator(data: SurveyDataset, spec: EstimandSpec = EstimandSpec(),
                  opts: SolverOptions | None = None) -> SolveResult:
    if spec.kind != "mean":
        raise ConfigurationError("COR is defined for the outcome mean only")
    return fit(build_cor(data), opts, warm_start=False)


def _support_index(rows: FloatArray, support: FloatArray) -> np.ndarray:
    lookup = {tuple(s): j for j, s in enumerate(support)}
    out = np.empty(rows.shape[0], dtype=int)
    for i, row in enumerate(rows):
        j = lookup.get(tuple(row))
        if j is None:
            raise ConfigurationError(f"respondent covariates {tuple(row)} not on the support")
        out[i] = j
    return out


@dataclass(frozen=True)
class CorxSetup:
    nonrespondent_mass: FloatArray
    clipped: int


def build_corx(
    data: SurveyDataset,
    design: FeatureMap,
    family: str,
    dist: CovariateDistribution,
) -> tuple[EquationSystem, CorxSetup]:
    """Latest-respondent outcome model averaged over the implied nonrespondent covariates.

    The nonrespondent covariate law is the population law minus the weighted
    respondent empirical law, with negative masses clipped to zero and the
    rest renormalized. It is held fixed in the variance.
    """
    k = _last_call(data)
    p = Prepared(data, dist)
    w = p.weight[p.index]
    r = data.r[data.respondent].astype(float)
    latest = r[:, k - 1] - (r[:, k - 2] if k > 1 else 0.0)
    resp_share = float(w.sum())
    where = _support_index(p.X, p.S)
    emp = np.bincount(where, weights=w, minlength=p.S.shape[0])
    q = p.mass - emp
    clipped = int(np.sum(q < 0))
    q = np.clip(q, 0.0, None)
    if q.sum() <= 0:
        q = np.full_like(q, 1.0 / q.size) if resp_share < 1 else q
    else:
        q = q / q.sum()
    out = OutcomePart(family, design, p.X, p.S)
    b0 = out.fit(latest == 1, p.y, w)
    link = (lambda e: expit(e)) if family == "binary" else (lambda e: e)
    nonresp = np.nonzero(~data.respondent)[0]
    index = np.concatenate([p.index, nonresp])
    nb = len(out.labels)

    def imputed(b):
        coef, _ = out.split(b)
        return float(q @ link(out.DS @ coef))

    th0 = float(np.sum(w * p.y) + (1 - resp_share) * imputed(b0))
    layout = Layout((Block("beta_last", out.labels), Block("theta", ("theta",))))
    y = p.y

    def unit_fn(par):
        b, th = par["beta_last"], par["theta"][0]
        c = imputed(b)
        resp = np.column_stack([latest[:, None] * out.score(b, y), y - th])
        non = np.zeros((nonresp.size, nb + 1))
        non[:, -1] = c - th
        return Moments(index, np.vstack([resp, non]), np.zeros(nb + 1))

    system = EquationSystem("corx", layout, unit_fn, p.weight,
                            init_fn=lambda: np.concatenate([b0, [th0]]))
    return system, CorxSetup(q, clipped)


def corx_estimator(
    data: SurveyDataset,
    design: FeatureMap,
    family: str,
    dist: CovariateDistribution,
    opts: SolverOptions | None = None,
) -> SolveResult:
    system, setup = build_corx(data, design, family, dist)
    res = fit(system, opts, warm_start=False)
    res.extra["clipped_support_points"] = setup.clipped
    return res


# --------------------------------------------------------------------------
# Parameter counting (binary outcome, two calls, no covariates)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PCResult:
    """Cell probabilities ``p1..p6`` of ``(Y, R1, R2)`` and ``theta = p2 + p4 + p6``.

    Cells: ``p1 = (0,0,0)``, ``p2 = (1,0,0)``, ``p3 = (0,0,1)``, ``p4 = (1,0,1)``,
    ``p5 = (0,1,1)``, ``p6 = (1,1,1)``.
    """

    p: FloatArray
    theta: float
    se: float

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        z = norm.ppf(0.5 + level / 2)
        return self.theta - z * self.se, self.theta + z * self.se


def pc_solve(p3: float, p4: float, p5: float, p6: float) -> FloatArray:
    """Solve the odds-ratio equality for ``(p1, p2)`` given the observed cells.

    Uses bracketed root search on ``p1`` in ``[0, s]``, ``s = 1 - p3 - p4 - p5 - p6``.
    """
    s = 1.0 - (p3 + p4 + p5 + p6)
    obs = np.array([p3, p4, p5, p6])
    if np.any(obs < 0) or s < -1e-15:
        raise IdentificationError("observed cell probabilities are not a sub-distribution")
    s = max(s, 0.0)
    if s == 0.0:
        return np.array([0.0, 0.0, p3, p4, p5, p6])

    def F(p1):
        p2 = s - p1
        return p6 * (p1 + p3) * p2 * p3 - p4 * p1 * p5 * (p2 + p4)

    lo, hi = F(0.0), F(s)
    if lo == 0.0:
        p1 = 0.0
    elif hi == 0.0:
        p1 = s
    elif np.sign(lo) == np.sign(hi):
        raise IdentificationError("no sign change of the odds-ratio constraint in [0, s]")
    else:
        p1 = brentq(F, 0.0, s, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return np.array([p1, s - p1, p3, p4, p5, p6])


def pc_estimator(data: SurveyDataset) -> PCResult:
    """Parameter-counting estimate of ``P(Y = 1)`` with a delta-method SE."""
    if data.K > 2:
        data = data.collapse_calls(2)
    y = data.y
    if not np.all((y == 0) | (y == 1)):
        raise ConfigurationError("parameter counting needs a binary outcome")
    w = data.weight / data.weight.sum()
    r1 = data.r[data.respondent, 0]
    cells = np.zeros((data.n, 4))
    rows = np.nonzero(data.respondent)[0]
    # columns: p3 (y0, second call), p4 (y1, second), p5 (y0, first), p6 (y1, first)
    col = np.where(r1 == 1, 2, 0) + y.astype(int)
    cells[rows, col] = 1.0
    obs = w @ cells
    psi = (cells - obs) * w[:, None]
    cov = psi.T @ psi

    def theta(o):
        p = pc_solve(*o)
        return p[1] + p[3] + p[5]

    p = pc_solve(*obs)
    grad = np.empty(4)
    for j in range(4):
        h = 1e-6
        e = np.zeros(4)
        e[j] = h
        grad[j] = (theta(obs + e) - theta(obs - e)) / (2 * h)
    se = float(np.sqrt(max(grad @ cov @ grad, 0.0)))
    return PCResult(p, float(p[1] + p[3] + p[5]), se)


# --------------------------------------------------------------------------
# Preprocessing
# --------------------------------------------------------------------------


def impute_unsure(
    X: FloatArray,
    y: FloatArray,
    unsure: np.ndarray,
    weight: FloatArray | None = None,
    threshold: float = 0.5,
    stochastic: bool = False,
    rng: np.random.Generator | None = None,
) -> FloatArray:
    """Fill binary outcomes of unsure respondents from a logistic fit on sure ones.

    By default the imputation is deterministic (predicted probability at or
    above ``threshold`` gives 1). With ``stochastic`` the values are Bernoulli
    draws from ``rng``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).copy()
    unsure = np.asarray(unsure, dtype=bool)
    if not unsure.any():
        return y
    sure = ~unsure
    w = None if weight is None else np.asarray(weight, dtype=float)[sure]
    coef, _ = fit_logistic(X[sure], y[sure], w)
    prob = expit(X[unsure] @ coef)
    if stochastic:
        if rng is None:
            raise ConfigurationError("stochastic imputation needs an rng")
        y[unsure] = (rng.random(prob.shape[0]) < prob).astype(float)
    else:
        y[unsure] = (prob >= threshold).astype(float)
    return y
