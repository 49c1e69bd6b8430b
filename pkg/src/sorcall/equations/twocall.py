"""Two-call IPW, REG and DR estimating equations under stableness of resistance.

All three systems share one log odds ratio ``Gamma`` between the first two
calls. Contributions vanish for units that did not respond by the second
call, so everything is computed on second-call respondents and scattered.
Population terms ``E_f{.}`` are evaluated on the covariate support and held
as known constants.

``delta`` adds ``delta * y`` to the second-call log odds ratio (and hence to
the tilt that imputes nonrespondents) without estimating it; this is the
sensitivity-analysis variant.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit

from sorcall.equations.common import (
    OutcomePart,
    Prepared,
    TiltPart,
    WorkingModels,
    cc_start,
    check_dim,
    intercept_guess,
)
from sorcall.equations.systems import Block, EquationSystem, Layout, Moments
from sorcall.errors import ConfigurationError
from sorcall.model import (
    CovariateDistribution,
    EstimandSpec,
    FeatureMap,
    FloatArray,
    SurveyDataset,
    estimand_fn,
)

YFunction = Callable[[FloatArray, FloatArray], FloatArray]


class _TwoCall:
    """Precomputed design matrices shared by the two-call builders."""

    def __init__(
        self,
        data: SurveyDataset,
        models: WorkingModels,
        spec: EstimandSpec,
        dist: CovariateDistribution,
        V1: FeatureMap | None,
        V2: FeatureMap | None,
        delta: float,
        need_outcome: bool,
        collapse: bool = True,
    ):
        if not np.isfinite(delta):
            raise ConfigurationError("delta must be finite")
        if collapse and data.K > 2:
            data = data.collapse_calls(2)
        self.data = data
        self.models = models
        self.spec = spec
        self.delta = float(delta)
        p = Prepared(data, dist)
        self.p = p
        X, y = p.X, p.y
        self.B1 = models.baseline1(X)
        self.B2 = models.baseline2(X)
        self.tilt = TiltPart(models.odds, X, y, p.S)
        self.V1 = V1 or models.baseline1
        self.V2 = V2 or models.baseline2
        check_dim("V1", self.V1.dim, models.baseline1.dim)
        check_dim("V2", self.V2.dim, models.baseline2.dim)
        self.outcome = None
        if need_outcome:
            if models.outcome is None:
                raise ConfigurationError("this estimator needs an outcome design")
            self.outcome = OutcomePart(models.family, models.outcome, X, p.S)
        self.M0 = estimand_fn(spec, X, y, np.zeros(spec.dim)) if spec.kind == "mean" else None

    # -- propensities -------------------------------------------------------

    def pis(self, a1, a2, g) -> tuple[FloatArray, FloatArray]:
        gam = self.tilt.gamma_at(g)
        pi1 = expit(self.B1 @ a1 + gam)
        eta2 = self.B2 @ a2 + gam
        if self.delta:
            eta2 = eta2 + self.delta * self.p.y
        pi2 = expit(eta2)
        self.p.check(pi1, "pi1")
        self.p.check(pi2, "pi2")
        return pi1, pi2

    def m(self, theta) -> FloatArray:
        if self.M0 is not None:
            return self.M0 - theta[0]
        return estimand_fn(self.spec, self.p.X, self.p.y, theta)

    # -- imputation ---------------------------------------------------------

    def h(self, where, U, b, g, affine=True) -> FloatArray:
        o = self.outcome
        coef, s2 = o.split(b)
        eta = (o.D if where == "r" else o.DS) @ coef
        return self.tilt.expect(where, U, o.family, eta, s2, g, self.delta, affine)

    def g_untilted(self, U, b, affine=True) -> FloatArray:
        o = self.outcome
        coef, s2 = o.split(b)
        return self.tilt.expect("r", U, o.family, o.D @ coef, s2, None, affine=affine)

    def h_m(self, where, theta, b, g) -> FloatArray:
        spec = self.spec
        return self.h(where, lambda xx, yy: estimand_fn(spec, xx, yy, theta), b, g, affine=True)

    # -- starting values ----------------------------------------------------

    def start(self) -> dict[str, FloatArray]:
        p, d = self.p, self.data
        r = d.r.astype(float)
        out = {
            "alpha1": intercept_guess(self.models.baseline1.names, p.rate(r[:, 0], np.ones(d.n))),
            "alpha2": intercept_guess(
                self.models.baseline2.names, p.rate(r[:, 1] * (1 - r[:, 0]), 1 - r[:, 0])
            ),
            "gamma": np.zeros(self.models.odds.dim),
            "theta": cc_start(self.spec, p),
        }
        if self.outcome is not None:
            mask = (p.r2 - p.r1) == 1
            out["beta"] = self.outcome.fit(mask, p.y, p.weight[p.index])
        return out

    def blocks(self, *names: str) -> Layout:
        m = self.models
        labels = {
            "alpha1": m.baseline1.names,
            "alpha2": m.baseline2.names,
            "gamma": m.odds.names,
            "theta": self.spec.names,
        }
        if self.outcome is not None:
            labels["beta"] = self.outcome.labels
        return Layout(tuple(Block(n, tuple(labels[n])) for n in names))


def _system(name: str, tc: _TwoCall, layout: Layout, unit_fn) -> EquationSystem:
    start = tc.start()
    return EquationSystem(
        name, layout, unit_fn, tc.p.weight, init_fn=lambda: layout.join(start)
    )


def build_ipw(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    V1: FeatureMap | None = None,
    V2: FeatureMap | None = None,
    U: YFunction | None = None,
    delta: float = 0.0,
) -> EquationSystem:
    """Inverse-probability-weighted system over ``(alpha1, alpha2, gamma, theta)``.

    ``V1``/``V2`` calibrate first- and second-call respondents to the
    population covariate law; ``U`` (default: the odds-ratio features)
    identifies ``gamma``.
    """
    tc = _TwoCall(data, models, spec, dist, V1, V2, delta, need_outcome=False)
    p = tc.p
    V1r, V2r = tc.V1(p.X), tc.V2(p.X)
    Ur = tc.tilt.Uo if U is None else np.asarray(U(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("U", Ur.shape[1], models.odds.dim)
    pop = np.concatenate(
        [p.mass @ tc.V1(p.S), p.mass @ tc.V2(p.S), np.zeros(Ur.shape[1] + spec.dim)]
    )
    r1, r2 = p.r1, p.r2
    new = r2 - r1

    def unit_fn(par):
        pi1, pi2 = tc.pis(par["alpha1"], par["alpha2"], par["gamma"])
        e3 = (r1 / pi1)[:, None] * V1r
        e4 = (new / pi2 + r1)[:, None] * V2r
        e5 = (new / pi2 - (1 - pi1) / pi1 * r1)[:, None] * Ur
        e6 = (r2 / (pi1 + pi2 * (1 - pi1)))[:, None] * tc.m(par["theta"])
        return Moments(p.index, np.hstack([e3, e4, e5, e6]), pop)

    return _system("ipw", tc, tc.blocks("alpha1", "alpha2", "gamma", "theta"), unit_fn)


def build_reg(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    U: YFunction | None = None,
    U_affine: bool = False,
    delta: float = 0.0,
) -> EquationSystem:
    """Imputation system over ``(beta, alpha1, gamma, theta)``.

    ``U`` defaults to ``(baseline1 features, odds-ratio features)``; a custom
    ``U`` must have that same dimension. Set ``U_affine`` when ``U`` is
    affine in ``y`` to use closed-form imputation for Gaussian outcomes.
    """
    tc = _TwoCall(data, models, spec, dist, None, None, delta, need_outcome=True)
    p = tc.p
    if U is None:
        b1, odds = models.baseline1, models.odds
        U = lambda xx, yy: np.hstack([b1(xx), odds(xx, yy)])  # noqa: E731
        U_affine = models.odds.linear_in_y
    Ur = np.asarray(U(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("U", Ur.shape[1], models.baseline1.dim + models.odds.dim)
    r1, r2 = p.r1, p.r2
    new = r2 - r1
    zeros_b = np.zeros(len(tc.outcome.labels))
    mass = p.mass

    def unit_fn(par):
        b, g, th = par["beta"], par["gamma"], par["theta"]
        pi1 = expit(tc.B1 @ par["alpha1"] + tc.tilt.gamma_at(g))
        p.check(pi1, "pi1")
        e7 = new[:, None] * tc.outcome.score(b, p.y)
        hU = tc.h("r", U, b, g, U_affine)
        e8 = (r1 / pi1 - r2)[:, None] * Ur + r2[:, None] * hU
        e9 = r2[:, None] * (tc.m(th) - tc.h_m("r", th, b, g))
        pop = np.concatenate(
            [zeros_b, mass @ tc.h("s", U, b, g, U_affine), -(mass @ tc.h_m("s", th, b, g))]
        )
        return Moments(p.index, np.hstack([e7, e8, e9]), pop)

    return _system("reg", tc, tc.blocks("beta", "alpha1", "gamma", "theta"), unit_fn)


def build_dr(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    V1: FeatureMap | None = None,
    V2: FeatureMap | None = None,
    U: YFunction | None = None,
    U_affine: bool = False,
    delta: float = 0.0,
) -> EquationSystem:
    """Doubly robust system over ``(alpha1, alpha2, beta, gamma, theta)``.

    Consistent for ``theta`` when the first-call propensity and the odds
    ratio are right and at least one of the second-call baseline or the
    second-call outcome law is right.
    """
    tc = _TwoCall(data, models, spec, dist, V1, V2, delta, need_outcome=True)
    p = tc.p
    if U is None:
        U = models.odds
        U_affine = models.odds.linear_in_y
    Ur = np.asarray(U(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("U", Ur.shape[1], models.odds.dim)
    V1r, V2r = tc.V1(p.X), tc.V2(p.X)
    pop_v = np.concatenate([p.mass @ tc.V1(p.S), p.mass @ tc.V2(p.S)])
    tail = np.zeros(len(tc.outcome.labels) + Ur.shape[1])
    r1, r2 = p.r1, p.r2
    new = r2 - r1

    def unit_fn(par):
        b, g, th = par["beta"], par["gamma"], par["theta"]
        pi1, pi2 = tc.pis(par["alpha1"], par["alpha2"], g)
        e10 = (r1 / pi1)[:, None] * V1r
        e11 = (new / pi2 + r1)[:, None] * V2r
        e12 = new[:, None] * tc.outcome.score(b, p.y)
        e13 = (r1 - pi1 / (1 - pi1) * new / pi2)[:, None] * (Ur - tc.g_untilted(U, b, U_affine))
        e14 = (r1 + new / pi2)[:, None] * (tc.m(th) - tc.h_m("r", th, b, g))
        pop = np.concatenate([pop_v, tail, -(p.mass @ tc.h_m("s", th, b, g))])
        return Moments(p.index, np.hstack([e10, e11, e12, e13, e14]), pop)

    return _system("dr", tc, tc.blocks("alpha1", "alpha2", "beta", "gamma", "theta"), unit_fn)


_BUILDERS = {"ipw": build_ipw, "reg": build_reg, "dr": build_dr}


def build_sensitivity(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    delta: float,
    method: str = "dr",
    **options,
) -> EquationSystem:
    """Parent system with the second-call log odds ratio offset by ``delta * y``.

    ``delta`` is held fixed. ``delta = 0`` reproduces the parent system exactly.
    """
    try:
        builder = _BUILDERS[method]
    except KeyError:
        raise ConfigurationError(f"no sensitivity variant for method {method!r}") from None
    return builder(data, models, spec, dist, delta=delta, **options)
