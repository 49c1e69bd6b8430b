"""Estimating equations that also use respondents after the second call.

A separate model for the last call among second-call nonrespondents,
``pi_K(x, y) = expit(A_K(x) + Gamma_K(x, y))`` with its own odds ratio, and/or
a last-call respondent outcome law ``f_K`` extend the two-call systems. The
first two calls still share the stable odds ratio ``Gamma``.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from sorcall.equations.common import (
    OutcomePart,
    TiltPart,
    WorkingModels,
    check_dim,
    intercept_guess,
)
from sorcall.equations.systems import Block, EquationSystem, Layout, Moments
from sorcall.equations.twocall import YFunction, _TwoCall
from sorcall.errors import ConfigurationError
from sorcall.model import (
    CovariateDistribution,
    EstimandSpec,
    FeatureMap,
    FloatArray,
    SurveyDataset,
    estimand_fn,
)


class _LastCall:
    """Last-call models on top of the two-call pieces (data kept with all calls)."""

    def __init__(self, tc: _TwoCall, need_prop: bool, need_outcome: bool):
        data, m, p = tc.data, tc.models, tc.p
        if data.K < 3:
            raise ConfigurationError("multi-call estimators need at least three calls")
        self.tc = tc
        odds = m.odds_last or m.odds
        self.odds = odds
        self.tilt = TiltPart(odds, p.X, p.y, p.S)
        self.base = None
        if need_prop:
            self.base = m.baseline_last or m.baseline2
            self.BK = self.base(p.X)
        self.outcome = None
        if need_outcome:
            design = m.outcome_last or m.outcome
            if design is None:
                raise ConfigurationError("last-call outcome design missing")
            self.outcome = OutcomePart(m.family, design, p.X, p.S)

    def pi(self, a, g) -> FloatArray:
        pk = expit(self.BK @ a + self.tilt.gamma_at(g))
        self.tc.p.check(pk, "piK")
        return pk

    def h(self, where, U, b, g, affine=True) -> FloatArray:
        o = self.outcome
        coef, s2 = o.split(b)
        eta = (o.D if where == "r" else o.DS) @ coef
        return self.tilt.expect(where, U, o.family, eta, s2, g, 0.0, affine)

    def h_m(self, where, theta, b, g) -> FloatArray:
        spec = self.tc.spec
        return self.h(where, lambda xx, yy: estimand_fn(spec, xx, yy, theta), b, g, True)

    def start(self) -> dict[str, FloatArray]:
        tc = self.tc
        p, r = tc.p, tc.data.r.astype(float)
        out = {"gamma_last": np.zeros(self.odds.dim)}
        if self.base is not None:
            rate = p.rate(r[:, -1] * (1 - r[:, 1]), 1 - r[:, 1])
            out["alpha_last"] = intercept_guess(self.base.names, rate)
        if self.outcome is not None:
            mask = (p.rK - p.r2) == 1
            out["beta_last"] = self.outcome.fit(mask, p.y, p.weight[p.index])
        return out

    def labels(self) -> dict[str, tuple[str, ...]]:
        out = {"gamma_last": self.odds.names}
        if self.base is not None:
            out["alpha_last"] = self.base.names
        if self.outcome is not None:
            out["beta_last"] = self.outcome.labels
        return out


def _assemble(name, tc, lc, order, unit_fn) -> EquationSystem:
    labels = tc.blocks(*[n for n in order if not n.endswith("_last")])
    extra = lc.labels()
    blocks = []
    for n in order:
        blocks.append(Block(n, tuple(extra[n])) if n in extra else labels.block(n))
    layout = Layout(tuple(blocks))
    start = {**tc.start(), **lc.start()}
    return EquationSystem(name, layout, unit_fn, tc.p.weight, init_fn=lambda: layout.join(start))


def build_multicall_ipw(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    V1: FeatureMap | None = None,
    V2: FeatureMap | None = None,
    U: YFunction | None = None,
    W: YFunction | None = None,
) -> EquationSystem:
    """IPW using every call, over ``(alpha1, alpha2, gamma, alpha_last, gamma_last, theta)``.

    ``W`` identifies the last-call propensity; it defaults to the last-call
    baseline features followed by the last-call odds-ratio features.
    """
    tc = _TwoCall(data, models, spec, dist, V1, V2, 0.0, need_outcome=False, collapse=False)
    lc = _LastCall(tc, need_prop=True, need_outcome=False)
    p = tc.p
    V1r, V2r = tc.V1(p.X), tc.V2(p.X)
    Ur = tc.tilt.Uo if U is None else np.asarray(U(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("U", Ur.shape[1], models.odds.dim)
    Wr = (np.hstack([lc.BK, lc.tilt.Uo]) if W is None
          else np.asarray(W(p.X, p.y), float).reshape(len(p.y), -1))
    check_dim("W", Wr.shape[1], lc.base.dim + lc.odds.dim)
    pop = np.concatenate([p.mass @ tc.V1(p.S), p.mass @ tc.V2(p.S),
                          np.zeros(Ur.shape[1] + Wr.shape[1] + spec.dim)])
    r1, r2, rK = p.r1, p.r2, p.rK
    new = r2 - r1
    late = rK - r2

    def unit_fn(par):
        pi1, pi2 = tc.pis(par["alpha1"], par["alpha2"], par["gamma"])
        piK = lc.pi(par["alpha_last"], par["gamma_last"])
        p2 = pi1 + (1 - pi1) * pi2
        pK = p2 + (1 - p2) * piK
        e3 = (r1 / pi1)[:, None] * V1r
        e4 = (new / pi2 + r1)[:, None] * V2r
        e5 = (new / pi2 - (1 - pi1) / pi1 * r1)[:, None] * Ur
        eK = (late / piK - (1 - p2) / p2 * r2)[:, None] * Wr
        eT = (rK / pK)[:, None] * tc.m(par["theta"])
        return Moments(p.index, np.hstack([e3, e4, e5, eK, eT]), pop)

    order = ("alpha1", "alpha2", "gamma", "alpha_last", "gamma_last", "theta")
    return _assemble("ipw_k", tc, lc, order, unit_fn)


def build_multicall_reg(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    U: YFunction | None = None,
    W: YFunction | None = None,
) -> EquationSystem:
    """Imputation using every call, over ``(beta, alpha1, gamma, beta_last, gamma_last, theta)``.

    ``W`` (default: last-call odds-ratio features) identifies ``gamma_last``
    through the imputed law of final nonrespondents.
    """
    tc = _TwoCall(data, models, spec, dist, None, None, 0.0, need_outcome=True, collapse=False)
    lc = _LastCall(tc, need_prop=False, need_outcome=True)
    p = tc.p
    if U is None:
        b1, odds = models.baseline1, models.odds
        U = lambda xx, yy: np.hstack([b1(xx), odds(xx, yy)])  # noqa: E731
    U_aff = models.odds.linear_in_y
    if W is None:
        W = lc.odds
    W_aff = lc.odds.linear_in_y
    Ur = np.asarray(U(p.X, p.y), float).reshape(len(p.y), -1)
    Wr = np.asarray(W(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("U", Ur.shape[1], models.baseline1.dim + models.odds.dim)
    check_dim("W", Wr.shape[1], lc.odds.dim)
    r1, r2, rK = p.r1, p.r2, p.rK
    new, late = r2 - r1, rK - r2
    zb = np.zeros(len(tc.outcome.labels))
    zbk = np.zeros(len(lc.outcome.labels))
    mass = p.mass

    def unit_fn(par):
        b, g, th = par["beta"], par["gamma"], par["theta"]
        bk, gk = par["beta_last"], par["gamma_last"]
        pi1 = expit(tc.B1 @ par["alpha1"] + tc.tilt.gamma_at(g))
        p.check(pi1, "pi1")
        e7 = new[:, None] * tc.outcome.score(b, p.y)
        e8 = (r1 / pi1 - r2)[:, None] * Ur + r2[:, None] * tc.h("r", U, b, g, U_aff)
        eb = late[:, None] * lc.outcome.score(bk, p.y)
        eg = (r1 / pi1 - rK)[:, None] * Wr + rK[:, None] * lc.h("r", W, bk, gk, W_aff)
        et = rK[:, None] * (tc.m(th) - lc.h_m("r", th, bk, gk))
        pop = np.concatenate([
            zb, mass @ tc.h("s", U, b, g, U_aff), zbk,
            mass @ lc.h("s", W, bk, gk, W_aff), -(mass @ lc.h_m("s", th, bk, gk)),
        ])
        return Moments(p.index, np.hstack([e7, e8, eb, eg, et]), pop)

    order = ("beta", "alpha1", "gamma", "beta_last", "gamma_last", "theta")
    return _assemble("reg_k", tc, lc, order, unit_fn)


def build_multicall_dr(
    data: SurveyDataset,
    models: WorkingModels,
    spec: EstimandSpec,
    dist: CovariateDistribution,
    V1: FeatureMap | None = None,
    V2: FeatureMap | None = None,
    U: YFunction | None = None,
    VK: FeatureMap | None = None,
    UK: YFunction | None = None,
) -> EquationSystem:
    """Multiply robust system over
    ``(alpha1, alpha2, beta, gamma, beta_last, alpha_last, gamma_last, theta)``.

    ``theta`` stays consistent when the first-call propensity and both odds
    ratios are right, one of the second-call baseline or outcome law is right,
    and one of the last-call baseline or outcome law is right.
    """
    tc = _TwoCall(data, models, spec, dist, V1, V2, 0.0, need_outcome=True, collapse=False)
    lc = _LastCall(tc, need_prop=True, need_outcome=True)
    p = tc.p
    if U is None:
        U = models.odds
    U_aff = models.odds.linear_in_y
    Ur = np.asarray(U(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("U", Ur.shape[1], models.odds.dim)
    VKr = lc.BK if VK is None else VK(p.X)
    check_dim("VK", VKr.shape[1], lc.base.dim)
    if UK is None:
        UK = lc.odds
    UK_aff = lc.odds.linear_in_y
    UKr = np.asarray(UK(p.X, p.y), float).reshape(len(p.y), -1)
    check_dim("UK", UKr.shape[1], lc.odds.dim)
    V1r, V2r = tc.V1(p.X), tc.V2(p.X)
    head = np.concatenate([p.mass @ tc.V1(p.S), p.mass @ tc.V2(p.S)])
    mid = np.zeros(len(tc.outcome.labels) + Ur.shape[1] + len(lc.outcome.labels)
                   + VKr.shape[1] + UKr.shape[1])
    r1, r2, rK = p.r1, p.r2, p.rK
    new, late = r2 - r1, rK - r2

    def unit_fn(par):
        b, g, th = par["beta"], par["gamma"], par["theta"]
        bk, gk = par["beta_last"], par["gamma_last"]
        pi1, pi2 = tc.pis(par["alpha1"], par["alpha2"], g)
        piK = lc.pi(par["alpha_last"], gk)
        e10 = (r1 / pi1)[:, None] * V1r
        e11 = (new / pi2 + r1)[:, None] * V2r
        e12 = new[:, None] * tc.outcome.score(b, p.y)
        e13 = (r1 - pi1 / (1 - pi1) * new / pi2)[:, None] * (Ur - tc.g_untilted(U, b, U_aff))
        eb = late[:, None] * lc.outcome.score(bk, p.y)
        omega = (late / piK + r2 - r1 / pi1)[:, None]
        ea = omega * VKr
        eg = omega * (UKr - lc.h("r", UK, bk, gk, UK_aff))
        et = (r2 + late / piK)[:, None] * (tc.m(th) - lc.h_m("r", th, bk, gk))
        pop = np.concatenate([head, mid, -(p.mass @ lc.h_m("s", th, bk, gk))])
        return Moments(p.index, np.hstack([e10, e11, e12, e13, eb, ea, eg, et]), pop)

    order = ("alpha1", "alpha2", "beta", "gamma", "beta_last", "alpha_last", "gamma_last",
             "theta")
    return _assemble("dr_k", tc, lc, order, unit_fn)
