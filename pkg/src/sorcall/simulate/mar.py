"""Missing-at-random comparison estimators that see every unit's covariates.

They use the callback count as an extra covariate: response propensities
are modelled call by call given ``x``, and outcome models for respondents
include an indicator of responding at the second call. Nonrespondents are
imputed as if they were second-call respondents.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from sorcall.equations.systems import Block, EquationSystem, Layout, Moments
from sorcall.glm import fit_gaussian, fit_logistic
from sorcall.simulate.generate import Draw

_NAMES = ("intercept", "xa", "xb")


def _design(draw: Draw) -> np.ndarray:
    return np.column_stack([np.ones(len(draw.y)), draw.x])


def _parts(draw: Draw, family: str):
    X = _design(draw)
    r1 = draw.r[:, 0].astype(float)
    r2 = draw.r[:, 1].astype(float)
    y = np.where(r2 == 1, draw.y, 0.0)
    c2 = (r2 - r1)
    D = np.column_stack([X, c2])
    D2 = np.column_stack([X, np.ones(len(y))])
    return X, r1, r2, y, D, D2


def _outcome_score(family, D, y, r2, b):
    eta = D @ b
    mu = expit(eta) if family == "binary" else eta
    return r2[:, None] * D * (y - mu)[:, None]


def _predict(family, D, b):
    eta = D @ b
    return expit(eta) if family == "binary" else eta


def _start(family, D, y, r2, w):
    m = r2 == 1
    if family == "binary":
        return fit_logistic(D[m], y[m], w[m])[0]
    return fit_gaussian(D[m], y[m], w[m])[0]


def _system(name, blocks, unit_fn, n, init):
    layout = Layout(tuple(Block(k, v) for k, v in blocks))
    return EquationSystem(name, layout, unit_fn, np.full(n, 1.0 / n), init_fn=lambda: init)


def ipw_mar(draw: Draw, family: str) -> EquationSystem:
    """Second-call propensity fitted among first-call nonrespondents; ``theta`` by weighting."""
    X, r1, r2, y, _, _ = _parts(draw, family)
    n = len(y)
    idx = np.arange(n)
    zero = np.zeros(X.shape[1] + 1)
    a0 = fit_logistic(X[r1 == 0], r2[r1 == 0])[0]
    init = np.concatenate([a0, [np.mean(y[r2 == 1])]])

    def unit_fn(par):
        pi2 = expit(X @ par["alpha2"])
        e_a = (1 - r1)[:, None] * X * (r2 - pi2)[:, None]
        e_t = (r1 + (r2 - r1) / pi2) * (y - par["theta"][0])
        return Moments(idx, np.column_stack([e_a, e_t]), zero)

    return _system("ipw_mar", [("alpha2", _NAMES), ("theta", ("theta",))], unit_fn, n, init)


def reg_mar(draw: Draw, family: str) -> EquationSystem:
    """Outcome regression with a second-call indicator; nonrespondents imputed at that level."""
    X, r1, r2, y, D, D2 = _parts(draw, family)
    n = len(y)
    idx = np.arange(n)
    zero = np.zeros(D.shape[1] + 1)
    b0 = _start(family, D, y, r2, np.ones(n))
    init = np.concatenate([b0, [np.mean(y[r2 == 1])]])

    def unit_fn(par):
        b = par["beta"]
        e_b = _outcome_score(family, D, y, r2, b)
        e_t = r2 * y + (1 - r2) * _predict(family, D2, b) - par["theta"][0]
        return Moments(idx, np.column_stack([e_b, e_t]), zero)

    return _system("reg_mar", [("beta", _NAMES + ("second_call",)), ("theta", ("theta",))],
                   unit_fn, n, init)


def dr_mar(draw: Draw, family: str) -> EquationSystem:
    """Augmented weighting within first-call nonrespondents."""
    X, r1, r2, y, D, D2 = _parts(draw, family)
    n = len(y)
    idx = np.arange(n)
    zero = np.zeros(X.shape[1] + D.shape[1] + 1)
    a0 = fit_logistic(X[r1 == 0], r2[r1 == 0])[0]
    b0 = _start(family, D, y, r2, np.ones(n))
    init = np.concatenate([a0, b0, [np.mean(y[r2 == 1])]])

    def unit_fn(par):
        pi2 = expit(X @ par["alpha2"])
        b = par["beta"]
        e_a = (1 - r1)[:, None] * X * (r2 - pi2)[:, None]
        e_b = _outcome_score(family, D, y, r2, b)
        g = _predict(family, D2, b)
        aug = g + (r2 - r1) / pi2 * (y - g)
        e_t = r1 * y + (1 - r1) * aug - par["theta"][0]
        return Moments(idx, np.column_stack([e_a, e_b, e_t]), zero)

    return _system(
        "dr_mar",
        [("alpha2", _NAMES), ("beta", _NAMES + ("second_call",)), ("theta", ("theta",))],
        unit_fn, n, init,
    )


MAR_BUILDERS = {"ipw_mar": ipw_mar, "reg_mar": reg_mar, "dr_mar": dr_mar}
