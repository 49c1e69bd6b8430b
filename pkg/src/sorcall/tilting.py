"""Outcome expectations among second-call respondents and exponentially tilted
expectations among nonrespondents.

For a respondent outcome law ``f2(y | x)`` and log odds ratio ``Gamma(x, y)``,
the nonrespondent law is ``f2(y | x) * exp(-Gamma(x, y))`` renormalized. With
``Gamma = s(x) * y`` the tilt has closed forms: a logistic law shifts its
linear predictor by ``-s``; a Gaussian ``N(mu, s2)`` becomes ``N(mu - s*s2, s2)``.
Anything else falls back to 40-node Gauss-Hermite quadrature (approximate).
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.special import expit

from sorcall.errors import ConfigurationError
from sorcall.model import EstimandSpec, FloatArray, OddsRatioFeatures, OutcomeModel, estimand_fn

GH_NODES = 40
_gh_t, _gh_w = np.polynomial.hermite.hermgauss(GH_NODES)
_gh_w = _gh_w / np.sqrt(np.pi)

YFunction = Callable[[FloatArray, FloatArray], FloatArray]


def _as_2d(u, n: int) -> FloatArray:
    return np.asarray(u, dtype=float).reshape(n, -1)


def tilted_mean(family: str, eta: FloatArray, slope: FloatArray, sigma2: float | None = None):
    """Mean of the law tilted by ``exp(-slope * y)``.

    ``eta`` is the respondent-law linear predictor (log-odds or Gaussian mean).
    """
    if family == "binary":
        return expit(eta - slope)
    return eta - slope * sigma2


def _node_average(U: YFunction, x: FloatArray, ys: FloatArray, w: FloatArray) -> FloatArray:
    """``sum_k w[i, k] * U(x_i, ys[i, k])`` for every row ``i``."""
    n, m = ys.shape
    u = _as_2d(U(np.repeat(x, m, axis=0), ys.ravel()), n * m).reshape(n, m, -1)
    return np.einsum("nm,nmq->nq", w, u)


def expectation_from_eta(
    family: str,
    eta: FloatArray,
    sigma2: float | None,
    x: FloatArray,
    U: YFunction,
    slope: FloatArray | float = 0.0,
    log_tilt: YFunction | None = None,
    affine: bool = False,
) -> FloatArray:
    """Expectation of ``U(x, Y)`` under the respondent law tilted by ``exp(-Gamma)``.

    ``Gamma`` is ``slope * y`` unless a general ``log_tilt(x, y)`` is given.
    ``slope = 0`` with no ``log_tilt`` gives the untilted expectation.
    """
    n = x.shape[0]
    if family == "binary":
        if log_tilt is None:
            p = expit(eta - slope)
        else:
            p = expit(eta - np.asarray(log_tilt(x, np.ones(n)), dtype=float).ravel())
        if affine:
            return _as_2d(U(x, p), n)
        u0 = _as_2d(U(x, np.zeros(n)), n)
        u1 = _as_2d(U(x, np.ones(n)), n)
        return u0 + (u1 - u0) * p[:, None]
    if log_tilt is None:
        mu = eta - slope * sigma2
        if affine:
            return _as_2d(U(x, mu), n)
        ys = mu[:, None] + np.sqrt(2.0 * sigma2) * _gh_t[None, :]
        return _node_average(U, x, ys, np.broadcast_to(_gh_w, ys.shape))
    ys = eta[:, None] + np.sqrt(2.0 * sigma2) * _gh_t[None, :]
    m = ys.shape[1]
    gam = np.asarray(log_tilt(np.repeat(x, m, axis=0), ys.ravel()), dtype=float).reshape(n, m)
    logw = np.log(_gh_w)[None, :] - gam
    logw -= logw.max(axis=1, keepdims=True)
    tw = np.exp(logw)
    norm = tw.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(norm)) or np.any(norm <= 0):
        raise ArithmeticError("exponential tilt is not integrable at some rows")
    return _node_average(U, x, ys, tw / norm)


def conditional_expectation_g(
    outcome: OutcomeModel, U: YFunction, x: FloatArray, affine: bool = False
) -> FloatArray:
    """``E{U(X, Y) | X = x}`` under the respondent outcome law."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return expectation_from_eta(
        outcome.family, outcome.linear_predictor(x), outcome.sigma2, x, U, affine=affine
    )


def tilted_expectation_h(
    outcome: OutcomeModel,
    odds: OddsRatioFeatures,
    gamma: FloatArray,
    U: YFunction,
    x: FloatArray,
    affine: bool = False,
) -> FloatArray:
    """``E{U(X, Y) | X = x}`` under the nonrespondent law (exponential tilting)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    if gamma.shape[0] != odds.dim:
        raise ConfigurationError("gamma does not match odds-ratio features")
    eta = outcome.linear_predictor(x)
    if odds.linear_in_y:
        return expectation_from_eta(
            outcome.family, eta, outcome.sigma2, x, U,
            slope=odds.slope_features(x) @ gamma, affine=affine,
        )
    return expectation_from_eta(
        outcome.family, eta, outcome.sigma2, x, U,
        log_tilt=lambda xx, yy: odds(xx, yy) @ gamma,
    )


def impute_estimand_h_m(
    outcome: OutcomeModel,
    odds: OddsRatioFeatures,
    gamma: FloatArray,
    spec: EstimandSpec,
    theta: FloatArray,
    x: FloatArray,
) -> FloatArray:
    """Nonrespondent expectation of ``m(X, Y; theta)``."""
    # m is affine in y for both estimand kinds
    return tilted_expectation_h(
        outcome, odds, gamma, lambda xx, yy: estimand_fn(spec, xx, yy, theta), x, affine=True
    )
