"""Pieces shared by the equation builders."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from sorcall.errors import ConfigurationError, PositivityError
from sorcall.glm import fit_gaussian, fit_logistic
from sorcall.model import (
    CovariateDistribution,
    EstimandSpec,
    FeatureMap,
    FloatArray,
    OddsRatioFeatures,
    SurveyDataset,
    estimand_fn,
    linear_features,
)
from sorcall.tilting import expectation_from_eta

EPS = 1e-10


@dataclass(frozen=True)
class WorkingModels:
    """Feature maps of the working models; coefficients are the unknowns.

    ``baseline1``/``baseline2`` give ``A_1``/``A_2``; ``odds`` the shared log
    odds ratio; ``outcome`` the second-call respondent outcome law. The
    ``*_last`` fields configure the extra call-K models of multi-call systems.
    """

    baseline1: FeatureMap
    baseline2: FeatureMap
    odds: OddsRatioFeatures = OddsRatioFeatures()
    outcome: FeatureMap | None = None
    family: str = "binary"
    baseline_last: FeatureMap | None = None
    odds_last: OddsRatioFeatures | None = None
    outcome_last: FeatureMap | None = None

    @classmethod
    def linear(cls, n_covariates: int, family: str = "binary", names=None) -> "WorkingModels":
        """Intercept plus every covariate in every design; ``Gamma = gamma * y``."""
        f = linear_features(range(n_covariates), names=names)
        return cls(f, f, OddsRatioFeatures(), f, family, f, OddsRatioFeatures(), f)

    def __post_init__(self) -> None:
        if self.family not in ("binary", "gaussian"):
            raise ConfigurationError(f"unknown outcome family {self.family!r}")


def intercept_guess(names: tuple[str, ...], rate: float) -> np.ndarray:
    out = np.zeros(len(names))
    if names and names[0] == "intercept":
        rate = min(max(rate, 1e-3), 1 - 1e-3)
        out[0] = np.log(rate / (1 - rate))
    return out


class Prepared:
    """Respondent-level arrays and support-level design matrices."""

    def __init__(self, data: SurveyDataset, dist: CovariateDistribution | None):
        self.data = data
        self.index = np.nonzero(data.respondent)[0]
        self.weight = data.weight / data.weight.sum()
        self.X = data.respondent_covariates()
        self.y = data.y
        r = data.r[data.respondent].astype(float)
        self.r1 = r[:, 0]
        self.r2 = r[:, 1]
        self.rK = r[:, -1]
        self.dist = dist
        if dist is not None:
            if dist.dim != self.X.shape[1]:
                raise ConfigurationError(
                    f"covariate distribution has dimension {dist.dim}, data has {self.X.shape[1]}"
                )
            self.S = dist.support
            self.mass = dist.mass

    def rate(self, num: np.ndarray, den: np.ndarray) -> float:
        w = self.data.weight
        d = np.sum(w * den)
        return float(np.sum(w * num) / d) if d > 0 else 0.5

    def check(self, pi: FloatArray, label: str) -> None:
        bad = (pi <= EPS) | (pi >= 1 - EPS) | ~np.isfinite(pi)
        if bad.any():
            j = int(np.argmax(bad))
            raise PositivityError(int(self.index[j]), float(pi[j]), label)


class OutcomePart:
    """Working outcome law on respondents and on the covariate support."""

    def __init__(self, family: str, design: FeatureMap, X: FloatArray, S: FloatArray | None):
        self.family = family
        self.design = design
        self.D = design(X)
        self.DS = design(S) if S is not None else None
        self.p = design.dim
        self.labels = design.names + (("log_sigma2",) if family == "gaussian" else ())

    def split(self, b: FloatArray) -> tuple[FloatArray, float | None]:
        if self.family == "gaussian":
            return b[: self.p], float(np.exp(b[self.p]))
        return b, None

    def score(self, b: FloatArray, y: FloatArray) -> FloatArray:
        coef, s2 = self.split(b)
        eta = self.D @ coef
        if self.family == "binary":
            return self.D * (y - expit(eta))[:, None]
        res = y - eta
        return np.hstack([self.D * (res / s2)[:, None], (0.5 * (res * res / s2 - 1.0))[:, None]])

    def fit(self, mask: np.ndarray, y: FloatArray, w: FloatArray) -> FloatArray:
        """Respondent-only fit on the rows in ``mask``, as a starting value."""
        if mask.sum() == 0:
            return np.zeros(len(self.labels))
        if self.family == "binary":
            coef, _ = fit_logistic(self.D[mask], y[mask], w[mask])
            return np.clip(coef, -20, 20)
        coef, s2 = fit_gaussian(self.D[mask], y[mask], w[mask])
        return np.concatenate([coef, [np.log(s2)]])


class TiltPart:
    """Log odds-ratio features on respondents and support, plus tilting."""

    def __init__(self, odds: OddsRatioFeatures, X: FloatArray, y: FloatArray, S: FloatArray | None):
        self.odds = odds
        self.Uo = odds(X, y)
        self.X, self.S = X, S
        if odds.linear_in_y:
            self.Z = odds.slope_features(X)
            self.ZS = odds.slope_features(S) if S is not None else None

    def gamma_at(self, g: FloatArray) -> FloatArray:
        """``Gamma(x_i, y_i)`` on respondents."""
        return self.Uo @ g

    def expect(
        self,
        where: str,
        U: Callable,
        family: str,
        eta: FloatArray,
        s2: float | None,
        g: FloatArray | None,
        delta: float = 0.0,
        affine: bool = True,
    ) -> FloatArray:
        """``E{U | x}`` on respondents (``where="r"``) or support (``"s"``).

        ``g=None`` gives the untilted respondent law; otherwise the law is
        tilted by ``Gamma(x, y; g) + delta * y``.
        """
        x = self.X if where == "r" else self.S
        if g is None:
            return expectation_from_eta(family, eta, s2, x, U, affine=affine)
        if self.odds.linear_in_y:
            Z = self.Z if where == "r" else self.ZS
            slope = Z @ g
            if delta:
                slope = slope + delta
            return expectation_from_eta(family, eta, s2, x, U, slope=slope, affine=affine)
        odds = self.odds
        if delta:
            tilt = lambda xx, yy: odds(xx, yy) @ g + delta * yy  # noqa: E731
        else:
            tilt = lambda xx, yy: odds(xx, yy) @ g  # noqa: E731
        return expectation_from_eta(family, eta, s2, x, U, log_tilt=tilt)


def estimand_on(spec: EstimandSpec) -> Callable[[FloatArray], Callable]:
    """``theta -> U(x, y)`` closure for use with tilting."""

    def make(theta):
        return lambda xx, yy: estimand_fn(spec, xx, yy, theta)

    return make


def cc_start(spec: EstimandSpec, prep: Prepared) -> FloatArray:
    """Complete-case solution of ``sum w r_K m(x, y; theta) = 0``."""
    w = prep.weight[prep.index]
    if spec.kind == "mean":
        return np.array([np.average(prep.y, weights=w)]) if w.sum() > 0 else np.zeros(1)
    coef, _ = fit_logistic(spec.design(prep.X), prep.y, w)
    return np.clip(coef, -20, 20)


def check_dim(name: str, got: int, want: int) -> None:
    if got != want:
        raise ConfigurationError(f"{name} has dimension {got}, expected {want}")
