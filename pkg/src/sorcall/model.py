"""Domain types: survey data with callbacks, covariate laws, working models."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.special import expit

from sorcall.errors import ConfigurationError, DataError

FloatArray = NDArray[np.float64]


# --------------------------------------------------------------------------
# Feature maps
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureMap:
    """A vectorized map from covariate rows ``(n, p)`` to features ``(n, q)``."""

    fn: Callable[[FloatArray], FloatArray]
    names: tuple[str, ...]

    def __call__(self, x: FloatArray) -> FloatArray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.asarray(self.fn(x), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape != (x.shape[0], len(self.names)):
            raise ConfigurationError(
                f"feature map {self.names} returned shape {out.shape}, "
                f"expected ({x.shape[0]}, {len(self.names)})"
            )
        return out

    @property
    def dim(self) -> int:
        return len(self.names)


def linear_features(
    columns: Sequence[int | Sequence[int]],
    names: Sequence[str] | None = None,
    intercept: bool = True,
) -> FeatureMap:
    """Intercept plus raw covariate columns.

    An entry of ``columns`` that is itself a sequence of indices denotes the
    product of those columns (an interaction term).
    """
    terms = [(c,) if isinstance(c, (int, np.integer)) else tuple(c) for c in columns]
    if names is None:
        names = [":".join(f"x{j}" for j in t) for t in terms]
    names = list(names)
    if len(names) != len(terms):
        raise ConfigurationError("names and columns differ in length")
    if intercept:
        names = ["intercept"] + names

    def fn(x: FloatArray) -> FloatArray:
        cols = [np.prod(x[:, list(t)], axis=1) for t in terms]
        if intercept:
            cols.insert(0, np.ones(x.shape[0]))
        if not cols:
            return np.zeros((x.shape[0], 0))
        return np.column_stack(cols)

    return FeatureMap(fn, tuple(names))


def intercept_only() -> FeatureMap:
    return linear_features([], intercept=True)


@dataclass(frozen=True)
class OddsRatioFeatures:
    """Features ``u(x, y)`` of the log odds ratio ``Gamma(x, y) = u(x, y) @ gamma``.

    The default form is ``u(x, y) = y * z(x)`` with ``z`` a feature map
    (``z = 1`` gives ``Gamma = gamma * y``). This is linear in ``y`` and admits
    closed-form tilting. A general callable ``fn(x, y)`` may be supplied
    instead; it must vanish at ``y = 0``.
    """

    z: FeatureMap | None = None
    fn: Callable[[FloatArray, FloatArray], FloatArray] | None = None
    fn_names: tuple[str, ...] = ()

    @property
    def names(self) -> tuple[str, ...]:
        if self.fn is not None:
            return self.fn_names
        if self.z is None:
            return ("y",)
        return tuple("y" if n == "intercept" else f"y:{n}" for n in self.z.names)

    @property
    def dim(self) -> int:
        return len(self.names)

    @property
    def linear_in_y(self) -> bool:
        return self.fn is None

    def slope_features(self, x: FloatArray) -> FloatArray:
        """``z(x)`` such that ``u(x, y) = y * z(x)``; only for the linear form."""
        if self.fn is not None:
            raise ConfigurationError("odds-ratio features are not linear in y")
        x = np.atleast_2d(x)
        if self.z is None:
            return np.ones((x.shape[0], 1))
        return self.z(x)

    def __call__(self, x: FloatArray, y: FloatArray) -> FloatArray:
        y = np.asarray(y, dtype=float)
        if self.fn is None:
            return y[:, None] * self.slope_features(x)
        out = np.asarray(self.fn(np.atleast_2d(x), y), dtype=float)
        return out.reshape(len(y), -1)


def scalar_odds() -> OddsRatioFeatures:
    return OddsRatioFeatures()


# --------------------------------------------------------------------------
# Data
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SurveyDataset:
    """Survey sample with callback indicators.

    Outcome and co-missing covariates are stored only for final respondents
    (``r[:, K-1] == 1``), in respondent order; the presence mask is
    ``respondent``. Weights are normalized to mean one on construction.

    Attributes
    ----------
    weight : (n,) sampling weights
    r : (n, K) cumulative response indicators, monotone in k
    y : (n_resp,) outcomes of final respondents
    x_missing : (n_resp, p1) covariates missing together with y
    x_observed : (n, p2) always-observed design covariates
    """

    weight: FloatArray
    r: NDArray[np.int8]
    y: FloatArray
    x_missing: FloatArray
    x_observed: FloatArray
    missing_names: tuple[str, ...] = ()
    observed_names: tuple[str, ...] = ()
    respondent: NDArray[np.bool_] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        w = np.asarray(self.weight, dtype=float).ravel()
        r = np.asarray(self.r)
        if r.ndim != 2 or r.shape[1] < 2:
            raise DataError("r must be (n, K) with K >= 2")
        n = r.shape[0]
        if w.shape[0] != n:
            raise DataError("weight length does not match r")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("weights must be strictly positive and finite")
        if not np.all((r == 0) | (r == 1)):
            raise DataError("response indicators must be 0/1")
        bad = np.nonzero(np.any(np.diff(r, axis=1) < 0, axis=1))[0]
        if bad.size:
            raise DataError(f"response indicators not monotone for unit {int(bad[0])}")
        resp = r[:, -1] == 1
        y = np.asarray(self.y, dtype=float).ravel()
        xm = np.asarray(self.x_missing, dtype=float)
        if xm.ndim == 1:
            xm = xm.reshape(-1, 1) if xm.size else np.zeros((y.shape[0], 0))
        xo = np.asarray(self.x_observed, dtype=float)
        if xo.ndim == 1:
            xo = xo.reshape(n, -1) if xo.size else np.zeros((n, 0))
        if y.shape[0] != resp.sum() or xm.shape[0] != resp.sum():
            raise DataError("y and x_missing must be present exactly for final respondents")
        if xo.shape[0] != n:
            raise DataError("x_observed must have one row per unit")
        for name, arr in (("y", y), ("x_missing", xm), ("x_observed", xo)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite value in {name}")
        mn = tuple(self.missing_names) or tuple(f"x{j}" for j in range(xm.shape[1]))
        on = tuple(self.observed_names) or tuple(
            f"x{j}" for j in range(xm.shape[1], xm.shape[1] + xo.shape[1])
        )
        object.__setattr__(self, "weight", w / w.mean())
        object.__setattr__(self, "r", r.astype(np.int8))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x_missing", xm)
        object.__setattr__(self, "x_observed", xo)
        object.__setattr__(self, "missing_names", mn)
        object.__setattr__(self, "observed_names", on)
        object.__setattr__(self, "respondent", resp)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def K(self) -> int:
        return self.r.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.missing_names + self.observed_names

    def respondent_covariates(self) -> FloatArray:
        """Full covariate rows ``(X_1, X_2)`` of final respondents."""
        return np.hstack([self.x_missing, self.x_observed[self.respondent]])

    def call(self, k: int) -> NDArray[np.int8]:
        """Cumulative response indicator for call ``k`` (1-based)."""
        return self.r[:, k - 1]

    def take(self, idx: NDArray[np.intp]) -> "SurveyDataset":
        """Row subset (e.g. a bootstrap resample); weights carried along."""
        idx = np.asarray(idx)
        pos = np.cumsum(self.respondent) - 1
        keep = idx[self.respondent[idx]]
        return SurveyDataset(
            weight=self.weight[idx],
            r=self.r[idx],
            y=self.y[pos[keep]],
            x_missing=self.x_missing[pos[keep]],
            x_observed=self.x_observed[idx],
            missing_names=self.missing_names,
            observed_names=self.observed_names,
        )

    def collapse_calls(self, k: int) -> "SurveyDataset":
        """Keep the first ``k`` calls; later respondents become nonrespondents."""
        if not 2 <= k <= self.K:
            raise ConfigurationError(f"cannot collapse {self.K} calls to {k}")
        if k == self.K:
            return self
        keep = self.r[self.respondent, k - 1] == 1
        return SurveyDataset(
            weight=self.weight,
            r=self.r[:, :k],
            y=self.y[keep],
            x_missing=self.x_missing[keep],
            x_observed=self.x_observed,
            missing_names=self.missing_names,
            observed_names=self.observed_names,
        )


@dataclass(frozen=True)
class CovariateDistribution:
    """Finite weighted support of the population covariate law."""

    support: FloatArray
    mass: FloatArray
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        s = np.asarray(self.support, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        m = np.asarray(self.mass, dtype=float).ravel()
        if s.shape[0] == 0:
            raise ConfigurationError("empty covariate support")
        if m.shape[0] != s.shape[0]:
            raise ConfigurationError("support and mass differ in length")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ConfigurationError("masses must be finite and nonnegative")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ConfigurationError(f"masses sum to {m.sum()!r}, not 1")
        names = tuple(self.names) or tuple(f"x{j}" for j in range(s.shape[1]))
        if len(names) != s.shape[1]:
            raise ConfigurationError("names do not match support dimension")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_counts(cls, support, counts, names=()) -> "CovariateDistribution":
        c = np.asarray(counts, dtype=float)
        if np.any(c < 0) or c.sum() <= 0:
            raise ConfigurationError("counts must be nonnegative with positive total")
        return cls(support, c / c.sum(), names)

    @property
    def dim(self) -> int:
        return self.support.shape[1]


@dataclass(frozen=True)
class PropensityModel:
    """Call-specific baselines sharing one log odds-ratio term.

    ``pi_k(x, y) = expit(baseline_k(x) @ alphas[k-1] + odds(x, y) @ gamma)``.
    """

    baselines: tuple[FeatureMap, ...]
    alphas: tuple[FloatArray, ...]
    odds: OddsRatioFeatures
    gamma: FloatArray

    def __post_init__(self) -> None:
        if len(self.baselines) != len(self.alphas):
            raise ConfigurationError("one baseline design per call coefficient vector")
        alphas = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in self.alphas)
        for k, (b, a) in enumerate(zip(self.baselines, alphas), start=1):
            if b.dim != a.shape[0]:
                raise ConfigurationError(
                    f"call {k}: alpha has {a.shape[0]} entries, design has {b.dim}"
                )
        gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if gamma.shape[0] != self.odds.dim:
            raise ConfigurationError("gamma does not match odds-ratio features")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "gamma", gamma)


@dataclass(frozen=True)
class OutcomeModel:
    """Outcome law among one call's respondents: logistic or Gaussian-linear."""

    family: str
    design: FeatureMap
    beta: FloatArray
    sigma2: float | None = None

    def __post_init__(self) -> None:
        if self.family not in ("binary", "gaussian"):
            raise ConfigurationError(f"unknown outcome family {self.family!r}")
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if beta.shape[0] != self.design.dim:
            raise ConfigurationError("beta does not match outcome design")
        if self.family == "gaussian" and not (self.sigma2 is not None and self.sigma2 > 0):
            raise ConfigurationError("gaussian outcome model needs sigma2 > 0")
        object.__setattr__(self, "beta", beta)

    def linear_predictor(self, x: FloatArray) -> FloatArray:
        return self.design(x) @ self.beta

    def mean(self, x: FloatArray) -> FloatArray:
        eta = self.linear_predictor(x)
        return expit(eta) if self.family == "binary" else eta


@dataclass(frozen=True)
class EstimandSpec:
    """Full-data estimating function ``m(x, y; theta)``.

    ``kind="mean"`` gives ``y - theta``; ``kind="logistic"`` gives
    ``x_d * (y - expit(x_d @ theta))`` with ``x_d = design(x)``.
    """

    kind: str = "mean"
    design: FeatureMap | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "logistic"):
            raise ConfigurationError(f"unknown estimand kind {self.kind!r}")
        if self.kind == "logistic" and self.design is None:
            raise ConfigurationError("logistic estimand needs a regressor design")

    @property
    def dim(self) -> int:
        return 1 if self.kind == "mean" else self.design.dim

    @property
    def names(self) -> tuple[str, ...]:
        return ("theta",) if self.kind == "mean" else tuple(f"theta:{n}" for n in self.design.names)


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def propensity(model: PropensityModel, k: int, x: FloatArray, y: FloatArray) -> FloatArray:
    """Response propensity for call ``k`` at rows ``x`` and outcomes ``y``."""
    if not 1 <= k <= len(model.alphas):
        raise ConfigurationError(f"no propensity model for call {k}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    eta = model.baselines[k - 1](x) @ model.alphas[k - 1] + model.odds(x, y) @ model.gamma
    return expit(eta)


def population_expectation(
    dist: CovariateDistribution, V: Callable[[FloatArray], FloatArray]
) -> FloatArray:
    """``sum_j mass_j * V(x_j)`` over the support."""
    vals = np.asarray(V(dist.support), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != dist.support.shape[0]:
        raise ConfigurationError("V must return one row per support point")
    return dist.mass @ vals


def product_distribution(
    d1: CovariateDistribution, d2: CovariateDistribution
) -> CovariateDistribution:
    """Independent product law; support rows are ``(x1, x2)`` concatenations."""
    i1, i2 = np.meshgrid(np.arange(len(d1.mass)), np.arange(len(d2.mass)), indexing="ij")
    i1, i2 = i1.ravel(), i2.ravel()
    support = np.hstack([d1.support[i1], d2.support[i2]])
    mass = d1.mass[i1] * d2.mass[i2]
    mass = mass / mass.sum()
    return CovariateDistribution(support, mass, d1.names + d2.names)


def empirical_distribution(
    rows: FloatArray, weights: FloatArray | None = None, names: Sequence[str] = ()
) -> CovariateDistribution:
    """Weighted empirical law of the distinct rows of ``rows``."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    w = np.ones(rows.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=w, minlength=uniq.shape[0])
    return CovariateDistribution(uniq, mass / mass.sum(), tuple(names))


def balanced_distribution(
    rows: FloatArray, names: Sequence[str] = ()
) -> CovariateDistribution:
    """Uniform law over the distinct rows (exact factorial balance)."""
    uniq = np.unique(np.atleast_2d(np.asarray(rows, dtype=float)), axis=0)
    return CovariateDistribution(uniq, np.full(uniq.shape[0], 1.0 / uniq.shape[0]), tuple(names))


def factorial_distribution(levels: Sequence[Sequence[float]], names=()) -> CovariateDistribution:
    """Uniform law on the Cartesian product of per-factor levels."""
    support = np.array(list(itertools.product(*levels)), dtype=float)
    return CovariateDistribution(support, np.full(len(support), 1.0 / len(support)), tuple(names))


def estimand_fn(spec: EstimandSpec, x: FloatArray, y: FloatArray, theta: FloatArray) -> FloatArray:
    """Evaluate ``m(x, y; theta)`` row-wise, returning ``(n, dim)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if theta.shape[0] != spec.dim:
        raise ConfigurationError(f"theta has {theta.shape[0]} entries, estimand needs {spec.dim}")
    if spec.kind == "mean":
        return (y - theta[0])[:, None]
    xd = spec.design(x)
    return xd * (y - expit(xd @ theta))[:, None]
