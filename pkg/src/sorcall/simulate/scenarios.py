"""Named simulation scenarios and their population truths."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.legendre import leggauss

from sorcall.errors import ConfigurationError
from sorcall.model import CovariateDistribution

DESIGNS = ("X", "Xt")


def design_matrix(kind: str, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    """``X = (1, xa, xb)`` or ``Xt = (1, xa^2, xb^2)``."""
    one = np.ones_like(xa)
    if kind == "X":
        return np.column_stack([one, xa, xb])
    if kind == "Xt":
        return np.column_stack([one, xa * xa, xb * xb])
    raise ConfigurationError(f"unknown design {kind!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    """Generating parameters for one simulation setting.

    ``w1`` is the design of the second-call baseline and ``w2`` the design of
    the second-call respondent outcome law; the first-call baseline always
    uses ``X``. ``delta`` is added to the odds ratio of the second call only.
    ``alpha_last``/``gamma_last`` (optional) add a third call among second-call
    nonrespondents with propensity ``expit(alpha_last @ X + gamma_last * y)``.
    """

    name: str
    family: str
    alpha1: tuple[float, ...]
    alpha2: tuple[float, ...]
    beta: tuple[float, ...]
    gamma: float
    w1: str = "X"
    w2: str = "X"
    sigma2: float | None = None
    delta: float = 0.0
    n: int = 5000
    replicates: int = 1000
    seed: int = 20250101
    alpha_last: tuple[float, ...] | None = None
    gamma_last: float = 0.0
    code: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        if self.family not in ("binary", "continuous"):
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.w1 not in DESIGNS or self.w2 not in DESIGNS:
            raise ConfigurationError("designs must be 'X' or 'Xt'")
        if self.family == "continuous" and not (self.sigma2 and self.sigma2 > 0):
            raise ConfigurationError("continuous scenarios need sigma2 > 0")
        for v in (self.alpha1, self.alpha2, self.beta):
            if len(v) != 3:
                raise ConfigurationError("coefficient vectors have three entries")

    @property
    def calls(self) -> int:
        return 2 if self.alpha_last is None else 3

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)


def _named() -> dict[tuple[str, str], ScenarioSpec]:
    b = {
        "TT": ((-1, .5, .2), (-.5, .5, .2), (-.5, .5, .5), 1.0, "X", "X"),
        "FT": ((-.2, -.5, .7), (-.6, 1.7, 1.0), (1.2, .5, .5), -.9, "Xt", "X"),
        "TF": ((-1, .5, .2), (-.5, .5, .2), (-.5, 5, -2.0), 1.3, "X", "Xt"),
        "FF": ((-.3, .5, .2), (-.5, -1.5, .2), (-1, 5, .5), 1.5, "Xt", "Xt"),
    }
    c = {
        "TT": ((0, .6, .5), (1.4, -.5, .2), (.6, 1.0, .3), .13, 3.0, "X", "X"),
        "FT": ((-.35, -.5, .7), (-.5, 1.8, 1), (-.8, 5, 3.5), .12, 2.0, "Xt", "X"),
        "TF": ((-1, 1, -.1), (.5, 1, -.1), (-.5, 5, -1), .5, .4, "X", "Xt"),
        "FF": ((-.3, -.5, 1), (-.4, .8, 0), (-1.5, 4, 3), .25, .25, "Xt", "Xt"),
    }
    out = {}
    for i, (k, (a1, a2, be, g, w1, w2)) in enumerate(b.items()):
        out[(k, "binary")] = ScenarioSpec(k, "binary", a1, a2, be, g, w1, w2, code=i + 1)
    for i, (k, (a1, a2, be, g, s2, w1, w2)) in enumerate(c.items()):
        out[(k, "continuous")] = ScenarioSpec(
            k, "continuous", a1, a2, be, g, w1, w2, sigma2=s2, code=i + 11
        )
    return out


NAMED = _named()


def scenario(name: str, family: str = "binary", **overrides) -> ScenarioSpec:
    """Look up a named setting (``TT``, ``FT``, ``TF``, ``FF``)."""
    try:
        spec = NAMED[(name.upper(), family)]
    except KeyError:
        raise ConfigurationError(f"unknown scenario {name!r} for family {family!r}") from None
    return spec.with_(**overrides) if overrides else spec


def sensitivity_scenario(delta: float, **overrides) -> ScenarioSpec:
    """Setting used to probe departures from stableness by ``delta``."""
    code = 1_000_000 + int(round(delta * 10_000))  # non-negative for |delta| < 100
    spec = ScenarioSpec(
        "sensitivity", "binary", (-1, .5, .2), (-.5, .5, .2), (-.5, .5, .5), 0.5,
        delta=float(delta), code=code,
    )
    return spec.with_(**overrides) if overrides else spec


# --------------------------------------------------------------------------
# Full-data conditional law implied by the respondent law and the propensities
# --------------------------------------------------------------------------


def linear_parts(spec: ScenarioSpec, xa: np.ndarray, xb: np.ndarray):
    """``(A1, A2, eta)``: baselines and respondent-law linear predictor."""
    X = design_matrix("X", xa, xb)
    A1 = X @ np.asarray(spec.alpha1, float)
    A2 = design_matrix(spec.w1, xa, xb) @ np.asarray(spec.alpha2, float)
    eta = design_matrix(spec.w2, xa, xb) @ np.asarray(spec.beta, float)
    return A1, A2, eta


def _tilt_terms(spec: ScenarioSpec, A1, A2):
    """Expansion ``1 / {(1 - pi1) pi2} = sum_c exp(a_c + t_c y)``."""
    g1 = spec.gamma
    g2 = spec.gamma + spec.delta
    zero = np.zeros_like(A1)
    return [(zero, 0.0), (A1 - A2, g1 - g2), (A1, g1), (-A2, -g2)]


def full_law(spec: ScenarioSpec, xa: np.ndarray, xb: np.ndarray):
    """Conditional law of ``Y`` given ``X`` in the whole population.

    The respondent law ``f2`` is known; the full law is proportional to
    ``f2(y | x) / {(1 - pi1(x, y)) pi2(x, y)}``. Binary: returns ``P(Y=1|x)``.
    Continuous: returns mixture ``(weights (n, 4), means (n, 4))`` with the
    common variance ``sigma2``.
    """
    A1, A2, eta = linear_parts(spec, xa, xb)
    terms = _tilt_terms(spec, A1, A2)
    if spec.family == "binary":
        p = 1.0 / (1.0 + np.exp(-eta))
        one = sum(np.exp(a + t) for a, t in terms)
        zero = sum(np.exp(a) for a, _ in terms)
        return p * one / (p * one + (1 - p) * zero)
    s2 = spec.sigma2
    logw = np.column_stack([a + t * eta + 0.5 * t * t * s2 for a, t in terms])
    logw -= logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)
    means = np.column_stack([eta + t * s2 for _, t in terms])
    return w, means


def conditional_mean(spec: ScenarioSpec, xa, xb) -> np.ndarray:
    law = full_law(spec, xa, xb)
    if spec.family == "binary":
        return law
    w, means = law
    return np.sum(w * means, axis=1)


def legendre_grid(nodes: int) -> CovariateDistribution:
    """Tensor Gauss-Legendre rule for ``Unif(-1, 1)^2`` as a weighted support."""
    t, w = leggauss(nodes)
    xa, xb = np.meshgrid(t, t, indexing="ij")
    mass = np.outer(w, w).ravel() / 4.0
    return CovariateDistribution(
        np.column_stack([xa.ravel(), xb.ravel()]), mass / mass.sum(), ("xa", "xb")
    )


def population_truth(spec: ScenarioSpec, nodes: int = 200) -> float:
    """``E(Y)`` by quadrature over the covariate law."""
    g = legendre_grid(nodes)
    return float(g.mass @ conditional_mean(spec, g.support[:, 0], g.support[:, 1]))


def population_distribution(nodes: int = 20) -> CovariateDistribution:
    """Known covariate law handed to the estimators."""
    return legendre_grid(nodes)
