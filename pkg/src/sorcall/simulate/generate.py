"""Random draws from the simulation settings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from sorcall.model import SurveyDataset
from sorcall.simulate.scenarios import ScenarioSpec, design_matrix, full_law, linear_parts


@dataclass(frozen=True)
class Draw:
    """A simulated survey plus the full data it was masked from."""

    data: SurveyDataset
    x: np.ndarray  # (n, 2) covariates (xa, xb) for every unit
    y: np.ndarray  # (n,) outcomes for every unit
    r: np.ndarray  # (n, K) response indicators


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator keyed by ``(seed, key)``; independent of execution order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _outcomes(spec: ScenarioSpec, xa, xb, rng) -> np.ndarray:
    law = full_law(spec, xa, xb)
    n = xa.shape[0]
    if spec.family == "binary":
        return (rng.random(n) < law).astype(float)
    w, means = law
    comp = (rng.random(n)[:, None] > np.cumsum(w, axis=1)).sum(axis=1)
    comp = np.minimum(comp, w.shape[1] - 1)
    return means[np.arange(n), comp] + np.sqrt(spec.sigma2) * rng.standard_normal(n)


def generate(spec: ScenarioSpec, rng: np.random.Generator, n: int | None = None) -> Draw:
    """One sample of size ``n`` (default ``spec.n``).

    The outcome is drawn from the full-data conditional law implied by the
    second-call respondent law, then responses are drawn call by call; the
    covariates and outcome of final nonrespondents are masked.
    """
    n = spec.n if n is None else n
    xa = rng.uniform(-1.0, 1.0, n)
    xb = rng.uniform(-1.0, 1.0, n)
    y = _outcomes(spec, xa, xb, rng)
    A1, A2, _ = linear_parts(spec, xa, xb)
    r1 = rng.random(n) < expit(A1 + spec.gamma * y)
    u2 = rng.random(n) < expit(A2 + (spec.gamma + spec.delta) * y)
    r2 = r1 | u2
    cols = [r1, r2]
    if spec.alpha_last is not None:
        XK = design_matrix("X", xa, xb) @ np.asarray(spec.alpha_last, float)
        u3 = rng.random(n) < expit(XK + spec.gamma_last * y)
        cols.append(r2 | u3)
    r = np.column_stack(cols).astype(np.int8)
    resp = r[:, -1] == 1
    x = np.column_stack([xa, xb])
    data = SurveyDataset(
        weight=np.ones(n),
        r=r,
        y=y[resp],
        x_missing=x[resp],
        x_observed=np.zeros((n, 0)),
        missing_names=("xa", "xb"),
    )
    return Draw(data, x, y, r)


def generate_binary(spec: ScenarioSpec, rng: np.random.Generator, n: int | None = None) -> Draw:
    if spec.family != "binary":
        raise ValueError("scenario is not binary")
    return generate(spec, rng, n)


def generate_continuous(spec: ScenarioSpec, rng: np.random.Generator, n: int | None = None) -> Draw:
    if spec.family != "continuous":
        raise ValueError("scenario is not continuous")
    return generate(spec, rng, n)


@dataclass(frozen=True)
class ChoiceParams:
    """Latent-utility model for voting and for responding at each call."""

    beta: tuple[float, float, float] = (0.2, 0.35, 0.3)
    alpha1: tuple[float, float] = (-0.6, 0.4)
    alpha2: tuple[float, float] = (0.35, -0.3)
    gamma1: float = 0.3
    gamma2: float = 0.3
    n: int = 1000


@dataclass(frozen=True)
class ChoiceDraw:
    x: np.ndarray
    c: np.ndarray
    y: np.ndarray
    r1: np.ndarray
    r2: np.ndarray


def generate_choice_model(params: ChoiceParams, rng: np.random.Generator) -> ChoiceDraw:
    """Utilities with independent standard logistic errors, thresholded at 0.

    ``C`` is the unmeasured common cause of voting and responding; it is
    returned for diagnostics only.
    """
    n = params.n
    x = rng.standard_normal(n)
    c = rng.standard_normal(n)
    b0, b1, b2 = params.beta
    e = rng.logistic(size=(n, 3))
    y = (b0 + b1 * x + b2 * c + e[:, 0] > 0).astype(float)
    r1 = (params.alpha1[0] + params.alpha1[1] * x + params.gamma1 * c + e[:, 1] > 0)
    u2 = (params.alpha2[0] + params.alpha2[1] * x + params.gamma2 * c + e[:, 2] > 0)
    r2 = r1 | u2
    return ChoiceDraw(x, c, y, r1.astype(float), r2.astype(float))
