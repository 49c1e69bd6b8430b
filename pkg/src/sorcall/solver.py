"""Root finding and M-estimation inference for square estimating-equation systems."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable

import numpy as np
from scipy.stats import norm

from sorcall.errors import PositivityError, SingularCovarianceError
from sorcall.model import FloatArray, SurveyDataset

if TYPE_CHECKING:
    from sorcall.equations.systems import EquationSystem


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 100
    max_halvings: int = 30
    restarts: int = 5
    jitter_sd: float = 0.5
    ridge: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class SolveResult:
    """Solution of ``g(params) = 0`` with sandwich covariance when available.

    ``covariance`` is ``None`` when the solve did not converge or the bread
    matrix was singular; ``message`` then says why.
    """

    params: FloatArray
    residual_norm: float
    iterations: int
    converged: bool
    covariance: FloatArray | None = None
    labels: tuple[str, ...] = ()
    restarts: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def se(self) -> FloatArray:
        if self.covariance is None:
            return np.full(self.params.shape, np.nan)
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    def get(self, label: str) -> tuple[float, float]:
        """Estimate and standard error of one labelled parameter."""
        j = self.labels.index(label)
        return float(self.params[j]), float(self.se[j])


def numeric_jacobian(g: Callable[[FloatArray], FloatArray], at: FloatArray) -> FloatArray:
    """Central-difference Jacobian with steps ``max(1e-6, 1e-6 |x_j|)``."""
    at = np.asarray(at, dtype=float)
    cols = []
    for j in range(at.shape[0]):
        h = max(1e-6, 1e-6 * abs(at[j]))
        e = np.zeros_like(at)
        e[j] = h
        cols.append((np.asarray(g(at + e)) - np.asarray(g(at - e))) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def _safe_norm(g, x) -> float:
    try:
        v = np.asarray(g(x), dtype=float)
    except (PositivityError, ArithmeticError, FloatingPointError):
        return np.inf
    return float(np.max(np.abs(v))) if np.all(np.isfinite(v)) else np.inf


def _newton(g, x0, opts: SolverOptions) -> tuple[FloatArray, float, int, bool]:
    x = np.asarray(x0, dtype=float).copy()
    f = _safe_norm(g, x)
    if not np.isfinite(f):
        return x, f, 0, False
    for it in range(1, opts.max_iter + 1):
        if f < opts.tol:
            return x, f, it - 1, True
        gx = np.asarray(g(x), dtype=float)
        J = numeric_jacobian(g, x)
        try:
            step = np.linalg.solve(J, gx)
            if not np.all(np.isfinite(step)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            try:
                step = np.linalg.solve(J + opts.ridge * np.eye(len(x)), gx)
            except np.linalg.LinAlgError:
                return x, f, it, False
        t = 1.0
        for _ in range(opts.max_halvings + 1):
            cand = x - t * step
            fc = _safe_norm(g, cand)
            if fc < f:
                break
            t *= 0.5
        else:
            return x, f, it, False
        x, f = cand, fc
    return x, f, opts.max_iter, f < opts.tol


def solve(
    system: EquationSystem | Callable[[FloatArray], FloatArray],
    init: FloatArray | None = None,
    opts: SolverOptions | None = None,
) -> SolveResult:
    """Damped Newton with halving line search and jittered restarts.

    Accepts an :class:`EquationSystem` or a plain callable. Steps that leave
    the positivity region count as failed line-search trials.
    """
    opts = opts or SolverOptions()
    if init is None:
        init = system.initial()
    init = np.asarray(init, dtype=float)
    labels = tuple(system.layout.labels) if hasattr(system, "layout") else ()
    best = _newton(system, init, opts)
    used = 0
    if not best[3] and opts.restarts:
        rng = np.random.default_rng(opts.seed)
        for k in range(opts.restarts):
            used = k + 1
            trial = _newton(system, init + rng.normal(0.0, opts.jitter_sd, init.shape), opts)
            if trial[3] or trial[1] < best[1]:
                best = trial
            if trial[3]:
                break
    x, f, it, ok = best
    return SolveResult(x, f, it, ok, None, labels, used,
                       "" if ok else f"no root found (max |g| = {f:.3g})")


def sandwich_covariance(system: EquationSystem, params: FloatArray) -> FloatArray:
    """``A^{-1} B A^{-T}`` with ``A = dg/dparams`` and ``B = sum (w_i)^2 psi_i psi_i^T``.

    ``psi_i`` are per-unit estimating functions centred by the population
    constants, so ``sum_i w_i psi_i = g = 0`` at the root.
    """
    params = np.asarray(params, dtype=float)
    A = numeric_jacobian(system, params)
    psi = system.per_unit(params) * system.weight[:, None]
    B = psi.T @ psi
    cond = np.linalg.cond(A) if A.size else 1.0
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularCovarianceError(float(cond))
    Ainv = np.linalg.inv(A)
    cov = Ainv @ B @ Ainv.T
    return 0.5 * (cov + cov.T)


def fit(
    system: EquationSystem,
    opts: SolverOptions | None = None,
    warm_start: bool = True,
    covariance: bool = True,
) -> SolveResult:
    """Solve with a missing-at-random warm start, then attach the sandwich.

    The warm start solves the system with every odds-ratio block held at zero
    and uses that root, with zero odds ratios, as the starting point.
    """
    opts = opts or SolverOptions()
    init = system.initial()
    gam = [b.name for b in system.layout.blocks if b.name.startswith("gamma")]
    if warm_start and gam:
        sub = system.fix(**{name: 0.0 for name in gam})
        pre = solve(sub, sub.initial(), opts)
        if pre.converged:
            parts = sub.expand(pre.params)
            init = system.layout.join({b.name: parts[b.name] for b in system.layout.blocks})
    res = solve(system, init, opts)
    if not (res.converged and covariance):
        return res
    try:
        cov = sandwich_covariance(system, res.params)
    except SingularCovarianceError as err:
        return SolveResult(res.params, res.residual_norm, res.iterations, True, None,
                           res.labels, res.restarts, str(err))
    return SolveResult(res.params, res.residual_norm, res.iterations, True, cov,
                       res.labels, res.restarts)


def confidence_interval(result: SolveResult, level: float = 0.95) -> FloatArray:
    """``(dim, 2)`` normal-approximation intervals ``estimate +/- z * SE``."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = norm.ppf(0.5 + level / 2)
    se = result.se
    return np.column_stack([result.params - z * se, result.params + z * se])


def bootstrap(
    build: Callable[[SurveyDataset], EquationSystem],
    data: SurveyDataset,
    resamples: int = 200,
    seed: int = 0,
    opts: SolverOptions | None = None,
) -> tuple[FloatArray, int]:
    """Unit-level nonparametric bootstrap covariance.

    ``build`` maps a dataset to its system. Resample ``b`` uses the
    substream ``SeedSequence(seed, spawn_key=(b,))``, so results do not
    depend on execution order. Returns the covariance and the number of
    resamples that failed to converge (excluded).
    """
    ests, failed = [], 0
    for b in range(resamples):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
        idx = rng.integers(0, data.n, data.n)
        try:
            res = fit(build(data.take(idx)), opts, covariance=False)
        except (ArithmeticError, ValueError):
            failed += 1
            continue
        if res.converged:
            ests.append(res.params)
        else:
            failed += 1
    if len(ests) < 2:
        raise SingularCovarianceError(np.inf)
    return np.cov(np.array(ests), rowvar=False, ddof=1).reshape(len(ests[0]), -1), failed
