"""Weighted logistic and Gaussian-linear fits (IRLS / WLS)."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from sorcall.model import FloatArray


def fit_logistic(
    X: FloatArray,
    y: FloatArray,
    weight: FloatArray | None = None,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> tuple[FloatArray, bool]:
    """Weighted maximum-likelihood logistic regression.

    Returns the coefficients and a convergence flag. A tiny ridge keeps the
    Newton step defined under (quasi-)separation; the flag then reports
    non-convergence rather than raising.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(X.shape[0]) if weight is None else np.asarray(weight, dtype=float)
    beta = np.zeros(X.shape[1])
    ybar = np.average(y, weights=w) if w.sum() > 0 else 0.5
    if X.shape[1] and np.allclose(X[:, 0], 1.0) and 0 < ybar < 1:
        beta[0] = np.log(ybar / (1 - ybar))
    for _ in range(max_iter):
        p = expit(X @ beta)
        grad = X.T @ (w * (y - p))
        hess = (X * (w * p * (1 - p))[:, None]).T @ X
        hess[np.diag_indices_from(hess)] += 1e-12
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return beta, False
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            return beta, bool(np.all(np.isfinite(beta)))
    return beta, False


def fit_gaussian(
    X: FloatArray, y: FloatArray, weight: FloatArray | None = None
) -> tuple[FloatArray, float]:
    """Weighted least squares; returns coefficients and the ML residual variance."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(X.shape[0]) if weight is None else np.asarray(weight, dtype=float)
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ beta
    sigma2 = float(np.sum(w * resid**2) / np.sum(w))
    return beta, max(sigma2, 1e-12)
