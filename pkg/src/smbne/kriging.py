"""Ordinary Kriging with an isotropic exponential kernel on L1 distances.

Correlation between phenotypes a and b is ``exp(-theta * |a - b|_1)``. The
single parameter theta is set by maximising the concentrated likelihood on a
log10 grid, then refined with a bounded Brent search around the best grid
cell. A nugget is added to the diagonal and escalated by decades only when
the Cholesky factorisation fails.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist
from scipy.special import ndtr

NUGGET_START = 1e-8
NUGGET_MAX = 1e-2
THETA_BOUNDS = (1e-6, 1e3)
GRID_POINTS = 40


class FitError(RuntimeError):
    """The correlation matrix stayed singular up to the largest nugget."""


def l1_distances(a, b=None) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = a if b is None else np.atleast_2d(np.asarray(b, dtype=np.float64))
    return cdist(a, b, metric="cityblock")


def _cholesky(R, nugget):
    n = len(R)
    while nugget <= NUGGET_MAX * (1 + 1e-9):
        try:
            L = np.linalg.cholesky(R + nugget * np.eye(n))
            return L, nugget
        except np.linalg.LinAlgError:
            nugget *= 10.0
    return None, None


def _gls(L, y):
    ones = np.ones(len(y))
    Ri_y = cho_solve((L, True), y)
    Ri_1 = cho_solve((L, True), ones)
    mu = float(ones @ Ri_y / (ones @ Ri_1))
    resid = y - mu
    sigma2 = float(resid @ cho_solve((L, True), resid) / len(y))
    return mu, max(sigma2, 0.0)


def concentrated_loglik(theta: float, D: np.ndarray, y: np.ndarray,
                        nugget: float = NUGGET_START) -> tuple[float, float]:
    """Concentrated log-likelihood at ``theta``; returns (value, nugget used).

    ``-(n/2) ln sigma2 - (1/2) ln det R``. Returns ``-inf`` when no nugget up
    to ``NUGGET_MAX`` makes R factorisable.
    """
    R = np.exp(-theta * D)
    L, used = _cholesky(R, nugget)
    if L is None:
        return -math.inf, math.nan
    _, sigma2 = _gls(L, y)
    n = len(y)
    logdet = 2.0 * np.log(np.diag(L)).sum()
    # constant responses give sigma2 == 0; floor keeps the search finite
    return -0.5 * n * math.log(max(sigma2, 1e-300)) - 0.5 * logdet, used


@dataclass(frozen=True, eq=False)
class KrigingModel:
    theta: float
    mu_hat: float
    sigma2_hat: float
    nugget: float
    training_phenotypes: np.ndarray
    training_fitnesses: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray  # R^-1 (y - mu)

    def predict_many(self, P) -> tuple[np.ndarray, np.ndarray]:
        P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        if P.shape[1] != self.training_phenotypes.shape[1]:
            raise ValueError("phenotype length does not match the training data")
        r = np.exp(-self.theta * l1_distances(P, self.training_phenotypes))
        mean = self.mu_hat + r @ self.alpha
        w = solve_triangular(self.chol, r.T, lower=True)
        var = self.sigma2_hat * (1.0 - np.einsum("ij,ij->j", w, w))
        return mean, np.maximum(var, 0.0)

    def diagnostics(self) -> dict:
        return {
            "theta": self.theta,
            "mu_hat": self.mu_hat,
            "sigma2_hat": self.sigma2_hat,
            "nugget": self.nugget,
            "n_train": int(len(self.training_fitnesses)),
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.diagnostics(), fh, indent=2)


def fit(phenos, fitnesses, theta_bounds=THETA_BOUNDS, grid_points: int = GRID_POINTS) -> KrigingModel:
    X = np.asarray(phenos, dtype=np.float64)
    y = np.asarray(fitnesses, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("phenotypes must all have the same length")
    if len(X) < 2 or len(y) != len(X):
        raise ValueError("need at least two training points with one fitness each")
    if not np.isfinite(y).all():
        raise ValueError("training fitnesses must be finite")
    lo, hi = (math.log10(b) for b in theta_bounds)
    D = l1_distances(X)

    if np.all(y == y[0]):
        # flat response: any theta interpolates; take the middle of the range
        log_theta = 0.5 * (lo + hi)
    else:
        grid = np.linspace(lo, hi, grid_points)
        scores = np.array([concentrated_loglik(10.0 ** t, D, y)[0] for t in grid])
        if not np.isfinite(scores).any():
            raise FitError("correlation matrix singular for every theta")
        best = int(np.argmax(scores))
        a = grid[max(best - 1, 0)]
        b = grid[min(best + 1, grid_points - 1)]
        res = minimize_scalar(lambda t: -concentrated_loglik(10.0 ** t, D, y)[0],
                              bounds=(a, b), method="bounded", options={"xatol": 1e-4})
        log_theta = float(res.x) if res.success and -res.fun >= scores[best] else float(grid[best])

    theta = 10.0 ** log_theta
    L, nugget = _cholesky(np.exp(-theta * D), NUGGET_START)
    if L is None:
        raise FitError(f"correlation matrix singular at theta={theta:g}")
    mu, sigma2 = _gls(L, y)
    alpha = cho_solve((L, True), y - mu)
    return KrigingModel(theta, mu, sigma2, nugget, X, y, L, alpha)


def predict(m: KrigingModel, p) -> tuple[float, float]:
    mean, var = m.predict_many(np.asarray(p, dtype=np.float64)[None, :])
    return float(mean[0]), float(var[0])


def ei_from_moments(mean, var, y_best):
    """Expected improvement below ``y_best`` for Gaussian predictions."""
    mean = np.asarray(mean, dtype=np.float64)
    s = np.sqrt(np.asarray(var, dtype=np.float64))
    gain = y_best - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(s > 0, gain / np.where(s > 0, s, 1.0), 0.0)
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        ei = np.where(s > 0, gain * ndtr(z) + s * pdf, np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def expected_improvement(m: KrigingModel, p, y_best: float) -> float:
    mean, var = predict(m, p)
    return float(ei_from_moments(mean, var, y_best))
