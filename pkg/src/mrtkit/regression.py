"""Cross-sectional least squares for conditional expectations.

``E(Y | state)`` is approximated by a polynomial of total degree ``degree``
in the standardized state variables.  The normal equations are solved
directly; if they are ill-conditioned a ridge of ``1e-8 * trace / dim`` is
added, and if that still fails :class:`EstimationError` is raised.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import EstimationError, InvalidArgumentError

COND_LIMIT = 1e12
RIDGE = 1e-8


def exponents(n_vars: int, degree: int) -> np.ndarray:
    """All multi-indices with total degree ``<= degree``, intercept first."""
    rows = [e for d in range(degree + 1)
            for e in itertools.product(range(d + 1), repeat=n_vars) if sum(e) == d]
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), n_vars)


def _design(Z: np.ndarray, expo: np.ndarray) -> np.ndarray:
    P = Z.shape[0]
    out = np.ones((P, len(expo)))
    for j, e in enumerate(expo):
        for v, p in enumerate(e):
            if p:
                out[:, j] *= Z[:, v] ** p
    return out


@dataclass(frozen=True)
class LSFit:
    """A fitted polynomial regression; :meth:`predict` needs only the state."""

    center: np.ndarray
    scale: np.ndarray
    expo: np.ndarray
    coef: np.ndarray
    ridge: bool = False

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] == 0:
            return np.full(X.shape[0], self.coef[0])
        Z = (X - self.center) / self.scale
        return _design(Z, self.expo) @ self.coef


def fit_ls(X, y, degree: int, weights=None, step: int | None = None) -> LSFit:
    """Weighted least squares of ``y`` on a polynomial basis in ``X`` of shape (P, k)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    # contiguous copies keep BLAS reductions in a fixed order
    y = np.ascontiguousarray(y, dtype=np.float64)
    P, k = X.shape
    if y.shape != (P,):
        raise InvalidArgumentError(f"target has shape {y.shape}, expected ({P},)")
    center = X.mean(axis=0) if P else np.zeros(k)
    spread = X.std(axis=0) if P else np.ones(k)
    scale = np.where(spread > 0, spread, 1.0)
    expo = exponents(k, degree)
    Phi = _design((X - center) / scale, expo)
    # drop non-intercept columns that are constant across paths
    keep = np.ones(len(expo), dtype=bool)
    keep[1:] = np.ptp(Phi[:, 1:], axis=0) > 0 if P else False
    expo, Phi = expo[keep], Phi[:, keep]
    if weights is None:
        A = Phi.T @ Phi
        b = Phi.T @ y
    else:
        w = np.ascontiguousarray(weights, dtype=np.float64)
        A = Phi.T @ (w[:, None] * Phi)
        b = Phi.T @ (w * y)
    ridge = False
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(A) if A.size else np.inf
    if not np.isfinite(cond) or cond > COND_LIMIT:
        ridge = True
        dim = A.shape[0]
        lam = RIDGE * np.trace(A) / dim if dim else 0.0
        A = A + lam * np.eye(dim)
    try:
        coef = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        coef = None
    if coef is None or not np.all(np.isfinite(coef)):
        raise EstimationError(f"least-squares design is singular at step {step}", step=step)
    return LSFit(center, scale, expo, coef, ridge)
