"""Ordinary least squares via QR, polynomial fits and R^2."""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularityError, ValidationError

RANK_TOL = 1e-10


@dataclass(frozen=True)
class LinearFit:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    covariance: np.ndarray
    residuals: np.ndarray
    r_squared: float
    sse: float
    dof: int

    def predict_poly(self, x):
        """Evaluate coefficients as an ascending-power polynomial in ``x``."""
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), self.coefficients)


def r_squared(y, predictions) -> float:
    y = np.asarray(y, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    if y.shape != predictions.shape or y.size < 2:
        raise ValidationError("r_squared needs two equal-length vectors of length >= 2")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ValidationError("undefined variance: y is constant")
    return 1.0 - float(np.sum((y - predictions) ** 2)) / sst


def _qr_solve(X, y, what="design"):
    Q, R = np.linalg.qr(X)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= RANK_TOL * max(d.max(), 1.0):
        raise SingularityError(f"rank-deficient {what} matrix")
    beta = solve_triangular(R, Q.T @ y)
    Rinv = solve_triangular(R, np.eye(R.shape[0]))
    return beta, Rinv @ Rinv.T


def ols(X, y) -> LinearFit:
    """Least squares for an explicit design matrix (include a ones column for an intercept)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n != y.size:
        raise ValidationError("design matrix and response disagree in length")
    if n <= p:
        raise ValidationError(f"need more observations ({n}) than parameters ({p})")
    beta, xtx_inv = _qr_solve(X, y)
    return _finish(X @ beta, beta, xtx_inv, y, n - p)


def _finish(fitted, beta, xtx_inv, y, dof):
    resid = y - fitted
    sse = float(resid @ resid)
    sigma2 = sse / dof if dof > 0 else np.nan
    cov = sigma2 * xtx_inv
    cov = 0.5 * (cov + cov.T)
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0 else np.nan
    return LinearFit(
        coefficients=beta,
        standard_errors=np.sqrt(np.clip(np.diag(cov), 0.0, None)),
        covariance=cov,
        residuals=resid,
        r_squared=r2,
        sse=sse,
        dof=dof,
    )


def fit_linear(x, y, degree: int = 1) -> LinearFit:
    """Polynomial least squares in raw powers of ``x``.

    Coefficients are returned in ascending order (constant first). The
    solve runs on centred, scaled abscissae for conditioning; coefficients
    and covariance are mapped back to raw powers before returning.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if degree < 1:
        raise ValidationError("degree must be a positive integer")
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("x and y must be 1-D vectors of equal length")
    if x.size < degree + 2:
        raise ValidationError(f"degree {degree} needs at least {degree + 2} points, got {x.size}")
    if np.ptp(x) == 0:
        raise ValidationError("x values are all identical")

    centre = float(x.mean())
    scale = float(np.max(np.abs(x - centre)))
    u = (x - centre) / scale
    U = np.vander(u, degree + 1, increasing=True)
    try:
        gamma, utu_inv = _qr_solve(U, y, what=f"degree-{degree} polynomial design")
    except SingularityError:
        raise SingularityError(f"rank-deficient design for degree {degree}: "
                               f"fewer than {degree + 1} distinct x values") from None

    # raw_j = sum_k gamma_k * C(k, j) * (-centre)^(k-j) / scale^k
    T = np.zeros((degree + 1, degree + 1))
    for k in range(degree + 1):
        for j in range(k + 1):
            T[j, k] = comb(k, j) * (-centre) ** (k - j) / scale ** k
    beta = T @ gamma
    fitted = U @ gamma
    return _finish(fitted, beta, T @ utu_inv @ T.T, y, x.size - degree - 1)


def hat_values(X) -> np.ndarray:
    """Diagonal of the projection matrix X (X'X)^-1 X'."""
    Q, _ = np.linalg.qr(np.asarray(X, dtype=float))
    return np.sum(Q * Q, axis=1)
