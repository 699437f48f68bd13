"""Dense statistical primitives: centroids, shrinkage covariance, Mahalanobis.

Embedding matrices are (n, d) float arrays; payloads are typically stored in
32-bit but every moment here is accumulated in 64-bit. Covariances use the
population divisor n (recorded in report metadata downstream), and shrinkage
adds a scale-relative ridge so Mahalanobis stays well defined at any count
above one:

    sigma <- sigma + lambda * (trace(sigma)/d + 1e-8) * I

Distances are computed through the Cholesky factor with triangular solves,
never an explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateCovariance, EmptyClass, InvalidValue, NumericalFailure

# Additive floor inside the shrinkage ridge, keeps all-constant classes SPD.
COV_EPS_FLOOR = 1e-8


def as_matrix(values, *, what: str = "embeddings") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InvalidValue(f"{what}: expected a 2-D matrix, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidValue(f"{what}: non-finite values present")
    return arr


def centroid(emb) -> np.ndarray:
    """Arithmetic mean of the rows, accumulated in float64."""
    arr = as_matrix(emb)
    if arr.shape[0] == 0:
        raise EmptyClass("centroid of an empty matrix")
    return arr.mean(axis=0, dtype=np.float64)


@dataclass
class ClassStats:
    """Per-class first and second moments, plus the shrinkage that made
    the covariance factorizable.

    ``degenerate`` is set when fewer than two rows were available; the
    covariance then is just the shrinkage floor and must not be used for
    distances.
    """

    class_id: str
    count: int
    centroid: np.ndarray
    covariance: np.ndarray
    shrinkage_lambda: float
    degenerate: bool = False
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.covariance))

    def cholesky(self) -> np.ndarray:
        """Lower-triangular factor L with L L^T = covariance (cached)."""
        if self.degenerate:
            raise DegenerateCovariance(
                f"class {self.class_id!r}: covariance from {self.count} row(s)"
            )
        if self._chol is None:
            try:
                self._chol = np.linalg.cholesky(self.covariance)
            except np.linalg.LinAlgError as exc:
                raise NumericalFailure(
                    f"class {self.class_id!r}: covariance not positive-definite"
                ) from exc
        return self._chol

    def whiten(self, points) -> np.ndarray:
        """Map points so Euclidean distance equals Mahalanobis distance.

        Solves L z = x for each row x (triangular solve, no inverse).
        """
        pts = as_matrix(points, what="points")
        if pts.shape[1] != self.dim:
            raise InvalidValue(
                f"points have dim {pts.shape[1]}, stats have dim {self.dim}"
            )
        return solve_triangular(self.cholesky(), pts.T, lower=True).T


def covariance(emb, lam: float, *, class_id: str = "?") -> ClassStats:
    """Population covariance of the rows plus scale-relative shrinkage.

    Fewer than two rows cannot support an estimate: the result is flagged
    degenerate and its covariance is only the shrinkage floor.
    """
    if lam < 0:
        raise InvalidValue(f"shrinkage lambda must be >= 0, got {lam}")
    arr = as_matrix(emb)
    n, d = arr.shape
    if n == 0:
        raise EmptyClass(f"class {class_id!r}: no rows")
    mu = arr.mean(axis=0, dtype=np.float64)
    if n < 2:
        cov = (COV_EPS_FLOOR * lam) * np.eye(d)
        return ClassStats(class_id, n, mu, cov, lam, degenerate=True)
    centered = arr - mu
    cov = (centered.T @ centered) / n
    cov = (cov + cov.T) / 2.0  # force exact symmetry
    if lam > 0:
        ridge = lam * (np.trace(cov) / d + COV_EPS_FLOOR)
        cov = cov + ridge * np.eye(d)
    return ClassStats(class_id, n, mu, cov, lam)


def mahalanobis(x, y, stats: ClassStats) -> float:
    """sqrt((x-y)^T cov^-1 (x-y)) via triangular solve on the Cholesky factor."""
    dx = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    if dx.ndim != 1 or dx.shape[0] != stats.dim:
        raise InvalidValue(
            f"vectors of dim {dx.shape} against stats of dim {stats.dim}"
        )
    z = solve_triangular(stats.cholesky(), dx, lower=True)
    return float(np.sqrt(z @ z))
