"""Stationary kernels and Gram-matrix assembly.

All downstream operators (lifted dynamics, landmark projections, operator-norm
computations) are built from pairwise kernel evaluations, so this module is the
single place where kernel profiles are defined:

    RBF       k(r) = variance * exp(-r^2 / (2 l^2))
    Matern52  k(r) = variance * (1 + sqrt(5) r/l + 5 r^2/(3 l^2)) exp(-sqrt(5) r/l)
    Matern32  k(r) = variance * (1 + sqrt(3) r/l) exp(-sqrt(3) r/l)

with r the Euclidean distance.  Every profile is bounded by ``variance`` and
attains it at r = 0, so sqrt(variance) plays the role of the feature-map bound
used by the error-rate formulas in :mod:`kooplift.theory`.

Thin-plate-spline features (r^2 log r against a fixed set of centers) are kept
here too; they are the finite-dimensional baseline lift that the landmark
compression is compared against.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "kernel_eval",
    "gram",
    "thin_plate_features",
]


class KernelFamily(enum.Enum):
    RBF = "rbf"
    Matern52 = "matern52"
    Matern32 = "matern32"


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel: family, lengthscale and output variance.

    ``kappa = sqrt(variance)`` bounds the lifted feature norm, since
    k(x, x) = variance for every x.
    """

    family: KernelFamily = KernelFamily.Matern52
    lengthscale: float = 1.0
    variance: float = 1.0

    def __post_init__(self) -> None:
        if not (self.lengthscale > 0 and math.isfinite(self.lengthscale)):
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not (self.variance > 0 and math.isfinite(self.variance)):
            raise ValueError(f"variance must be positive, got {self.variance}")

    @property
    def kappa(self) -> float:
        """Uniform bound on the feature norm, sqrt(k(x, x))."""
        return math.sqrt(self.variance)


def _profile(family: KernelFamily, r: FloatArray) -> FloatArray:
    """Kernel profile as a function of scaled distance r = ||x - y|| / l."""
    if family is KernelFamily.RBF:
        return np.exp(-0.5 * r * r)
    if family is KernelFamily.Matern52:
        s = math.sqrt(5.0) * r
        return (1.0 + s + s * s / 3.0) * np.exp(-s)
    if family is KernelFamily.Matern32:
        s = math.sqrt(3.0) * r
        return (1.0 + s) * np.exp(-s)
    raise ValueError(f"unknown kernel family {family!r}")


def _as_points(X, name: str) -> FloatArray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty (n, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate k(x, y) for a single pair of state vectors."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input point")
    r = float(np.linalg.norm(x - y)) / spec.lengthscale
    return spec.variance * float(_profile(spec.family, np.asarray(r)))


def _cross_distances(X: FloatArray, Y: FloatArray) -> FloatArray:
    # ||x - y||^2 = ||x||^2 + ||y||^2 - 2 <x, y>, clipped against round-off
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Y * Y, axis=1)[None, :]
        - 2.0 * (X @ Y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.sqrt(sq)


def gram(spec: KernelSpec, X, Y=None) -> FloatArray:
    """Gram matrix of kernel evaluations between two point lists.

    When ``Y is None`` (or is the same array object as ``X``) the result is
    symmetrized exactly via (M + M.T) / 2 so that symmetric eigensolvers see a
    bit-exact symmetric input.
    """
    X = _as_points(X, "X")
    same = Y is None or Y is X
    Yp = X if same else _as_points(Y, "Y")
    if X.shape[1] != Yp.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Yp.shape[1]}")
    K = spec.variance * _profile(spec.family, _cross_distances(X, Yp) / spec.lengthscale)
    if same:
        K = 0.5 * (K + K.T)
    return K


def thin_plate_features(x, centers) -> FloatArray:
    """Thin-plate-spline feature vector: entry i is r^2 log r, r = ||x - c_i||.

    The r = 0 entry is set to 0, the continuous-limit convention.
    """
    C = _as_points(centers, "centers")
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != C.shape[1]:
        raise ValueError(f"dimension mismatch: point has d={x.shape[0]}, centers d={C.shape[1]}")
    r = np.linalg.norm(C - x[None, :], axis=1)
    out = np.zeros_like(r)
    nz = r > 0.0
    out[nz] = r[nz] * r[nz] * np.log(r[nz])
    return out


def thin_plate_matrix(X, centers) -> FloatArray:
    """Stacked thin-plate features for many points, shape (len(X), len(centers))."""
    X = _as_points(X, "X")
    C = _as_points(centers, "centers")
    if X.shape[1] != C.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {C.shape[1]}")
    r = _cross_distances(X, C)
    out = np.zeros_like(r)
    nz = r > 0.0
    out[nz] = r[nz] * r[nz] * np.log(r[nz])
    return out
