"""Dense linear-algebra utilities with explicit tolerance policies.

Everything here operates on plain ndarrays.  The rank policy is shared across
the package: an eigenvalue of a PSD matrix counts as zero when it falls below
``rel_cutoff`` times the largest eigenvalue.  Landmark Gram matrices are
routinely rank-deficient at double precision, so the cutoff is load-bearing,
not cosmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]

__all__ = [
    "RankTolerance",
    "psd_pinv_sqrt",
    "psd_sqrt",
    "spectral_radius",
    "operator_norm_sym",
    "tau",
    "TauResult",
    "solve_psd",
]

DEFAULT_REL_CUTOFF = 1e-10


@dataclass(frozen=True)
class RankTolerance:
    """Relative eigenvalue cutoff, as a fraction of the largest eigenvalue."""

    rel_cutoff: float = DEFAULT_REL_CUTOFF

    def __post_init__(self) -> None:
        if not (0.0 < self.rel_cutoff < 1.0):
            raise ValueError(f"rel_cutoff must lie in (0, 1), got {self.rel_cutoff}")


def _check_finite_square(M: FloatArray, name: str) -> FloatArray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def _clipped_eigh(M: FloatArray, tol: RankTolerance):
    """Eigendecomposition of a symmetrized matrix with the rank policy applied.

    Returns (eigvals, eigvecs, kept) where ``kept`` flags eigenvalues above the
    cutoff.  Eigenvalues below -cutoff violate the PSD precondition.
    """
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    wmax = float(w[-1]) if w.size else 0.0
    if wmax <= 0.0:
        # at most round-off away from the zero matrix
        if w.size and w[0] < -tol.rel_cutoff * max(1.0, abs(wmax)):
            raise ValueError(f"matrix is not PSD: lambda_min = {w[0]:.3e}")
        return w, V, np.zeros_like(w, dtype=bool)
    cutoff = tol.rel_cutoff * wmax
    if w[0] < -cutoff:
        raise ValueError(
            f"matrix is not PSD up to tolerance: lambda_min = {w[0]:.3e}, cutoff = {cutoff:.3e}"
        )
    return w, V, w > cutoff


def psd_pinv_sqrt(M, tol: RankTolerance = RankTolerance(), return_info: bool = False):
    """Pseudo-inverse square root of a symmetric PSD matrix.

    Eigenvalues above the relative cutoff map to lambda^(-1/2), the rest to 0;
    eigenvectors are preserved and the result is symmetric.  The all-zero
    matrix maps to the zero matrix.

    With ``return_info=True`` also returns a dict with the spectrum, the number
    of clipped eigenvalues and the condition number of the retained block.
    """
    M = _check_finite_square(M, "M")
    w, V, kept = _clipped_eigh(M, tol)
    inv_sqrt = np.zeros_like(w)
    inv_sqrt[kept] = 1.0 / np.sqrt(w[kept])
    R = (V * inv_sqrt[None, :]) @ V.T
    R = 0.5 * (R + R.T)
    if not return_info:
        return R
    nkept = int(np.count_nonzero(kept))
    cond = float(w[-1] / w[kept][0]) if nkept else math.inf
    info = {
        "eigvals": w,
        "eigvecs": V,
        "kept": kept,
        "rank": nkept,
        "clipped": int(w.size - nkept),
        "cond": cond,
    }
    return R, info


def psd_sqrt(M, tol: RankTolerance = RankTolerance()) -> FloatArray:
    """Symmetric PSD square root under the same clipping policy."""
    M = _check_finite_square(M, "M")
    w, V, kept = _clipped_eigh(M, tol)
    s = np.zeros_like(w)
    s[kept] = np.sqrt(w[kept])
    R = (V * s[None, :]) @ V.T
    return 0.5 * (R + R.T)


def psd_pinv(M, tol: RankTolerance = RankTolerance()) -> FloatArray:
    """Clipped pseudo-inverse of a symmetric PSD matrix."""
    M = _check_finite_square(M, "M")
    w, V, kept = _clipped_eigh(M, tol)
    inv = np.zeros_like(w)
    inv[kept] = 1.0 / w[kept]
    R = (V * inv[None, :]) @ V.T
    return 0.5 * (R + R.T)


def spectral_radius(L) -> float:
    """Largest eigenvalue magnitude, from the full complex spectrum."""
    L = _check_finite_square(L, "L")
    if L.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(L))))


def operator_norm_sym(M) -> float:
    """Operator (spectral) norm of a symmetric matrix via eigvalsh."""
    M = _check_finite_square(M, "M")
    if M.shape[0] == 0:
        return 0.0
    M = 0.5 * (M + M.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(M))))


def _spectral_norm(M: FloatArray) -> float:
    return float(np.linalg.norm(M, 2))


class TauResult(NamedTuple):
    """sup_k ||L^k|| zeta^(-k) together with whether k_max truncated the scan."""

    value: float
    truncated: bool
    k_stop: int


def tau(L, zeta: float | None = None, k_max: int | None = None) -> TauResult:
    """Transient-growth constant sup over k of ||L^k||_2 * zeta^(-k).

    Requires rho(L) <= zeta < 1.  The scan stops at the first k >= 1 with
    ||L^k|| <= zeta^k: by submultiplicativity every later ratio is dominated by
    one already seen.  When ``zeta`` is omitted it defaults to the midpoint
    (rho(L) + 1) / 2; ``k_max`` defaults to 10 * ceil(1 / (1 - zeta)).
    """
    L = _check_finite_square(L, "L")
    rho = spectral_radius(L)
    if zeta is None:
        zeta = 0.5 * (rho + 1.0)
    if zeta >= 1.0:
        raise ValueError(f"zeta must be < 1, got {zeta}")
    if rho > zeta + 1e-12:
        raise ValueError(f"need rho(L) <= zeta, got rho = {rho:.6g} > zeta = {zeta:.6g}")
    if k_max is None:
        k_max = 10 * math.ceil(1.0 / (1.0 - zeta))
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    best = 1.0  # k = 0 term: ||I|| = 1
    P = np.eye(L.shape[0])
    zk = 1.0
    for k in range(1, k_max + 1):
        P = P @ L
        zk *= zeta
        nk = _spectral_norm(P)
        best = max(best, nk / zk)
        if nk <= zk:
            return TauResult(best, False, k)
    return TauResult(best, True, k_max)


def solve_psd(M, rhs, jitter_scale: float = 1e-12):
    """Solve M x = rhs for symmetric PSD M via Cholesky.

    On factorization failure a jitter of ``jitter_scale * trace(M)`` is added
    to the diagonal and the solve retried.  Returns (x, jitter_applied).
    """
    import scipy.linalg

    M = _check_finite_square(M, "M")
    rhs = np.asarray(rhs, dtype=float)
    M = 0.5 * (M + M.T)
    try:
        c, low = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
        return scipy.linalg.cho_solve((c, low), rhs, check_finite=False), False
    except np.linalg.LinAlgError:
        pass
    except scipy.linalg.LinAlgError:  # pragma: no cover - alias of the above in practice
        pass
    jitter = jitter_scale * max(float(np.trace(M)), np.finfo(float).tiny)
    Mj = M + jitter * np.eye(M.shape[0])
    c, low = scipy.linalg.cho_factor(Mj, lower=True, check_finite=False)
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False), True
