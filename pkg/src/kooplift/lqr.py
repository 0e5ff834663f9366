"""Discrete-time infinite-horizon LQR on the lifted surrogate.

The Riccati equation is solved by the plain fixed-point (value) iteration

    P <- A' P A - A' P B (R + B' P B)^(-1) B' P A + Q,   P_0 = Q,

which converges for stabilizable/detectable systems and doubles as its own
verification path against a finite-horizon backward recursion.  Gains follow
the convention u = K z with K = -(R + B' P B)^(-1) B' P A.

``solve_model_dare`` is the entry point used by the pipeline: it iterates on
the numerically retained range of the model's lift (same solution, much
cheaper when the landmark set is the whole training set) and stays usable on
lifts whose marginal modes make the textbook infinite-horizon problem
ill-posed; see its docstring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .identify import KoopmanModel, embed_state
from .numerics import solve_psd, spectral_radius

FloatArray = NDArray[np.float64]

__all__ = [
    "LqrWeights",
    "RiccatiSolution",
    "build_weights",
    "solve_dare",
    "dare_residual",
    "control_policy",
    "solve_model_dare",
]


@dataclass(frozen=True)
class LqrWeights:
    """State weight in lifted coordinates and control weight."""

    Q_m: FloatArray
    R: FloatArray

    def __post_init__(self) -> None:
        Q = np.atleast_2d(np.asarray(self.Q_m, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        Q = 0.5 * (Q + Q.T)
        object.__setattr__(self, "Q_m", Q)
        object.__setattr__(self, "R", 0.5 * (R + R.T))
        wq = np.linalg.eigvalsh(Q)
        if wq.size and wq[0] < -1e-10 * max(1.0, wq[-1]):
            raise ValueError(f"Q_m is not PSD: lambda_min = {wq[0]:.3e}")
        wr = np.linalg.eigvalsh(self.R)
        if wr[0] <= 0:
            raise ValueError(f"R is not positive definite: lambda_min = {wr[0]:.3e}")


@dataclass(frozen=True)
class RiccatiSolution:
    """DARE solution with gain, closed loop and solver diagnostics.

    ``deflated`` counts lifted modes excluded from synthesis because they sit
    numerically on the unit circle with negligible control authority; the gain
    leaves them untouched and ``rho_L`` refers to the synthesized subsystem.
    """

    P_m: FloatArray
    K_m: FloatArray
    L_m: FloatArray
    residual: float
    rho_L: float
    iterations: int
    delta_history: tuple = field(default=(), repr=False)
    deflated: int = 0
    rho_L_full: float | None = None
    converged: bool = True
    # orthonormal columns spanning the synthesized subspace, when synthesis ran
    # on a restriction of the lifted coordinates
    basis: FloatArray | None = field(default=None, repr=False)


def build_weights(model: KoopmanModel, Qprime, R) -> LqrWeights:
    """Pull a state-space weight back through the reconstruction: Q_m = C' Q' C."""
    Qprime = np.atleast_2d(np.asarray(Qprime, dtype=float))
    if Qprime.shape != (model.d, model.d):
        raise ValueError(f"Qprime must be ({model.d}, {model.d}), got {Qprime.shape}")
    Q_m = model.C.T @ Qprime @ model.C
    return LqrWeights(Q_m=Q_m, R=np.atleast_2d(np.asarray(R, dtype=float)))


def _riccati_map(P, A, B, Q, R):
    BtP = B.T @ P
    S = R + BtP @ B
    gain_part, _ = solve_psd(S, BtP @ A)
    return A.T @ (P @ A - BtP.T @ gain_part) + Q, gain_part


def _value_iterate(A, B, Q, R, tol: float, max_iter: int):
    """Run the fixed-point Riccati recursion; returns (P, deltas, converged)."""
    P = Q.copy()
    deltas: list[float] = []
    converged = False
    for _ in range(max_iter):
        P_next, _ = _riccati_map(P, A, B, Q, R)
        P_next = 0.5 * (P_next + P_next.T)
        delta = float(np.linalg.norm(P_next - P, 2))
        deltas.append(delta)
        normP = float(np.linalg.norm(P, 2))
        P = P_next
        if delta <= tol * (1.0 + normP):
            converged = True
            break
    return P, deltas, converged


def _close_solution(P, A, B, weights: LqrWeights, deltas, converged: bool) -> RiccatiSolution:
    BtP = B.T @ P
    gain_part, _ = solve_psd(weights.R + BtP @ B, BtP @ A)
    K = -gain_part
    L = A + B @ K
    rho = spectral_radius(L)
    res = dare_residual(P, A, B, weights)
    return RiccatiSolution(
        P_m=P,
        K_m=K,
        L_m=L,
        residual=res,
        rho_L=rho,
        iterations=len(deltas),
        delta_history=tuple(deltas[-16:]),
        converged=converged,
    )


def solve_dare(
    A,
    B,
    weights: LqrWeights,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> RiccatiSolution:
    """Fixed-point Riccati iteration from P_0 = Q.

    Stops when ||P_{k+1} - P_k||_2 <= tol * (1 + ||P_k||_2).  Raises on
    non-convergence or when the resulting closed loop is not contractive.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    Q, R = weights.Q_m, weights.R
    if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0] or Q.shape != A.shape:
        raise ValueError("inconsistent shapes in solve_dare")
    P, deltas, converged = _value_iterate(A, B, Q, R, tol, max_iter)
    if not converged:
        raise RuntimeError(f"Riccati iteration did not converge in {max_iter} iterations")
    sol = _close_solution(P, A, B, weights, deltas, converged=True)
    if not sol.rho_L < 1.0:
        raise RuntimeError(f"closed loop is not contractive: rho(A + BK) = {sol.rho_L:.6g}")
    return sol


def dare_residual(P, A, B, weights: LqrWeights) -> float:
    """||F(P, A, B)||_2 with F(P,A,B) = P - A'[P - PB(R+B'PB)^(-1)B'P]A - Q."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    BtP = B.T @ P
    inner_part, _ = solve_psd(weights.R + BtP @ B, BtP)
    F = P - A.T @ (P - BtP.T @ inner_part) @ A - weights.Q_m
    return float(np.linalg.norm(F, 2))


def control_policy(model: KoopmanModel, sol: RiccatiSolution, x) -> FloatArray:
    """State-feedback input on the true state: u = K_m z(x)."""
    return sol.K_m @ embed_state(model, x)


def _deflate_marginal_modes(A: FloatArray, rho_cap: float):
    """Orthonormal basis of the invariant subspace of modes with |eig| < rho_cap.

    Returns (U1, T11) from an ordered real Schur form, or None when every mode
    is strictly inside the cap.
    """
    import scipy.linalg

    T, Z, sdim = scipy.linalg.schur(
        A, output="real", sort=lambda re, im: (re * re + im * im) < rho_cap * rho_cap
    )
    if sdim == A.shape[0]:
        return None
    return Z[:, :sdim], T[:sdim, :sdim]


def solve_model_dare(
    model: KoopmanModel,
    Qprime=None,
    R=None,
    weights: LqrWeights | None = None,
    tol: float = 1e-12,
    horizon: int = 10_000,
    rho_cap: float | None = None,
) -> RiccatiSolution:
    """LQR synthesis for a fitted surrogate, robust to marginal lifted modes.

    Weights are either given directly or built as C' Q' C from ``Qprime`` and
    ``R``.  The iteration runs on the retained range of the lift (with V the
    orthonormal range basis, A_m = V A_r V', B_m = V B_r and Q_m = V Q_r V'
    hold for fitted models up to round-off).

    Kernel lifts of these systems carry numerically marginal modes (constants
    are an eigenfunction of the step map at eigenvalue 1) with negligible
    control authority; the exact Riccati solution is dominated by them and the
    fixed-point iteration stalls on them.  Two complementary treatments:

    * ``horizon`` caps the iteration count.  The capped iterate is the
      finite-horizon cost-to-go, whose gain acts on everything the iteration
      has resolved while leaving un-inflated marginal directions alone;
      ``converged=False`` records the cap.
    * ``rho_cap`` (optional) deflates modes with |eig(A)| >= rho_cap from the
      synthesis outright via an ordered Schur form, which yields a strictly
      contractive synthesized loop.  Only appropriate when no genuine
      controllable mode lies above the cap.
    """
    if weights is None:
        if Qprime is None or R is None:
            raise ValueError("provide either weights or both Qprime and R")
        weights = build_weights(model, Qprime, R)
    V = model.range_basis()
    A_r = V.T @ model.A_m @ V
    B_r = V.T @ model.B_m
    Q_r = 0.5 * (V.T @ weights.Q_m @ V + (V.T @ weights.Q_m @ V).T)
    deflation = _deflate_marginal_modes(A_r, rho_cap) if rho_cap is not None else None
    if deflation is not None:
        U1, T11 = deflation
        basis = V @ U1
        A_s, B_s = T11, U1.T @ B_r
        Q_s = 0.5 * (U1.T @ Q_r @ U1 + (U1.T @ Q_r @ U1).T)
        deflated = A_r.shape[0] - U1.shape[1]
    else:
        basis = V
        A_s, B_s, Q_s = A_r, B_r, Q_r
        deflated = 0
    P_s, deltas, converged = _value_iterate(A_s, B_s, Q_s, weights.R, tol, horizon)
    red = _close_solution(P_s, A_s, B_s, LqrWeights(Q_s, weights.R), deltas, converged)
    P = basis @ red.P_m @ basis.T
    K = red.K_m @ basis.T
    L = model.A_m + model.B_m @ K
    if deflated:
        # the full loop's nonzero spectrum lives on the retained range
        rho_full = spectral_radius(A_r + B_r @ (K @ V))
    else:
        rho_full = red.rho_L
    return RiccatiSolution(
        P_m=0.5 * (P + P.T),
        K_m=K,
        L_m=L,
        residual=red.residual,
        rho_L=red.rho_L,
        iterations=red.iterations,
        delta_history=red.delta_history,
        deflated=deflated,
        rho_L_full=rho_full,
        converged=red.converged,
        basis=basis,
    )
