"""Dense Lyapunov solvers and the Cholesky factor of the controllability Gramian."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from .errors import NumericalError, UnstableSystemError, ValidationError

__all__ = [
    "GramianPair",
    "check_stable",
    "cholesky_spd",
    "controllability_gramian",
    "input_normal_factor",
    "solve_lyapunov",
    "solve_lyapunov_dual",
]


@dataclass(frozen=True)
class GramianPair:
    """Controllability Gramian ``P`` and its lower Cholesky factor ``R``."""

    P: np.ndarray
    R: np.ndarray


def check_stable(A: np.ndarray) -> np.ndarray:
    """Return the eigenvalues of ``A``; raise if any has ``Re >= 0``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"A must be square, got shape {A.shape}")
    lam = np.linalg.eigvals(A)
    worst = lam[np.argmax(lam.real)]
    if worst.real >= 0:
        raise UnstableSystemError(complex(worst))
    return lam


def _lyap(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != A.shape[0]:
        raise ValidationError(
            f"B has {B.shape[0]} rows but A is {A.shape[0]}x{A.shape[0]}")
    check_stable(A)
    # Bartels-Stewart: real Schur form of A, then triangular Sylvester solve
    X = spla.solve_continuous_lyapunov(A, -B @ B.T)
    return 0.5 * (X + X.T)


def controllability_gramian(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve ``A P + P A^T + B B^T = 0`` (no factorization)."""
    return _lyap(A, B)


def solve_lyapunov(A: np.ndarray, B: np.ndarray) -> GramianPair:
    """Solve ``A P + P A^T + B B^T = 0`` and factor ``P = R R^T``."""
    P = _lyap(A, B)
    return GramianPair(P=P, R=cholesky_spd(P))


def input_normal_factor(A: np.ndarray, B: np.ndarray,
                        regularization: float | None = None,
                        max_cond: float = 1e12):
    """Cholesky factor ``R`` of a (possibly regularized) controllability Gramian.

    Solves ``A P + P A^T + B B^T + eps I = 0`` and returns ``(R, eps)`` with
    ``P = R R^T``. With ``regularization=None`` the plain Gramian is used when
    its condition number is below ``max_cond``; otherwise ``eps`` is set to
    ``1e-10 ||B||_2^2``. A positive ``eps`` is the Gramian of ``A`` driven by
    ``[B, sqrt(eps) I]``, so the coordinates ``x = R z`` stay input-normal
    for that augmented input and ``R^{-1} A R + (R^{-1} A R)^T`` stays
    negative definite.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    n = A.shape[0]
    BBt = B @ B.T
    if regularization is None:
        P = _lyap(A, B)
        lam = np.linalg.eigvalsh(P)
        if lam[0] > 0 and lam[-1] <= max_cond * lam[0]:
            try:
                return np.linalg.cholesky(P), 0.0
            except np.linalg.LinAlgError:
                pass
        eps = 1e-10 * float(np.linalg.norm(B, 2)) ** 2
    else:
        eps = float(regularization)
        if eps < 0:
            raise ValidationError(f"regularization must be >= 0, got {eps}")
    check_stable(A)
    P = spla.solve_continuous_lyapunov(A, -(BBt + eps * np.eye(n)))
    return cholesky_spd(P), eps


def solve_lyapunov_dual(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Solve ``A^T W + W A + C C^T = 0`` for the observability Gramian.

    ``C`` is ``n x p`` (a single output vector may be passed as 1-D).
    """
    return _lyap(np.asarray(A, dtype=float).T, C)


def cholesky_spd(P: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"P must be square, got shape {P.shape}")
    P = 0.5 * (P + P.T)
    try:
        R = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            "Cholesky factorization failed: matrix is not numerically "
            "positive definite (is (A, B) controllable?)") from exc
    return R
