"""Model order reduction of LPO systems.

Three reductions share one Petrov-Galerkin assembly (:func:`project_lpo`):

* :func:`balanced_truncation` -- square-root balanced truncation (linear output),
* :func:`qobt_reduce` -- balancing of the controllability Gramian against the
  quadratic-output Gramian ``A^T Q + Q A + C2 P C2 + c1 c1^T = 0``,
* :func:`energy_based_reduce` -- subspace selection by maximizing the
  ball-averaged observability energy in input-normal coordinates.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from .cp_tensor import cp_apply_factorwise
from .energy import (BallSpec, EnergyFunction, gradient_F, objective_F,
                     quadratic_matrix, to_input_normal)
from .errors import ValidationError
from .kron_solver import build_observability_coefficients
from .lyapunov import (controllability_gramian, input_normal_factor,
                        solve_lyapunov_dual)
from .stiefel import OptimizerConfig, maximize_on_stiefel
from .system import LPOSystem

__all__ = [
    "ReducedModel",
    "balanced_truncation",
    "energy_based_reduce",
    "is_stable",
    "linear_output_vector",
    "project_lpo",
    "qobt_reduce",
    "transfer_function",
]

BIORTHO_TOL = 1e-8


@dataclass
class ReducedModel:
    V: np.ndarray
    W: np.ndarray
    reduced: LPOSystem
    method: str
    params: dict = field(default_factory=dict)

    @property
    def r(self) -> int:
        return self.V.shape[1]

    @property
    def stable(self) -> bool:
        return is_stable(self.reduced.A)

    def provenance(self) -> dict:
        out = {"method": self.method, "r": self.r, "stable": self.stable}
        out.update(self.params)
        return out


def is_stable(A: np.ndarray) -> bool:
    return bool(np.linalg.eigvals(A).real.max() < 0)


def linear_output_vector(sys: LPOSystem) -> np.ndarray:
    """Dense ``c_1`` (sum of the columns of its order-1 CP factor)."""
    return np.asarray(sys.outputs[0].factors[0].sum(axis=1))


def transfer_function(sys: LPOSystem, s) -> np.ndarray:
    """Linear-output transfer function ``c_1^T (sI - A)^{-1} B`` at points ``s``.

    Returns an array of shape ``(len(s), m)``.
    """
    c = linear_output_vector(sys)
    n = sys.n
    s = np.atleast_1d(s)
    out = np.empty((s.size, sys.m), dtype=complex)
    for i, si in enumerate(s):
        out[i] = c @ np.linalg.solve(si * np.eye(n) - sys.A, sys.B)
    return out


def project_lpo(sys: LPOSystem, V: np.ndarray, W: np.ndarray) -> LPOSystem:
    """Reduced system ``(W^T A V, W^T B, (V^T (x) ... (x) V^T) c_k)``."""
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.shape != W.shape or V.shape[0] != sys.n:
        raise ValidationError(
            f"V {V.shape} and W {W.shape} must both be {sys.n} x r")
    r = V.shape[1]
    defect = np.linalg.norm(W.T @ V - np.eye(r))
    if defect > BIORTHO_TOL:
        raise ValidationError(f"W^T V deviates from I by {defect:.2e}")
    A_r = W.T @ sys.A @ V
    B_r = W.T @ sys.B
    outs = [cp_apply_factorwise(c, [V.T] * c.order) for c in sys.outputs]
    return LPOSystem(A_r, B_r, tuple(outs), check_stability=False)


def _psd_factor(M: np.ndarray) -> np.ndarray:
    """``F`` with ``F F^T = M`` for symmetric positive semidefinite ``M``."""
    M = 0.5 * (M + M.T)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        lam, U = np.linalg.eigh(M)
        return U * np.sqrt(np.clip(lam, 0.0, None))


def _square_root_balance(P: np.ndarray, Qo: np.ndarray, r: int):
    """Square-root balancing projection for Gramians ``P`` and ``Qo``."""
    n = P.shape[0]
    if not 1 <= r <= n:
        raise ValidationError(f"r must lie in [1, {n}], got {r}")
    Rc = _psd_factor(P)
    Lo = _psd_factor(Qo)
    U, s, Zt = np.linalg.svd(Lo.T @ Rc)
    if s[r - 1] <= 0:
        raise ValidationError(
            f"only {int(np.sum(s > 0))} nonzero Hankel singular values; "
            f"cannot reduce to r={r}")
    if r < n and s[r - 1] - s[r] <= 1e-10 * s[0]:
        warnings.warn(
            f"no gap between singular values {r} and {r + 1} "
            f"({s[r - 1]:.6e} vs {s[r]:.6e}); truncation is not unique",
            RuntimeWarning, stacklevel=3)
    scale = 1.0 / np.sqrt(s[:r])
    V = Rc @ Zt[:r].T * scale
    W = Lo @ U[:, :r] * scale
    return V, W, s


def balanced_truncation(sys: LPOSystem, r: int) -> ReducedModel:
    """Square-root balanced truncation of a linear-output system."""
    if any(c.rank for c in sys.outputs[1:]):
        raise ValidationError(
            f"balanced truncation needs a linear output (d=1); system has d={sys.d}")
    P = controllability_gramian(sys.A, sys.B)
    W2 = solve_lyapunov_dual(sys.A, linear_output_vector(sys))
    V, W, hsv = _square_root_balance(P, W2, r)
    rom = project_lpo(sys.with_outputs(sys.outputs[:1]), V, W)
    return ReducedModel(V, W, rom, "BT", {"hsv": hsv.tolist()})


def qobt_gramian(sys: LPOSystem, P: np.ndarray) -> np.ndarray:
    """Solve ``A^T Q + Q A + C2 P C2 + c1 c1^T = 0``."""
    n = sys.n
    blocks = []
    if sys.outputs[0].rank:
        blocks.append(linear_output_vector(sys)[:, None])
    if sys.d >= 2 and sys.outputs[1].rank:
        C2 = quadratic_matrix(sys.outputs[1])
        blocks.append(C2 @ _psd_factor(P))
    C = np.hstack(blocks) if blocks else np.zeros((n, 1))
    return solve_lyapunov_dual(sys.A, C)


def qobt_reduce(sys: LPOSystem, r: int) -> ReducedModel:
    """Balanced truncation for systems with linear plus quadratic output."""
    if sys.d > 2 and any(c.rank for c in sys.outputs[2:]):
        raise ValidationError(f"QOBT supports d <= 2, system has d={sys.d}")
    P = controllability_gramian(sys.A, sys.B)
    Qo = qobt_gramian(sys, P)
    V, W, s = _square_root_balance(P, Qo, r)
    rom = project_lpo(sys, V, W)
    return ReducedModel(V, W, rom, "QOBT", {"singular_values": s.tolist()})


def energy_based_reduce(sys: LPOSystem, r: int, L: float,
                        cfg: OptimizerConfig | None = None,
                        tol: float = 1e-8, ell: int | None = None,
                        energy: EnergyFunction | None = None,
                        regularization: float | None = None,
                        Q0: np.ndarray | None = None) -> ReducedModel:
    """Energy-based, structure-preserving reduction of an LPO system.

    1. ``A P + P A^T + B B^T = 0`` and ``P = R R^T``. An ill-conditioned
       ``P`` is replaced by the Gramian of the input ``[B, sqrt(eps) I]``
       (see :func:`~lpo_mor.lyapunov.input_normal_factor`).
    2. Even-degree energy coefficients (low-rank quadrature, or ``energy``
       when precomputed), mapped to input-normal coordinates.
    3. Maximize the ball-averaged energy over orthonormal ``Q``, starting
       from the leading ``r`` eigenvectors of the input-normal quadratic
       coefficient.
    4. ``V = R Q``, ``W^T = Q^T R^{-1}`` and Petrov-Galerkin projection.

    ``tol`` and ``ell`` control the quadrature (see
    :func:`~lpo_mor.kron_solver.build_observability_coefficients`). ``Q0``
    overrides the starting point of the optimizer.
    """
    n = sys.n
    if not 1 <= r <= n:
        raise ValidationError(f"r must lie in [1, {n}], got {r}")
    ball = BallSpec(L, n)
    R, eps = input_normal_factor(sys.A, sys.B, regularization)
    info = {}
    if energy is None:
        outs = list(sys.outputs)
        coeffs, info = build_observability_coefficients(
            sys.A, outs, tol=tol, ell=ell, return_info=True,
            degrees=range(2, 2 * sys.d + 1, 2))
        energy = EnergyFunction(coeffs)
    energy = EnergyFunction(energy.even(), energy.symmetrized)
    E_in, _ = to_input_normal(energy, R, [])

    W2 = quadratic_matrix(E_in.coefficients[2])
    lam, U = np.linalg.eigh(W2)
    order = np.argsort(-lam, kind="stable")
    if Q0 is None:
        Q0 = U[:, order[:r]]
    else:
        Q0 = np.asarray(Q0, dtype=float)
        if Q0.shape != (n, r):
            raise ValidationError(f"Q0 must be {n}x{r}, got {Q0.shape}")

    if r == n:
        Q = Q0
        stats = {"iterations": 0, "converged": True, "stalled": False}
        f0 = f1 = objective_F(E_in, Q0, ball)
    else:
        res = maximize_on_stiefel(lambda Q: objective_F(E_in, Q, ball),
                                  lambda Q: gradient_F(E_in, Q, ball),
                                  Q0, cfg)
        Q = res.Q
        stats = res.stats()
        f0, f1 = res.f_initial, res.f_final
    V = R @ Q
    W = spla.solve_triangular(R, Q, lower=True, trans="T")
    rom = project_lpo(sys, V, W)
    params = {
        "L": float(L),
        "regularization": eps,
        "optimizer": stats,
        "f_initial": f0,
        "f_final": f1,
        "ell": {str(k): v for k, v in info.get("ell", {}).items()},
        "ranks": {str(k): w.rank for k, w in energy.coefficients.items()},
    }
    return ReducedModel(V, W, rom, "EnergyBased", params)
