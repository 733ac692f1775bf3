"""Observability energy functions of LPO systems and the ball-averaged objective.

The observability energy of an LPO system is the polynomial

    E_o(x) = 1/2 sum_{k=2}^{2d} w_k^T (x (x) ... (x) x)

with CP coefficients ``w_k`` computed by
:func:`lpo_mor.kron_solver.build_observability_coefficients`.

The subspace objective is the trace form

    F(Q) = sum_kappa c_kappa(n, L) tr((Q (x)...(x) Q)^T W_2kappa (Q (x)...(x) Q)),

which equals the mean over the ball ``||x|| <= L`` of the coefficient
polynomial ``sum_k w_k^T (QQ^T x)^(x)k``, i.e. of ``2 E_o(QQ^T x)``. Odd
degrees average to zero over the ball and drop out. The trace form requires
symmetric ``w_2kappa``; here the symmetrization is carried out implicitly
(see :func:`lpo_mor.cp_tensor.cp_pair_trace`), so raw and explicitly
symmetrized coefficients give identical values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cp_tensor import (CPVector, cp_apply_factorwise, cp_eval,
                        cp_eval_gradient, cp_pair_trace,
                        cp_pair_trace_gradient, cp_symmetrize)
from .errors import ValidationError

__all__ = [
    "BallSpec",
    "EnergyFunction",
    "eval_energy",
    "eval_energy_state_gradient",
    "gradient_F",
    "moment_coefficient",
    "objective_F",
    "quadratic_matrix",
    "to_input_normal",
]


@dataclass(frozen=True)
class EnergyFunction:
    """Coefficients ``{k: w_k}`` of ``E(x) = 1/2 sum_k w_k^T x^(x)k``."""

    coefficients: dict
    symmetrized: dict = field(default_factory=dict)

    def __post_init__(self):
        coeffs = {}
        dims = set()
        for k, w in self.coefficients.items():
            k = int(k)
            if k < 2:
                raise ValidationError(f"energy degrees start at 2, got {k}")
            if w.order != k:
                raise ValidationError(
                    f"coefficient for degree {k} has order {w.order}")
            dims.add(w.dim)
            coeffs[k] = w
        if len(dims) > 1:
            raise ValidationError(f"coefficients have mixed dimensions {dims}")
        if not coeffs:
            raise ValidationError("an energy function needs coefficients")
        flags = {k: bool(self.symmetrized.get(k, False)) for k in coeffs}
        object.__setattr__(self, "coefficients", dict(sorted(coeffs.items())))
        object.__setattr__(self, "symmetrized", flags)

    @classmethod
    def from_list(cls, coeffs: Sequence[CPVector]) -> "EnergyFunction":
        """Build from ``[w_2, w_3, ..., w_2d]``."""
        return cls({k: w for k, w in enumerate(coeffs, start=2)})

    @property
    def dim(self) -> int:
        return next(iter(self.coefficients.values())).dim

    @property
    def degree(self) -> int:
        return max(self.coefficients)

    def even(self) -> dict:
        return {k: w for k, w in self.coefficients.items() if k % 2 == 0}

    def symmetrize(self, degrees: Sequence[int] | None = None) -> "EnergyFunction":
        """Explicitly symmetrize the given degrees (default: the even ones)."""
        if degrees is None:
            degrees = [k for k in self.coefficients if k % 2 == 0]
        coeffs = dict(self.coefficients)
        flags = dict(self.symmetrized)
        for k in degrees:
            if not flags.get(k):
                coeffs[k] = cp_symmetrize(coeffs[k])
                flags[k] = True
        return EnergyFunction(coeffs, flags)

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "coefficients": {str(k): w.to_dict()
                             for k, w in self.coefficients.items()},
            "symmetrized": {str(k): v for k, v in self.symmetrized.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnergyFunction":
        coeffs = {int(k): CPVector.from_dict(v)
                  for k, v in data["coefficients"].items()}
        flags = {int(k): bool(v)
                 for k, v in data.get("symmetrized", {}).items()}
        return cls(coeffs, flags)


@dataclass(frozen=True)
class BallSpec:
    """The ball ``{x in R^n : ||x|| <= L}``."""

    L: float
    n: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValidationError(f"ball radius must be > 0, got {self.L}")
        if self.n < 1:
            raise ValidationError(f"ball dimension must be >= 1, got {self.n}")


def eval_energy(E: EnergyFunction, x: np.ndarray) -> float | np.ndarray:
    """``1/2 sum_k w_k^T x^(x)k``; ``x`` may be a batch ``(N, n)``."""
    return 0.5 * sum(cp_eval(w, x) for w in E.coefficients.values())


def eval_energy_state_gradient(E: EnergyFunction, x: np.ndarray) -> np.ndarray:
    """Gradient of :func:`eval_energy` with respect to the state.

    Differentiates every CP term slot by slot, which equals ``k/2`` times
    the mode-1 contraction of the symmetrized coefficient with
    ``x^(x)(k-1)``.
    """
    return 0.5 * sum(cp_eval_gradient(w, x) for w in E.coefficients.values())


def to_input_normal(E: EnergyFunction, R: np.ndarray,
                    outputs: Sequence[CPVector | None]):
    """Change coordinates ``x = R x~`` in the energy and the output coefficients.

    Every slot of every coefficient is multiplied by ``R^T``. With ``R`` the
    Cholesky factor of the controllability Gramian the new coordinates are
    input-normal.

    Returns
    -------
    (EnergyFunction, list)
        Transformed energy and transformed output coefficients.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] != E.dim:
        raise ValidationError(f"R must be {E.dim}x{E.dim}, got {R.shape}")
    RT = R.T
    coeffs = {k: cp_apply_factorwise(w, [RT] * k)
              for k, w in E.coefficients.items()}
    new_out = [None if c is None else cp_apply_factorwise(c, [RT] * c.order)
               for c in outputs]
    return EnergyFunction(coeffs, E.symmetrized), new_out


def moment_coefficient(kappa: int, n: int, L: float) -> float:
    """``L^(2 kappa) (2 kappa - 1)!! n!! / (n + 2 kappa)!!``.

    The double-factorial ratio ``n!! / (n + 2 kappa)!!`` telescopes to
    ``1 / prod_{m=1}^{kappa} (n + 2m)``, accumulated in log space.
    """
    if kappa < 1:
        raise ValidationError(f"kappa must be >= 1, got {kappa}")
    if n < 1 or not L > 0:
        raise ValidationError("need n >= 1 and L > 0")
    log_c = 2 * kappa * math.log(L)
    log_c += sum(math.log(2 * m - 1) for m in range(1, kappa + 1))
    log_c -= sum(math.log(n + 2 * m) for m in range(1, kappa + 1))
    return math.exp(log_c)


def _check_ball(E: EnergyFunction, ball: BallSpec) -> None:
    if ball.n != E.dim:
        raise ValidationError(
            f"ball dimension {ball.n} does not match energy dimension {E.dim}")


def objective_F(E: EnergyFunction, Q: np.ndarray, ball: BallSpec) -> float:
    """Ball-averaged energy of the subspace spanned by orthonormal ``Q``."""
    _check_ball(E, ball)
    total = 0.0
    for k, w in E.even().items():
        c = moment_coefficient(k // 2, ball.n, ball.L)
        total += c * cp_pair_trace(w, Q, symmetrize=True)
    return total


def gradient_F(E: EnergyFunction, Q: np.ndarray, ball: BallSpec) -> np.ndarray:
    """Euclidean gradient of :func:`objective_F` on ``n x r`` matrices.

    Each trace term is a product of ``kappa`` bilinear factors
    ``u_a^T Q Q^T u_b``; the gradient differentiates that product exactly.
    For ``kappa = 1`` it reduces to ``2 W Q``, and for ``kappa = 2`` to
    ``4 sum_i mat(w)(q_i (x) q_i (x) Q)`` with ``mat`` the mode-1
    matricization of the symmetric coefficient.
    """
    _check_ball(E, ball)
    G = np.zeros(np.shape(Q))
    for k, w in E.even().items():
        c = moment_coefficient(k // 2, ball.n, ball.L)
        G += c * cp_pair_trace_gradient(w, Q, symmetrize=True)
    return G


def quadratic_matrix(w: CPVector) -> np.ndarray:
    """Symmetric ``n x n`` matrix of an order-2 coefficient."""
    if w.order != 2:
        raise ValidationError(f"expected an order-2 coefficient, got {w.order}")
    M = w.factors[0] @ w.factors[1].T
    return 0.5 * (M + M.T)
