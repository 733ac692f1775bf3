"""Low-rank quadrature solver for Kronecker-sum systems ``L_k(A^T) w = -b``.

``L_k(M) = sum_j I (x) ... (x) M (x) ... (x) I`` (``M`` in slot ``j``). For a
stable ``A`` its inverse is ``-int_0^inf exp(tM) (x) ... (x) exp(tM) dt``; a
sinc-type quadrature of that integral maps a CP right-hand side of rank ``R``
to a CP solution of rank ``(2 ell + 1) R``.

Sign convention: right-hand sides are stored positive and the minus sign of
the Kronecker system is applied inside :func:`solve_kron_lowrank`, which
therefore returns ``+sum_i w_i (exp(a_i A^T) (x) ... ) b``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as spla

from .cp_tensor import CPVector, cp_add, cp_compress, cp_kron, cp_scale
from .errors import ValidationError
from .lyapunov import check_stable

__all__ = [
    "ELL_MAX",
    "ExponentialAction",
    "QuadratureCapWarning",
    "QuadratureRule",
    "SpectralBox",
    "assemble_rhs",
    "build_observability_coefficients",
    "choose_ell",
    "estimate_spectral_box",
    "kronecker_sum",
    "quadrature_rule",
    "solve_kron_lowrank",
]

ELL_MAX = 200
SCHUR_FALLBACK_COND = 1e8
NONDIAGONALIZABLE_COND = 1e14


class QuadratureCapWarning(UserWarning):
    """The a-priori bound asked for more than ``ELL_MAX`` quadrature nodes."""


@dataclass(frozen=True)
class QuadratureRule:
    ell: int
    k: int
    lambda_min: float
    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return self.nodes.size


@dataclass(frozen=True)
class SpectralBox:
    """Bounds ``Lambda(A) in [-lambda_max, -lambda_min] + i[-mu, mu]``."""

    lambda_min: float
    lambda_max: float
    mu: float
    kappa_X: float
    symmetric: bool


def quadrature_rule(ell: int, k: int, lambda_min: float) -> QuadratureRule:
    """Nodes and weights for ``i = -ell, ..., ell`` with step ``pi / sqrt(ell)``."""
    if ell < 1:
        raise ValidationError(f"ell must be >= 1, got {ell}")
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if not lambda_min > 0:
        raise ValidationError(f"lambda_min must be > 0, got {lambda_min}")
    h = math.pi / math.sqrt(ell)
    t = h * np.arange(-ell, ell + 1)
    scale = k * lambda_min
    nodes = np.log(np.exp(t) + np.sqrt(1.0 + np.exp(2.0 * t))) / scale
    weights = h / (np.sqrt(1.0 + np.exp(-2.0 * t)) * scale)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(ell, k, float(lambda_min), nodes, weights)


def _is_symmetric(A: np.ndarray) -> bool:
    return bool(np.allclose(A, A.T, rtol=0.0,
                            atol=1e-14 * max(np.abs(A).max(), 1.0)))


def estimate_spectral_box(A: np.ndarray) -> SpectralBox:
    """Spectral bounds of a stable ``A`` from a dense eigendecomposition."""
    A = np.asarray(A, dtype=float)
    check_stable(A)
    if _is_symmetric(A):
        lam = np.linalg.eigvalsh(0.5 * (A + A.T))
        return SpectralBox(float(-lam.max()), float(-lam.min()), 0.0, 1.0, True)
    lam, X = np.linalg.eig(A)
    kappa = float(np.linalg.cond(X))
    if not np.isfinite(kappa) or kappa > NONDIAGONALIZABLE_COND:
        raise ValidationError(
            f"A is not diagonalizable in working precision (cond(X) = "
            f"{kappa:.2e}); perturb A slightly and retry")
    return SpectralBox(float(-lam.real.max()), float(-lam.real.min()),
                       float(np.abs(lam.imag).max()), max(kappa, 1.0), False)


def _bound_log(box: SpectralBox, k: int) -> float:
    """Log of the ell-independent prefactor of the quadrature error bound."""
    return (k * math.log(box.kappa_X) - math.log(k * box.lambda_min)
            + box.mu / (box.lambda_min * math.pi))


def choose_ell(box: SpectralBox, k: int, tol: float,
               ell_max: int = ELL_MAX) -> int:
    """Smallest ``ell`` whose a-priori bound (unit constant) is below ``tol``.

    The bound is ``kappa_X^k / (k lambda_min) exp(mu / (lambda_min pi))
    exp(-pi sqrt(ell))`` relative to ``||b||``. Its constant is unknown, so
    the answer is a heuristic floor. Capped at ``ell_max`` with a
    :class:`QuadratureCapWarning`.
    """
    if not tol > 0:
        raise ValidationError(f"tol must be > 0, got {tol}")
    c = _bound_log(box, k)
    root = (c - math.log(tol)) / math.pi
    ell = max(1, math.ceil(root * root)) if root > 0 else 1
    # guard against rounding in the ceil
    while ell > 1 and c - math.pi * math.sqrt(ell - 1) <= math.log(tol):
        ell -= 1
    while c - math.pi * math.sqrt(ell) > math.log(tol):
        ell += 1
    if ell > ell_max:
        warnings.warn(
            f"quadrature bound requests ell={ell}; capped at {ell_max}",
            QuadratureCapWarning, stacklevel=2)
        ell = ell_max
    return ell


class ExponentialAction:
    """Apply ``exp(alpha A^T)`` to blocks of vectors for many ``alpha``.

    One factorization of ``A`` is computed up front: ``eigh`` for symmetric
    ``A``, an eigendecomposition when its eigenvector matrix is well
    conditioned, and a real Schur form otherwise.
    """

    def __init__(self, A: np.ndarray):
        A = np.asarray(A, dtype=float)
        self.n = A.shape[0]
        if _is_symmetric(A):
            self.method = "eigh"
            lam, S = np.linalg.eigh(0.5 * (A + A.T))
            self._lam, self._S = lam, S
            return
        lam, X = np.linalg.eig(A)
        if np.linalg.cond(X) <= SCHUR_FALLBACK_COND:
            # A^T = X^{-T} D X^T
            self.method = "eig"
            self._lam = lam
            self._XT = X.T
            self._lu = spla.lu_factor(X.T)
        else:
            self.method = "schur"
            T, Z = spla.schur(A.T, output="real")
            self._T, self._Z = T, Z

    def prepare(self, V: np.ndarray) -> np.ndarray:
        """Transform ``V`` into the coordinates used by :meth:`apply`."""
        if self.method == "eigh":
            return self._S.T @ V
        if self.method == "eig":
            return self._XT @ V.astype(complex)
        return self._Z.T @ V

    def apply(self, alpha: float, Y: np.ndarray) -> np.ndarray:
        """``exp(alpha A^T) V`` for ``Y = prepare(V)``."""
        if self.method == "eigh":
            return self._S @ (np.exp(alpha * self._lam)[:, None] * Y)
        if self.method == "eig":
            out = spla.lu_solve(self._lu, np.exp(alpha * self._lam)[:, None] * Y)
            return out.real
        return self._Z @ (spla.expm(alpha * self._T) @ Y)

    def __call__(self, alpha: float, V: np.ndarray) -> np.ndarray:
        return self.apply(alpha, self.prepare(V))


def solve_kron_lowrank(A: np.ndarray, rhs: CPVector, rule: QuadratureRule,
                       action: ExponentialAction | None = None) -> CPVector:
    """Approximate the solution of ``L_k(A^T) w = -rhs`` in CP form.

    Term ``i`` of the quadrature contributes ``omega_i`` times the factors
    ``exp(alpha_i A^T) U_s``, so the result has rank
    ``(2 ell + 1) * rhs.rank``. Terms are stacked in node order
    ``i = -ell, ..., ell``. The exponentials only act on the distinct
    right-hand-side columns, and the result is returned in pooled form
    (see :meth:`CPVector.pooled`) referring to those columns.
    """
    A = np.asarray(A, dtype=float)
    if rhs.order != rule.k:
        raise ValidationError(
            f"rhs has order {rhs.order} but the rule was built for k={rule.k}")
    if rhs.dim != A.shape[0]:
        raise ValidationError(
            f"rhs has dimension {rhs.dim} but A is {A.shape[0]}x{A.shape[0]}")
    if action is None:
        check_stable(A)
        action = ExponentialAction(A)
    k, n, R = rhs.order, rhs.dim, rhs.rank
    if R == 0:
        return CPVector.zero(k, n)
    # Kronecker products of low-rank outputs repeat columns many times
    pool, index, weights = rhs.pool_parts()
    uniq, inverse = np.unique(pool, axis=1, return_inverse=True)
    local = inverse.ravel()[index]
    P = uniq.shape[1]
    Y = action.prepare(uniq)
    blocks = [action.apply(alpha, Y) for alpha in rule.nodes]
    offsets = P * np.arange(len(blocks))
    full_index = (offsets[None, :, None] + local[:, None, :]).reshape(k, -1)
    full_weights = np.outer(rule.weights, weights).ravel()
    return CPVector.pooled(np.hstack(blocks), full_index, full_weights, P)


def assemble_rhs(c: Sequence[CPVector | None], k: int) -> CPVector:
    """Minimal-rank right-hand side for degree ``k``.

    Odd ``k = 2 kappa + 1``: ``2 sum_{i=1}^{kappa} c_i (x) c_{k-i}``.
    Even ``k = 2 kappa``: ``c_kappa (x) c_kappa + 2 sum_{i<kappa} c_i (x) c_{k-i}``.
    This defines the same homogeneous polynomial as the full sum
    ``sum_{i=1}^{k-1} c_i (x) c_{k-i}`` (each mixed pair appears once with
    weight 2 instead of twice in both orders).
    """
    d = len(c)
    if not 2 <= k <= 2 * d:
        raise ValidationError(f"k must lie in [2, {2 * d}], got {k}")
    n = next(ci.dim for ci in c if ci is not None)

    def get(i):
        if i < 1 or i > d or c[i - 1] is None:
            return None
        ci = c[i - 1]
        return ci if ci.rank else None

    kappa = k // 2
    out = CPVector.zero(k, n)
    if k % 2 == 0:
        ck = get(kappa)
        if ck is not None:
            out = cp_add(out, cp_kron(ck, ck))
        last = kappa - 1
    else:
        last = kappa
    for i in range(1, last + 1):
        a, b = get(i), get(k - i)
        if a is not None and b is not None:
            out = cp_add(out, cp_scale(cp_kron(a, b), 2.0))
    return out


def kronecker_sum(M: np.ndarray, k: int) -> np.ndarray:
    """Dense ``L_k(M)`` of size ``n^k x n^k`` (oracle use only)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    out = np.zeros((n**k, n**k))
    for j in range(k):
        term = np.eye(1)
        for s in range(k):
            term = np.kron(term, M if s == j else np.eye(n))
        out += term
    return out


def build_observability_coefficients(
        A: np.ndarray, c: Sequence[CPVector | None], tol: float = 1e-8,
        ell: int | None = None, compress: bool = True,
        return_info: bool = False, degrees: Iterable[int] | None = None):
    """Low-rank coefficients ``w_2, ..., w_2d`` of the observability energy.

    For each degree ``k`` the minimal right-hand side is assembled, ``ell``
    is chosen from the a-priori bound (unless given), and the quadrature is
    accumulated in CP form. With ``compress`` numerically parallel terms are
    merged afterwards.

    Returns the list ``[w_2, ..., w_2d]``; with ``return_info`` also a dict
    holding the chosen ``ell`` per degree, the right-hand-side ranks and the
    spectral box. When ``degrees`` selects a subset of ``2..2d`` only those
    are computed and a dict ``{k: w_k}`` is returned instead of the list.
    """
    A = np.asarray(A, dtype=float)
    box = estimate_spectral_box(A)
    action = ExponentialAction(A)
    d = len(c)
    all_k = range(2, 2 * d + 1)
    if degrees is None:
        wanted = list(all_k)
    else:
        wanted = sorted(set(int(k) for k in degrees))
        bad = [k for k in wanted if k not in all_k]
        if bad:
            raise ValidationError(f"degrees {bad} outside 2..{2 * d}")
    coeffs = {}
    info = {"ell": {}, "rhs_rank": {}, "rank": {}, "box": box,
            "capped": {}}
    for k in wanted:
        rhs = assemble_rhs(c, k)
        capped = False
        if ell is None:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", QuadratureCapWarning)
                ell_k = choose_ell(box, k, tol)
            capped = any(issubclass(w.category, QuadratureCapWarning)
                         for w in caught)
            if capped:
                warnings.warn(
                    f"degree {k}: quadrature capped at ell={ell_k}",
                    QuadratureCapWarning, stacklevel=2)
        else:
            ell_k = int(ell)
        rule = quadrature_rule(ell_k, k, box.lambda_min)
        w = solve_kron_lowrank(A, rhs, rule, action)
        if compress:
            w = cp_compress(w)
        coeffs[k] = w
        info["ell"][k] = ell_k
        info["rhs_rank"][k] = rhs.rank
        info["rank"][k] = w.rank
        info["capped"][k] = capped
    if degrees is None:
        coeffs = [coeffs[k] for k in all_k]
    if return_info:
        return coeffs, info
    return coeffs
