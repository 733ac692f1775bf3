"""Riemannian gradient ascent on the Stiefel manifold ``{Q : Q^T Q = I}``."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError

__all__ = [
    "OptimizerConfig",
    "StiefelResult",
    "maximize_on_stiefel",
    "retract_qr",
    "stiefel_defect",
    "tangent_project",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`maximize_on_stiefel`.

    ``grad_tol`` is relative: iteration stops once the Riemannian gradient
    norm drops below ``grad_tol`` times the Euclidean gradient norm.
    ``initial_step`` is the length of the first trial move in ``Q``; later
    trial steps use the Barzilai-Borwein length.
    """

    max_iters: int = 500
    grad_tol: float = 1e-8
    initial_step: float = 0.1
    backtrack: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 50

    def __post_init__(self):
        if self.max_iters < 0 or self.max_backtracks < 1:
            raise ValidationError("iteration limits must be positive")
        if not (self.grad_tol > 0 and self.initial_step > 0):
            raise ValidationError("grad_tol and initial_step must be positive")
        if not (0 < self.backtrack < 1 and 0 < self.armijo < 1):
            raise ValidationError("backtrack and armijo must lie in (0, 1)")


@dataclass
class StiefelResult:
    Q: np.ndarray
    values: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stalled: bool = False

    @property
    def f_initial(self) -> float:
        return self.values[0]

    @property
    def f_final(self) -> float:
        return self.values[-1]

    def stats(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "stalled": self.stalled,
            "f_initial": self.f_initial,
            "f_final": self.f_final,
            "grad_norm": self.grad_norms[-1] if self.grad_norms else None,
        }


def stiefel_defect(Q: np.ndarray) -> float:
    """``||Q^T Q - I||_F``."""
    return float(np.linalg.norm(Q.T @ Q - np.eye(Q.shape[1])))


def tangent_project(Q: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``G`` onto the tangent space at ``Q``."""
    if np.shape(Q) != np.shape(G):
        raise ValidationError(f"shape mismatch: {np.shape(Q)} vs {np.shape(G)}")
    S = Q.T @ G
    return G - Q @ (0.5 * (S + S.T))


def retract_qr(Q: np.ndarray, xi: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Q factor of ``Q + t xi`` with a positive diagonal in R."""
    Y = Q + t * xi
    Qn, R = np.linalg.qr(Y)
    d = np.sign(np.diag(R))
    d[d == 0] = 1.0
    return Qn * d


def maximize_on_stiefel(f: Callable[[np.ndarray], float],
                        grad_f: Callable[[np.ndarray], np.ndarray],
                        Q0: np.ndarray,
                        cfg: OptimizerConfig | None = None,
                        callback: Callable[[np.ndarray, float], None] | None = None
                        ) -> StiefelResult:
    """Maximize ``f`` over matrices with orthonormal columns.

    Steepest ascent along the Riemannian gradient with QR retraction,
    Barzilai-Borwein trial steps and Armijo backtracking, so the recorded
    objective values never decrease. If no step satisfies the Armijo
    condition after ``cfg.max_backtracks`` reductions the best iterate is
    returned with ``stalled=True``. ``callback(Q, f(Q))`` is invoked on the
    start point and on every accepted iterate.
    """
    cfg = cfg or OptimizerConfig()
    Q = np.array(Q0, dtype=float)
    if stiefel_defect(Q) > 1e-10:
        Q = retract_qr(Q, np.zeros_like(Q), 0.0)
    res = StiefelResult(Q=Q)
    fQ = float(f(Q))
    res.values.append(fQ)
    if callback is not None:
        callback(Q, fQ)
    prev_Q = prev_rg = None
    t = None
    for it in range(cfg.max_iters + 1):
        G = grad_f(Q)
        rg = tangent_project(Q, G)
        gnorm = float(np.linalg.norm(rg))
        res.grad_norms.append(gnorm)
        scale = float(np.linalg.norm(G))
        if gnorm <= cfg.grad_tol * scale or gnorm == 0.0:
            res.converged = True
            break
        if it == cfg.max_iters:
            break
        if prev_Q is None:
            t = cfg.initial_step / gnorm
        else:
            s = Q - prev_Q
            # change of the descent direction -rg, old one transported by projection
            y = tangent_project(Q, prev_rg) - rg
            sy = float(np.sum(s * y))
            if sy > 0:
                t = float(np.sum(s * s)) / sy
            else:
                t = 2.0 * t
        gg = gnorm * gnorm
        for _ in range(cfg.max_backtracks):
            Qn = retract_qr(Q, rg, t)
            fn = float(f(Qn))
            if fn >= fQ + cfg.armijo * t * gg:
                break
            t *= cfg.backtrack
        else:
            res.stalled = True
            break
        prev_Q, prev_rg = Q, rg
        Q, fQ = Qn, fn
        res.values.append(fQ)
        res.step_sizes.append(t)
        res.iterations = it + 1
        if callback is not None:
            callback(Q, fQ)
    res.Q = Q
    return res
