"""Benchmark LPO systems: a mass-spring-damper chain and 2-D convection-diffusion."""
from __future__ import annotations

import numpy as np

from .cp_tensor import CPVector
from .errors import ValidationError
from .system import LPOSystem

__all__ = ["build_convdiff", "build_msd", "msd_hamiltonian_matrix"]


def _path_laplacian_plus_ground(N: int) -> np.ndarray:
    """Coupling matrix of a chain with neighbor links and one link to ground each."""
    T = 2.0 * np.eye(N) - np.eye(N, k=1) - np.eye(N, k=-1)
    if N > 1:
        T[0, 0] = T[-1, -1] = 1.0
    else:
        T[0, 0] = 0.0
    return T + np.eye(N)


def msd_hamiltonian_matrix(n_masses: int, mass: float = 1.0,
                           stiffness: float = 1.0) -> np.ndarray:
    """Symmetric ``S`` with ``H(x) = x^T S x`` for state ``x = (q, p)``."""
    T = _path_laplacian_plus_ground(n_masses)
    N = n_masses
    S = np.zeros((2 * N, 2 * N))
    S[:N, :N] = 0.5 * stiffness * T
    S[N:, N:] = 0.5 / mass * np.eye(N)
    return S


def build_msd(n_masses: int = 25, mass: float = 4.0, stiffness: float = 4.0,
              damping: float = 1.0) -> LPOSystem:
    """Mass-spring-damper chain with a Hamiltonian-plus-position output.

    Every mass is tied to its neighbors and to the ground by identical
    springs and dampers. The state is ``x = (q, p)`` with positions ``q`` and
    momenta ``p = mass * dq/dt`` (``n = 2 n_masses``). Forces act on the first
    and last mass. The output is ``y = q_1 + H(x)`` where
    ``H = p^T p / (2 mass) + q^T K q / 2``; the quadratic coefficient is
    stored as the symmetric CP form ``sum_j f_j (x) f_j`` obtained from the
    eigendecomposition of the Hamiltonian matrix.
    """
    if n_masses < 1:
        raise ValidationError("n_masses must be >= 1")
    if min(mass, stiffness, damping) <= 0:
        raise ValidationError("mass, stiffness and damping must be positive")
    N = n_masses
    T = _path_laplacian_plus_ground(N)
    K = stiffness * T
    C = damping * T
    A = np.block([[np.zeros((N, N)), np.eye(N) / mass],
                  [-K, -C / mass]])
    B = np.zeros((2 * N, 2))
    B[N, 0] = 1.0
    B[2 * N - 1, 1] = 1.0
    c1 = CPVector.rank_one(np.eye(2 * N)[0])
    lam, V = np.linalg.eigh(msd_hamiltonian_matrix(N, mass, stiffness))
    F = V * np.sqrt(np.clip(lam, 0.0, None))
    c2 = CPVector([F, F])
    return LPOSystem(A, B, (c1, c2))


def build_convdiff(g: int = 20, v: float = 1.0) -> LPOSystem:
    """Finite-difference convection-diffusion on the unit square.

    ``dc/dt = Laplace(c) - v . grad(c) + f`` with homogeneous Dirichlet
    boundary, an equidistant ``g x g`` interior grid (``h = 1/(g+1)``), the
    5-point Laplacian and first-order upwind differences for the convection
    field ``(v, v)``. The input enters uniformly (``B`` all ones) and the
    output is ``10 x_1 + 100 x_2^2 + 1000 x_3^3``.
    """
    if g < 3:
        raise ValidationError("grid size g must be >= 3")
    h = 1.0 / (g + 1)
    I = np.eye(g)
    lap = (np.eye(g, k=1) + np.eye(g, k=-1) - 2.0 * I) / h**2
    if v >= 0:
        conv = -v / h * (I - np.eye(g, k=-1))
    else:
        conv = -v / h * (np.eye(g, k=1) - I)
    A1 = lap + conv
    A = np.kron(A1, I) + np.kron(I, A1)
    n = g * g
    e = np.eye(n)
    outputs = (
        CPVector.rank_one(e[0], scale=10.0),
        CPVector.rank_one(e[1], e[1], scale=100.0),
        CPVector.rank_one(e[2], e[2], e[2], scale=1000.0),
    )
    return LPOSystem(A, np.ones((n, 1)), outputs)
