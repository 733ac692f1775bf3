"""
Observability energy of a polynomial-output system
==================================================

Builds the low-rank energy coefficients of a small system whose output is
linear plus quadratic in the state, and checks them against a simulation
and against the dense Lyapunov solution.
"""

# %%
# A small system
# --------------
#
# ``A`` is stable, the output is ``y = c1^T x + x^T C2 x`` with ``C2`` stored
# as the CP vector ``sum_j f_j (x) f_j``.

import numpy as np

from lpo_mor import CPVector, LPOSystem
from lpo_mor.energy import (EnergyFunction, eval_energy, eval_energy_state_gradient,
                            quadratic_matrix)
from lpo_mor.kron_solver import build_observability_coefficients
from lpo_mor.lyapunov import solve_lyapunov_dual
from lpo_mor.simulation import InputSignal, simulate

rng = np.random.default_rng(0)
n = 6
M = rng.standard_normal((n, n))
A = M - (np.linalg.eigvals(M).real.max() + 1.0) * np.eye(n)
F = 0.5 * rng.standard_normal((n, 2))
sys = LPOSystem(A, rng.standard_normal((n, 1)),
                (CPVector.rank_one(rng.standard_normal(n)), CPVector([F, F])))
print(sys.n, sys.m, sys.d)

# %%
# Energy coefficients
# -------------------
#
# One quadrature per degree ``k = 2, 3, 4``. The ranks grow with the number
# of nodes times the rank of the right-hand side.

coeffs, info = build_observability_coefficients(sys.A, sys.outputs, tol=1e-10,
                                                return_info=True)
E = EnergyFunction.from_list(coeffs)
for k, w in E.coefficients.items():
    print(f"w_{k}: rank {w.rank}, ell {info['ell'][k]}")

# %%
# The quadratic part is the observability Gramian
# -----------------------------------------------

W = quadratic_matrix(E.coefficients[2])
W_ref = solve_lyapunov_dual(sys.A, sys.outputs[0].factors[0][:, 0])
print("Gramian mismatch", np.linalg.norm(W - W_ref) / np.linalg.norm(W_ref))

# %%
# Energy against the output integral
# ----------------------------------
#
# Starting from ``x0`` with zero input, ``E(x0)`` is half the integral of
# ``y^2``.

x0 = rng.standard_normal(n)
x0 *= 0.1 / np.linalg.norm(x0)
tr = simulate(sys, InputSignal.zero(1), (0.0, 60.0), dt=1e-3, x0=x0)
print("E(x0)          ", eval_energy(E, x0))
print("0.5 * int y^2  ", 0.5 * np.trapezoid(tr.outputs**2, tr.times))

# %%
# Lyapunov-type identity
# ----------------------
#
# Along the free flow ``dE/dt = grad E(x)^T A x = -y^2 / 2``.

x = 0.1 * rng.standard_normal(n)
lhs = eval_energy_state_gradient(E, x) @ (sys.A @ x)
print("residual", lhs + 0.5 * sys.output(x) ** 2)
