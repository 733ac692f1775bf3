"""Independent reference computations shared by the test modules."""
import itertools
import math
from collections import defaultdict

import numpy as np


def dense_tensor(w):
    """Kronecker expansion of a CP vector as an order-k array."""
    n, k = w.dim, w.order
    out = np.zeros(n**k)
    for j in range(w.rank):
        term = np.ones(1)
        for F in w.factors:
            term = np.kron(term, F[:, j])
        out += term
    return out.reshape((n,) * k)


def sphere_monomial_integral(alpha):
    """Folland's formula for the integral of ``x^alpha`` over the unit sphere."""
    if any(a % 2 for a in alpha):
        return 0.0
    beta = [(a + 1) / 2 for a in alpha]
    return 2 * math.prod(math.gamma(b) for b in beta) / math.gamma(sum(beta))


def ball_monomial_mean(alpha, n, L):
    """Mean of ``x^alpha`` over the ball of radius ``L`` in ``R^n``."""
    deg = sum(alpha)
    integral = sphere_monomial_integral(alpha) * L ** (deg + n) / (deg + n)
    volume = math.pi ** (n / 2) * L**n / math.gamma(n / 2 + 1)
    return integral / volume


def projected_polynomial_ball_mean(coeffs, P, L):
    """Exact ball mean of ``sum_k w_k^T (P x)^(x)k`` via monomial moments."""
    n = P.shape[0]
    total = 0.0
    for w in coeffs:
        T = dense_tensor(w)
        for s in range(w.order):
            T = np.moveaxis(np.tensordot(P.T, T, axes=([1], [s])), 0, s)
        mono = defaultdict(float)
        for idx in itertools.product(range(n), repeat=w.order):
            alpha = [0] * n
            for i in idx:
                alpha[i] += 1
            mono[tuple(alpha)] += T[idx]
        total += sum(v * ball_monomial_mean(a, n, L) for a, v in mono.items())
    return total


def uniform_ball(rng, N, n, L):
    """``N`` uniform samples from the ball of radius ``L`` in ``R^n``."""
    X = rng.standard_normal((N, n))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X * (L * rng.random(N) ** (1.0 / n))[:, None]


def random_stable(rng, n, shift=0.5):
    M = rng.standard_normal((n, n)) / np.sqrt(n)
    return M - (np.linalg.eigvals(M).real.max() + shift) * np.eye(n)


def exact_energy_d2(A, c1, C2, x0, horizon, steps):
    """Reference ``1/2 int y^2`` of the zero-input response, via matrix exponentials.

    ``y(t) = c1^T x + x^T C2 x`` with ``x(t) = expm(A t) x0``; integrated
    with composite Simpson on a fine grid.
    """
    from scipy.linalg import expm
    t = np.linspace(0.0, horizon, steps + 1)
    E = expm(A * (t[1] - t[0]))
    X = np.empty((t.size, x0.size))
    X[0] = x0
    for i in range(steps):
        X[i + 1] = E @ X[i]
    y = X @ c1 + np.einsum("ti,ij,tj->t", X, C2, X)
    from scipy.integrate import simpson
    return 0.5 * simpson(y * y, x=t)


def dense_objective(energy, Q, L):
    """Ball-averaged energy of ``span(Q)`` from symmetrized dense coefficients.

    Valid for any ``Q`` (not only orthonormal ones), so it can be
    differentiated by finite differences. Each order-``2 kappa`` term is
    weighted by the ball moment of ``x_1^(2 kappa)``.
    """
    P = Q @ Q.T
    n = P.shape[0]
    total = 0.0
    for k, w in energy.coefficients.items():
        if k % 2:
            continue
        T = dense_tensor(w)
        T = sum(np.transpose(T, p) for p in itertools.permutations(range(k)))
        T = T / math.factorial(k)
        for _ in range(k // 2):
            # contract the leading axis with the first axis of the second half
            T = np.tensordot(T, P, axes=([0, T.ndim // 2], [0, 1]))
        total += ball_monomial_mean([k] + [0] * (n - 1), n, L) * float(T)
    return total
