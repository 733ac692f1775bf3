"""Vectors in R^(n^k) stored in canonical polyadic (sum of Kronecker products) form.

A :class:`CPVector` of order ``k`` and rank ``R`` holds ``k`` factor matrices
``U_1, ..., U_k`` of shape ``(n, R)`` and represents

    w = sum_j U_1[:, j] (x) U_2[:, j] (x) ... (x) U_k[:, j]

where ``(x)`` is the Kronecker product with the first slot varying slowest,
i.e. ``dense()`` agrees with ``np.kron(U_1[:, j], np.kron(U_2[:, j], ...))``.
"""
from __future__ import annotations

import itertools
import math
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import sparse

__all__ = [
    "CPVector",
    "DENSE_LIMIT",
    "check_permutation",
    "cp_add",
    "cp_apply_factorwise",
    "cp_compress",
    "cp_eval",
    "cp_eval_gradient",
    "cp_kron",
    "cp_pair_trace",
    "cp_pair_trace_gradient",
    "cp_permute",
    "cp_scale",
    "cp_symmetrize",
    "perfect_matchings",
    "square_matricization",
]

DENSE_LIMIT = 10**8
ORTHONORMAL_TOL = 1e-8


class CPVector:
    """Immutable order-``k`` vector in CP form.

    Parameters
    ----------
    factors
        Sequence of ``k`` arrays, each of shape ``(n, R)``. A 1-D array is
        treated as a single column.

    Notes
    -----
    Vectors built by :meth:`pooled` store the factor columns once in a shared
    pool and refer to them by index, which keeps quadrature sums with many
    repeated columns small. The factor matrices are then only materialized
    when :attr:`factors` is accessed; the evaluation, pair-trace, factorwise,
    permutation and compression routines work on the pool directly.
    """

    __slots__ = ("_factors", "_pool", "_index", "_weights", "_block", "_keys")

    def __init__(self, factors: Sequence[np.ndarray]):
        if len(factors) == 0:
            raise ValueError("a CPVector needs at least one factor matrix")
        mats = []
        for U in factors:
            U = np.array(U, dtype=float)
            if U.ndim == 1:
                U = U[:, None]
            if U.ndim != 2:
                raise ValueError("factor matrices must be 2-D")
            mats.append(U)
        shape = mats[0].shape
        for U in mats[1:]:
            if U.shape != shape:
                raise ValueError(
                    f"factor shapes differ: {shape} vs {U.shape}")
        if shape[0] < 1:
            raise ValueError("dimension n must be >= 1")
        for U in mats:
            U.setflags(write=False)
        self._factors = tuple(mats)
        self._pool = self._index = self._weights = self._block = None
        self._keys = {}

    @classmethod
    def pooled(cls, pool: np.ndarray, index: np.ndarray,
               weights: np.ndarray | None = None,
               block_size: int | None = None) -> "CPVector":
        """Build ``sum_j weights[j] pool[:, index[0, j]] (x) ... (x) pool[:, index[k-1, j]]``.

        Parameters
        ----------
        pool
            Shared columns, shape ``(n, M)``.
        index
            Integer array of shape ``(k, R)`` with entries in ``[0, M)``.
        weights
            Term weights of length ``R``; ones by default.
        block_size
            Optional width ``P`` of consecutive pool blocks such that every
            term takes all its columns from one block. Pair traces then only
            need the ``P x P`` Gram matrix of each block.
        """
        pool = np.array(pool, dtype=float)
        index = np.array(index, dtype=np.intp)
        if pool.ndim != 2 or pool.shape[0] < 1:
            raise ValueError("pool must be a 2-D array with n >= 1 rows")
        if index.ndim != 2 or index.shape[0] < 1:
            raise ValueError("index must have shape (k, R) with k >= 1")
        R = index.shape[1]
        if index.size and (index.min() < 0 or index.max() >= pool.shape[1]):
            raise ValueError("pool index out of range")
        if weights is None:
            weights = np.ones(R)
        weights = np.array(weights, dtype=float).ravel()
        if weights.size != R:
            raise ValueError(f"expected {R} weights, got {weights.size}")
        if block_size is not None:
            block_size = int(block_size)
            if block_size < 1 or pool.shape[1] % block_size:
                raise ValueError(
                    f"block size {block_size} does not divide the pool width "
                    f"{pool.shape[1]}")
            blk = index // block_size
            if R and np.any(blk != blk[0]):
                raise ValueError("a term mixes columns from different blocks")
        for a in (pool, index, weights):
            a.setflags(write=False)
        obj = cls.__new__(cls)
        obj._factors = None
        obj._pool, obj._index, obj._weights = pool, index, weights
        obj._block = block_size
        obj._keys = {}
        return obj

    @classmethod
    def zero(cls, order: int, dim: int) -> "CPVector":
        return cls([np.zeros((dim, 0)) for _ in range(order)])

    @classmethod
    def rank_one(cls, *vectors, scale: float = 1.0) -> "CPVector":
        """Build ``scale * v_1 (x) ... (x) v_k``."""
        vecs = [np.asarray(v, dtype=float).reshape(-1, 1) for v in vectors]
        vecs[0] = scale * vecs[0]
        return cls(vecs)

    @classmethod
    def from_matrix(cls, M: np.ndarray, tol: float = 1e-14) -> "CPVector":
        """Order-2 CP form of ``vec(M)`` from an SVD, dropping tiny terms."""
        M = np.asarray(M, dtype=float)
        U, s, Vt = np.linalg.svd(M)
        keep = s > tol * max(s[0], np.finfo(float).tiny) if s.size else s > 0
        return cls([U[:, keep] * s[keep], Vt[keep].T])

    @property
    def is_pooled(self) -> bool:
        return self._pool is not None

    @property
    def block_size(self) -> int | None:
        """Pool block width of a pooled vector (``None`` if unblocked)."""
        return self._block

    @property
    def factors(self) -> tuple:
        if self._factors is None:
            mats = [self._pool[:, idx] for idx in self._index]
            mats[0] = mats[0] * self._weights
            for U in mats:
                U.setflags(write=False)
            self._factors = tuple(mats)
        return self._factors

    def pool_parts(self) -> tuple:
        """Return ``(pool, index, weights)``; plain vectors pool their factors."""
        if self._pool is not None:
            return self._pool, self._index, self._weights
        R = self.rank
        pool = np.hstack(self._factors)
        index = np.arange(self.order * R).reshape(self.order, R)
        return pool, index, np.ones(R)

    @property
    def order(self) -> int:
        if self._pool is not None:
            return self._index.shape[0]
        return len(self._factors)

    @property
    def dim(self) -> int:
        if self._pool is not None:
            return self._pool.shape[0]
        return self._factors[0].shape[0]

    @property
    def rank(self) -> int:
        if self._pool is not None:
            return self._index.shape[1]
        return self._factors[0].shape[1]

    def __repr__(self) -> str:
        return f"CPVector(order={self.order}, dim={self.dim}, rank={self.rank})"

    def dense(self) -> np.ndarray:
        """Explicit Kronecker expansion, length ``n**k``.

        Only meant for small instances and test oracles.
        """
        n, k, R = self.dim, self.order, self.rank
        if n**k > DENSE_LIMIT:
            raise MemoryError(
                f"refusing to densify {n}^{k} = {n**k} entries "
                f"(limit {DENSE_LIMIT})")
        if R == 0:
            return np.zeros(n**k)
        T = self.factors[0]
        for U in self.factors[1:]:
            T = (T[:, None, :] * U[None, :, :]).reshape(-1, R)
        return T.sum(axis=1)

    # arithmetic sugar
    def __add__(self, other: "CPVector") -> "CPVector":
        return cp_add(self, other)

    def __neg__(self) -> "CPVector":
        return cp_scale(self, -1.0)

    def __sub__(self, other: "CPVector") -> "CPVector":
        return cp_add(self, cp_scale(other, -1.0))

    def __mul__(self, alpha: float) -> "CPVector":
        return cp_scale(self, alpha)

    __rmul__ = __mul__

    # serialization
    def to_dict(self) -> dict:
        out = {"order": self.order, "dim": self.dim, "rank": self.rank}
        if self._pool is not None:
            out["pool"] = self._pool.ravel(order="F").tolist()
            out["pool_size"] = self._pool.shape[1]
            out["index"] = self._index.ravel().tolist()
            out["weights"] = self._weights.tolist()
            if self._block is not None:
                out["block_size"] = self._block
        else:
            out["factors"] = [U.ravel(order="F").tolist() for U in self._factors]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "CPVector":
        k, n, R = int(data["order"]), int(data["dim"]), int(data["rank"])
        if "pool" in data:
            M = int(data["pool_size"])
            pool = np.asarray(data["pool"], dtype=float)
            index = np.asarray(data["index"], dtype=np.intp)
            if pool.size != n * M or index.size != k * R:
                raise ValueError("pool or index size does not match the header")
            return cls.pooled(pool.reshape((n, M), order="F"),
                              index.reshape(k, R), data["weights"],
                              data.get("block_size"))
        factors = data["factors"]
        if len(factors) != k:
            raise ValueError(f"expected {k} factors, got {len(factors)}")
        mats = []
        for f in factors:
            f = np.asarray(f, dtype=float)
            if f.size != n * R:
                raise ValueError(
                    f"factor has {f.size} entries, expected {n}*{R}")
            mats.append(f.reshape((n, R), order="F"))
        if R == 0:
            mats = [np.zeros((n, 0)) for _ in range(k)]
        return cls(mats)


def _check_same_shape(a: CPVector, b: CPVector) -> None:
    if a.order != b.order or a.dim != b.dim:
        raise ValueError(
            f"shape mismatch: (order {a.order}, dim {a.dim}) vs "
            f"(order {b.order}, dim {b.dim})")


def check_permutation(perm: Sequence[int], order: int) -> tuple:
    """Validate a 0-based permutation of ``range(order)``."""
    perm = tuple(int(p) for p in perm)
    if len(perm) != order:
        raise ValueError(
            f"permutation of length {len(perm)} does not match order {order}")
    if sorted(perm) != list(range(order)):
        raise ValueError(f"{perm} is not a bijection on range({order})")
    return perm


def cp_scale(w: CPVector, alpha: float) -> CPVector:
    if w.is_pooled:
        pool, index, weights = w.pool_parts()
        return CPVector.pooled(pool, index, alpha * weights, w.block_size)
    f = list(w.factors)
    f[0] = alpha * f[0]
    return CPVector(f)


def cp_add(a: CPVector, b: CPVector) -> CPVector:
    """Concatenate terms; rank adds."""
    _check_same_shape(a, b)
    return CPVector([np.hstack((Ua, Ub)) for Ua, Ub in zip(a.factors, b.factors)])


def cp_kron(a: CPVector, b: CPVector) -> CPVector:
    """Kronecker product ``a (x) b`` of rank ``a.rank * b.rank``."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    Ra, Rb = a.rank, b.rank
    # term (i, j) -> column i * Rb + j
    left = [np.repeat(U, Rb, axis=1) for U in a.factors]
    right = [np.tile(U, (1, Ra)) for U in b.factors]
    return CPVector(left + right)


def cp_permute(w: CPVector, perm: Sequence[int]) -> CPVector:
    """Reorder the Kronecker slots: new slot ``i`` is old slot ``perm[i]``."""
    perm = check_permutation(perm, w.order)
    if w.is_pooled:
        pool, index, weights = w.pool_parts()
        return CPVector.pooled(pool, index[list(perm)], weights, w.block_size)
    return CPVector([w.factors[p] for p in perm])


def cp_apply_factorwise(w: CPVector, mats: Sequence[np.ndarray]) -> CPVector:
    """Compute ``(M_1 (x) ... (x) M_k) w`` by multiplying each factor."""
    if len(mats) != w.order:
        raise ValueError(f"need {w.order} matrices, got {len(mats)}")
    arrs = []
    for M in mats:
        M = np.asarray(M, dtype=float)
        if M.ndim != 2 or M.shape[1] != w.dim:
            raise ValueError(
                f"matrix of shape {M.shape} cannot act on dimension {w.dim}")
        arrs.append(M)
    if w.is_pooled and all(M is arrs[0] or np.array_equal(M, arrs[0])
                           for M in arrs[1:]):
        pool, index, weights = w.pool_parts()
        return CPVector.pooled(arrs[0] @ pool, index, weights, w.block_size)
    out = [M @ U for M, U in zip(arrs, w.factors)]
    shapes = {U.shape[0] for U in out}
    if len(shapes) != 1:
        raise ValueError("all matrices must have the same number of rows")
    return CPVector(out)


_EVAL_CHUNK = 1 << 22


def cp_eval(w: CPVector, x: np.ndarray) -> float | np.ndarray:
    """Evaluate ``w^T (x (x) ... (x) x)``.

    ``x`` may be a single point of shape ``(n,)`` or a batch ``(N, n)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != w.dim:
        raise ValueError(f"point has length {x.shape[-1]}, expected {w.dim}")
    if w.rank == 0:
        return 0.0 if x.ndim == 1 else np.zeros(x.shape[0])
    # large batches in row chunks keep the per-term intermediates small
    width = w.rank if not w.is_pooled else max(w.rank, w.pool_parts()[0].shape[1])
    rows = max(1, _EVAL_CHUNK // width)
    if x.ndim == 2 and x.shape[0] > rows:
        return np.concatenate([cp_eval(w, x[i:i + rows])
                               for i in range(0, x.shape[0], rows)])
    if w.is_pooled:
        pool, index, weights = w.pool_parts()
        px = x @ pool
        prod = px[..., index[0]] * weights
        for idx in index[1:]:
            prod = prod * px[..., idx]
        return prod.sum(axis=-1)
    prod = x @ w.factors[0]
    for U in w.factors[1:]:
        prod = prod * (x @ U)
    return prod.sum(axis=-1)


def cp_eval_gradient(w: CPVector, x: np.ndarray) -> np.ndarray:
    """Gradient in ``x`` of ``cp_eval(w, x)``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (w.dim,):
        raise ValueError(f"point has shape {x.shape}, expected ({w.dim},)")
    k = w.order
    if w.rank == 0:
        return np.zeros(w.dim)
    if w.is_pooled:
        pool, index, weights = w.pool_parts()
        px = x @ pool
        s = [px[idx] for idx in index]
        prefix = [weights]
        for i in range(k - 1):
            prefix.append(prefix[-1] * s[i])
        suffix = np.ones(w.rank)
        acc = np.zeros(pool.shape[1])
        for i in range(k - 1, -1, -1):
            acc += np.bincount(index[i], prefix[i] * suffix, pool.shape[1])
            suffix = suffix * s[i]
        return pool @ acc
    s = [x @ U for U in w.factors]
    # products over all slots but one, without dividing
    prefix = [np.ones(w.rank)]
    for i in range(k - 1):
        prefix.append(prefix[-1] * s[i])
    suffix = np.ones(w.rank)
    g = np.zeros(w.dim)
    for i in range(k - 1, -1, -1):
        g += w.factors[i] @ (prefix[i] * suffix)
        suffix = suffix * s[i]
    return g


def _normalize_terms(w: CPVector):
    """Split every term into unit, sign-fixed columns and a scalar weight."""
    units = []
    weight = np.ones(w.rank)
    for U in w.factors:
        norms = np.linalg.norm(U, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        V = U / safe
        if V.size:
            pivot = np.argmax(np.abs(V), axis=0)
            signs = np.sign(V[pivot, np.arange(V.shape[1])])
            signs[signs == 0] = 1.0
        else:
            signs = np.ones(0)
        units.append(V * signs)
        weight = weight * norms * signs
    return units, weight


def _parallel(u: np.ndarray, v: np.ndarray, tol: float) -> float:
    """Return +1 or -1 if unit vectors ``u`` and ``v`` are parallel, else 0."""
    c = float(u @ v)
    if 1.0 - abs(c) <= tol:
        return 1.0 if c > 0 else -1.0
    return 0.0


def cp_compress(w: CPVector, tol: float = 1e-12) -> CPVector:
    """Merge terms whose factors are pairwise parallel slot by slot.

    Two terms are merged when, in every slot, their normalized columns have
    ``1 - |cos| <= tol``. Terms that vanish (or cancel to below ``tol`` times
    the largest weight) are dropped.
    """
    if w.rank == 0:
        return w
    if w.is_pooled:
        return _compress_pooled(w, tol)
    units, weight = _normalize_terms(w)
    k = w.order
    live = np.flatnonzero(weight != 0.0)
    if live.size == 0:
        return CPVector.zero(k, w.dim)
    # bucket terms by an exact integer hash of their rounded unit columns;
    # every bucket is verified pairwise below, so collisions are harmless
    keys = np.rint(np.vstack(units)[:, live] * 1e6).astype(np.int64)
    mult = np.random.default_rng(0).integers(1, 2**62, keys.shape[0], dtype=np.int64)
    with np.errstate(over="ignore"):
        hashes = (keys * mult[:, None]).sum(axis=0)
    _, group = np.unique(hashes, return_inverse=True)
    order = np.argsort(group, kind="stable")
    bounds = np.flatnonzero(np.diff(group[order])) + 1
    reps: list = []
    merged: list = []
    for members in np.split(live[order], bounds):
        if members.size == 1:
            reps.append(int(members[0]))
            merged.append(weight[members[0]])
            continue
        local: list = []  # positions in reps/merged
        for j in members:
            for pos in local:
                rep = reps[pos]
                sign = 1.0
                for i in range(k):
                    sign *= _parallel(units[i][:, rep], units[i][:, j], tol)
                    if sign == 0.0:
                        break
                if sign != 0.0:
                    merged[pos] += sign * weight[j]
                    break
            else:
                local.append(len(reps))
                reps.append(int(j))
                merged.append(weight[j])
    merged = np.asarray(merged)
    if merged.size == 0:
        return CPVector.zero(k, w.dim)
    keep = np.abs(merged) > tol * np.abs(merged).max()
    cols = np.asarray(reps)[keep]
    factors = [U[:, cols] for U in units]
    factors[0] = factors[0] * merged[keep]
    return CPVector(factors)


def _compress_pooled(w: CPVector, tol: float) -> CPVector:
    """Merge terms of a pooled vector that use the same pool columns."""
    pool, index, weights = w.pool_parts()
    live = weights != 0.0
    if not live.any():
        return CPVector.zero(w.order, w.dim)
    index, weights = index[:, live], weights[live]
    uniq, inverse = np.unique(index, axis=1, return_inverse=True)
    merged = np.bincount(inverse.ravel(), weights, uniq.shape[1])
    keep = np.abs(merged) > tol * np.abs(merged).max()
    return CPVector.pooled(pool, uniq[:, keep], merged[keep], w.block_size)


def cp_symmetrize(w: CPVector, tol: float = 1e-12) -> CPVector:
    """Average over all orderings of the Kronecker slots.

    Orderings that coincide (because a term repeats a factor up to scaling)
    are generated once with the multiplicity folded into the weight, and
    coinciding terms across the whole vector are merged afterwards.
    """
    k = w.order
    if w.rank == 0 or k == 1:
        return w
    units, weight = _normalize_terms(w)
    kfact = math.factorial(k)
    cols: list = [[] for _ in range(k)]
    weights: list = []
    for j in range(w.rank):
        if weight[j] == 0.0:
            continue
        # label slots by parallel class
        labels: list = []
        reps: list = []
        wj = weight[j]
        for i in range(k):
            u = units[i][:, j]
            for lab, rep in enumerate(reps):
                sign = _parallel(rep, u, tol)
                if sign:
                    labels.append(lab)
                    wj *= sign
                    break
            else:
                labels.append(len(reps))
                reps.append(u)
        mult = np.bincount(labels)
        coeff = wj * np.prod([math.factorial(m) for m in mult]) / kfact
        for ordering in _distinct_orderings(tuple(labels)):
            for i, lab in enumerate(ordering):
                cols[i].append(reps[lab])
            weights.append(coeff)
    if not weights:
        return CPVector.zero(k, w.dim)
    factors = [np.column_stack(c) for c in cols]
    factors[0] = factors[0] * np.asarray(weights)
    return cp_compress(CPVector(factors), tol)


@lru_cache(maxsize=None)
def _distinct_orderings(labels: tuple) -> tuple:
    return tuple(sorted(set(itertools.permutations(labels))))


@lru_cache(maxsize=None)
def perfect_matchings(k: int) -> tuple:
    """All perfect matchings of ``range(k)`` as tuples of index pairs."""
    if k % 2:
        raise ValueError("perfect matchings need an even number of slots")

    def rec(items):
        if not items:
            yield ()
            return
        a = items[0]
        for idx in range(1, len(items)):
            b = items[idx]
            rest = items[1:idx] + items[idx + 1:]
            for m in rec(rest):
                yield ((a, b),) + m

    return tuple(rec(tuple(range(k))))


def _check_orthonormal(Q: np.ndarray, n: int) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != n:
        raise ValueError(f"Q must have {n} rows, got shape {Q.shape}")
    dev = np.abs(Q.T @ Q - np.eye(Q.shape[1])).max(initial=0.0)
    if dev > ORTHONORMAL_TOL:
        raise ValueError(
            f"Q does not have orthonormal columns (Gram deviation {dev:.2e})")
    return Q


# optimizers evaluate the trace and then its gradient at the same point;
# the last few factorizations are kept so the gradient can reuse them
_PARTS_CACHE: list = []
_PARTS_CACHE_SIZE = 4


def _pair_trace_parts(w: CPVector, Q: np.ndarray, symmetrize: bool) -> dict:
    """Bilinear factors ``(Q^T u_a)^T (Q^T u_b)`` of every slot pair in use.

    Pooled vectors take them from the Gram matrices of the pool blocks when
    those are not much larger than the number of terms, otherwise (and for
    plain vectors) they are formed term by term.
    """
    k = w.order
    if k % 2:
        raise ValueError(f"pair trace needs an even order, got {k}")
    Q = _check_orthonormal(Q, w.dim)
    for cw, cQ, csym, parts in _PARTS_CACHE:
        if cw is w and csym == symmetrize and np.array_equal(cQ, Q):
            return parts
    parts = _compute_pair_trace_parts(w, Q, symmetrize)
    _PARTS_CACHE.insert(0, (w, Q.copy(), symmetrize, parts))
    del _PARTS_CACHE[_PARTS_CACHE_SIZE:]
    return parts


def _canonical_terms(w: CPVector) -> tuple[np.ndarray, np.ndarray]:
    """Terms of a pooled vector merged up to slot permutation.

    Symmetrization cannot tell apart terms whose index columns agree after
    sorting, so their weights are summed. Cached per vector.
    """
    if "canon" not in w._keys:
        _, index, weights = w.pool_parts()
        canon, inverse = np.unique(np.sort(index, axis=0), axis=1,
                                   return_inverse=True)
        merged = np.bincount(inverse.ravel(), weights, canon.shape[1])
        w._keys["canon"] = (canon, merged)
    return w._keys["canon"]


def _block_keys(w: CPVector, index: np.ndarray, pairs: list,
                symmetrize: bool) -> dict:
    """Positions of each term's slot pair in the flattened block Grams."""
    P = w.block_size or w.pool_parts()[0].shape[1]
    keys = {}
    for a, b in pairs:
        name = ("key", symmetrize, a, b)
        if name not in w._keys:
            key = index[a] * P + index[b] % P
            for other, known in w._keys.items():
                if (other[0] == "key" and other[1] == symmetrize
                        and np.array_equal(known, key)):
                    key = known
                    break
            w._keys[name] = key
        keys[(a, b)] = w._keys[name]
    return keys


def _compute_pair_trace_parts(w: CPVector, Q: np.ndarray, symmetrize: bool) -> dict:
    k = w.order
    kappa = k // 2
    if symmetrize:
        matchings = perfect_matchings(k)
    else:
        matchings = (tuple((m, kappa + m) for m in range(kappa)),)
    pairs = sorted({pair for match in matchings for pair in match})
    parts = {"Q": Q, "matchings": matchings, "weights": None, "mode": "plain"}
    if w.is_pooled:
        pool, index, weights = w.pool_parts()
        if symmetrize:
            index, weights = _canonical_terms(w)
        parts.update(index=index, weights=weights)
        Zp = Q.T @ pool
        P = w.block_size or pool.shape[1]
        N = pool.shape[1] // P
        if N * P * P <= 4 * w.rank:
            Zb = Zp.reshape(Q.shape[1], N, P)
            Gb = (Zb.transpose(1, 2, 0) @ Zb.transpose(1, 0, 2)).ravel()
            keys = _block_keys(w, index, pairs, symmetrize)
            # pairs with identical keys share one gather
            gathered: dict = {}
            gram = {}
            for pair, key in keys.items():
                if id(key) not in gathered:
                    gathered[id(key)] = Gb[key]
                gram[pair] = gathered[id(key)]
            parts.update(mode="block", Zb=Zb, P=P, N=N, keys=keys, gram=gram)
            return parts
        parts["mode"] = "gather"
        Z = [Zp[:, idx] for idx in index]
    else:
        Z = [Q.T @ U for U in w.factors]
    parts["Z"] = Z
    parts["gram"] = {(a, b): np.einsum("ij,ij->j", Z[a], Z[b])
                     for a, b in pairs}
    return parts


def cp_pair_trace(w: CPVector, Q: np.ndarray, symmetrize: bool = False) -> float:
    """Trace of ``(Q (x) ... (x) Q)^T mat(w) (Q (x) ... (x) Q)``.

    ``mat(w)`` is the square ``n^kappa x n^kappa`` matricization of the order
    ``2 kappa`` vector ``w`` and ``Q`` has orthonormal columns. The value is
    accumulated term-wise as ``sum_j prod_m (Q^T u_{kappa+m})^T (Q^T u_m)``.

    The formula is only meaningful for symmetric ``w``. With
    ``symmetrize=True`` the result is that of ``cp_symmetrize(w)`` without
    materializing it: the average over slot orderings reduces to an average
    over the ``(2 kappa - 1)!!`` perfect matchings of the slots.
    """
    if w.rank == 0:
        _check_orthonormal(Q, w.dim)
        return 0.0
    parts = _pair_trace_parts(w, Q, symmetrize)
    gram, matchings = parts["gram"], parts["matchings"]
    # matchings whose factors coincide are evaluated once
    counts: dict = {}
    for match in matchings:
        sig = tuple(sorted(id(gram[pair]) for pair in match))
        counts[sig] = (match, counts.get(sig, (match, 0))[1] + 1)
    total = 0.0
    for match, count in counts.values():
        prod = gram[match[0]]
        for pair in match[1:]:
            prod = prod * gram[pair]
        total = total + count * prod
    if parts["weights"] is not None:
        total = total * parts["weights"]
    return float(total.sum() / len(matchings))


def cp_pair_trace_gradient(w: CPVector, Q: np.ndarray,
                           symmetrize: bool = False) -> np.ndarray:
    """Euclidean gradient in ``Q`` of :func:`cp_pair_trace`."""
    if w.rank == 0:
        Q = _check_orthonormal(Q, w.dim)
        return np.zeros_like(Q)
    parts = _pair_trace_parts(w, Q, symmetrize)
    gram, matchings, weights = parts["gram"], parts["matchings"], parts["weights"]
    # coef[(a, b)] = sum over matchings containing (a, b) of the other pairs
    rank = len(next(iter(gram.values())))
    coef: dict = {}
    for match in matchings:
        for pair in match:
            prod = np.ones(rank) if weights is None else weights
            for other in match:
                if other != pair:
                    prod = prod * gram[other]
            coef[pair] = coef.get(pair, 0.0) + prod
    # d/dQ of u^T Q Q^T v is (u v^T + v u^T) Q
    if parts["mode"] == "block":
        pool = w.pool_parts()[0]
        N, P, Zb = parts["N"], parts["P"], parts["Zb"]
        grouped: dict = {}
        for pair, c in coef.items():
            key = parts["keys"][pair]
            grouped[id(key)] = (key, grouped.get(id(key), (key, 0.0))[1] + c)
        C = sum(np.bincount(key, c, N * P * P)
                for key, c in grouped.values()).reshape(N, P, P)
        T = np.einsum("ipq,riq->ipr", C + C.transpose(0, 2, 1), Zb)
        G = pool @ T.reshape(N * P, -1)
    elif parts["mode"] == "gather":
        # collect the coefficients of all pool column pairs in one sparse matrix
        pool, index = w.pool_parts()[0], parts["index"]
        M = pool.shape[1]
        rows = np.concatenate([index[a] for a, b in coef])
        cols = np.concatenate([index[b] for a, b in coef])
        C = sparse.coo_matrix((np.concatenate(list(coef.values())), (rows, cols)),
                              shape=(M, M))
        Zt = (parts["Q"].T @ pool).T
        G = pool @ (C @ Zt + C.T @ Zt)
    else:
        Z = parts["Z"]
        H = [np.zeros_like(Z[0]) for _ in range(w.order)]
        for (a, b), c in coef.items():
            H[a] += Z[b] * c
            H[b] += Z[a] * c
        G = sum(U @ h.T for U, h in zip(w.factors, H))
    return G / len(matchings)


def square_matricization(w: CPVector) -> np.ndarray:
    """Dense ``n^kappa x n^kappa`` matricization (oracle use only)."""
    if w.order % 2:
        raise ValueError("square matricization needs an even order")
    m = w.dim ** (w.order // 2)
    return w.dense().reshape(m, m)
