import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpo_mor import cp_tensor
from lpo_mor.cp_tensor import (CPVector, cp_add, cp_apply_factorwise,
                               cp_compress, cp_eval, cp_eval_gradient,
                               cp_kron, cp_pair_trace, cp_pair_trace_gradient,
                               cp_permute, cp_scale, cp_symmetrize,
                               perfect_matchings, square_matricization)

PROPS = settings(max_examples=100, deadline=None)


def dense(w):
    """Independent Kronecker expansion, term by term."""
    out = np.zeros(w.dim ** w.order)
    for j in range(w.rank):
        term = np.ones(1)
        for F in w.factors:
            term = np.kron(term, F[:, j])
        out += term
    return out


def xpow(x, k):
    out = np.ones(1)
    for _ in range(k):
        out = np.kron(out, x)
    return out


def random_cp(rng, k, n, R):
    return CPVector([rng.standard_normal((n, R)) for _ in range(k)])


def permuted_dense(v, n, k, perm):
    # new slot i holds old slot perm[i]
    T = v.reshape((n,) * k)
    return np.transpose(T, perm).reshape(-1)


@st.composite
def cp_instances(draw, max_n=4, max_k=4, max_R=3):
    n = draw(st.integers(1, max_n))
    k = draw(st.integers(1, max_k))
    R = draw(st.integers(0, max_R))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return random_cp(rng, k, n, R), rng


# construction and basic examples

def test_eval_rank_one_square():
    w = CPVector.rank_one([1.0, 0.0], [1.0, 0.0])
    assert cp_eval(w, np.array([3.0, 4.0])) == pytest.approx(9.0)


def test_eval_symmetric_pair():
    e1, e2 = np.eye(2)
    w = cp_add(CPVector.rank_one(e1, e2), CPVector.rank_one(e2, e1))
    assert cp_eval(w, np.array([1.0, 2.0])) == pytest.approx(4.0)


def test_eval_matches_dense_random():
    rng = np.random.default_rng(0)
    w = random_cp(rng, 3, 3, 2)
    x = rng.standard_normal(3)
    ref = dense(w) @ xpow(x, 3)
    assert cp_eval(w, x) == pytest.approx(ref, rel=1e-12)


def test_eval_batch_matches_loop():
    rng = np.random.default_rng(1)
    w = random_cp(rng, 3, 4, 3)
    X = rng.standard_normal((7, 4))
    np.testing.assert_allclose(cp_eval(w, X), [cp_eval(w, x) for x in X],
                               rtol=1e-13)


def test_eval_dimension_mismatch():
    w = CPVector.rank_one(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        cp_eval(w, np.ones(2))


def test_zero_vector_canonical():
    z = CPVector.zero(3, 4)
    assert z.rank == 0 and z.order == 3 and z.dim == 4
    assert cp_eval(z, np.ones(4)) == 0.0
    np.testing.assert_array_equal(z.dense(), np.zeros(64))


def test_mismatched_factor_shapes_rejected():
    with pytest.raises(ValueError):
        CPVector([np.ones((3, 2)), np.ones((3, 1))])


def test_dense_guard():
    w = CPVector.rank_one(*[np.ones(100)] * 5)
    with pytest.raises(MemoryError):
        w.dense()


def test_factors_are_read_only():
    w = CPVector.rank_one(np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        w.factors[0][0, 0] = 5.0


def test_permute_identity_and_swap():
    e1, e2 = np.eye(2)
    w = CPVector.rank_one(e1, e2)
    np.testing.assert_array_equal(cp_permute(w, (0, 1)).dense(), w.dense())
    np.testing.assert_array_equal(cp_permute(w, (1, 0)).dense(),
                                  np.kron(e2, e1))


def test_permute_rejects_bad_permutation():
    w = CPVector.rank_one(np.ones(2), np.ones(2), np.ones(2))
    with pytest.raises(ValueError):
        cp_permute(w, (0, 0, 1))
    with pytest.raises(ValueError):
        cp_permute(w, (0, 1))


def test_permute_preserves_polynomial():
    rng = np.random.default_rng(2)
    w = random_cp(rng, 3, 3, 2)
    for perm in itertools.permutations(range(3)):
        p = cp_permute(w, perm)
        assert p.rank == w.rank
        for x in rng.standard_normal((10, 3)):
            assert cp_eval(p, x) == pytest.approx(cp_eval(w, x), rel=1e-12)
        np.testing.assert_allclose(p.dense(), permuted_dense(dense(w), 3, 3, perm),
                                   atol=1e-14)


def test_symmetrize_fixed_point():
    u = np.array([1.0, -2.0, 0.5])
    w = CPVector.rank_one(u, u, u)
    s = cp_symmetrize(w)
    assert s.rank == 1
    np.testing.assert_allclose(s.dense(), w.dense(), atol=1e-14)


def test_symmetrize_two_slots():
    e1, e2 = np.eye(2)
    s = cp_symmetrize(CPVector.rank_one(e1, e2))
    np.testing.assert_allclose(s.dense(), 0.5 * (np.kron(e1, e2) + np.kron(e2, e1)))
    assert cp_eval(s, np.ones(2)) == pytest.approx(1.0)


def test_symmetrize_rank_bound_three_distinct():
    rng = np.random.default_rng(3)
    w = CPVector.rank_one(*rng.standard_normal((3, 4)))
    assert cp_symmetrize(w).rank <= 6


def test_symmetrize_dedups_repeated_slots():
    e1, e2 = np.eye(2)
    w = CPVector.rank_one(e2, e2, e1)
    # three distinct orderings instead of six
    assert cp_symmetrize(w).rank == 3


def test_symmetrize_handles_antiparallel_factors():
    u = np.array([1.0, 2.0])
    w = CPVector.rank_one(u, -u, u)
    s = cp_symmetrize(w)
    np.testing.assert_allclose(s.dense(), w.dense(), atol=1e-14)


def test_apply_factorwise_examples():
    rng = np.random.default_rng(4)
    w = random_cp(rng, 3, 3, 2)
    same = cp_apply_factorwise(w, [np.eye(3)] * 3)
    np.testing.assert_array_equal(same.dense(), w.dense())
    x = rng.standard_normal(3)
    doubled = cp_apply_factorwise(w, [2 * np.eye(3)] * 3)
    assert cp_eval(doubled, x) == pytest.approx(8 * cp_eval(w, x))
    w2 = random_cp(rng, 2, 3, 2)
    M1, M2 = rng.standard_normal((2, 4, 3))
    out = cp_apply_factorwise(w2, [M1, M2])
    np.testing.assert_allclose(out.dense(), np.kron(M1, M2) @ dense(w2), atol=1e-12)


def test_apply_factorwise_shape_errors():
    w = CPVector.rank_one(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        cp_apply_factorwise(w, [np.eye(3)])
    with pytest.raises(ValueError):
        cp_apply_factorwise(w, [np.eye(3), np.eye(2)])


def test_kron_examples():
    e1, e2 = np.eye(2)
    a = CPVector.rank_one(e1)
    b = CPVector.rank_one(e2, e2)
    ab = cp_kron(a, b)
    assert ab.order == 3 and ab.rank == 1
    np.testing.assert_array_equal(ab.dense(), np.kron(e1, np.kron(e2, e2)))
    rng = np.random.default_rng(5)
    a = random_cp(rng, 2, 2, 2)
    b = random_cp(rng, 1, 2, 3)
    assert cp_kron(a, b).rank == 6
    np.testing.assert_allclose(cp_kron(a, b).dense(), np.kron(dense(a), dense(b)),
                               atol=1e-13)


def test_kron_dim_mismatch():
    with pytest.raises(ValueError):
        cp_kron(CPVector.rank_one(np.ones(2)), CPVector.rank_one(np.ones(3)))


def test_add_examples():
    rng = np.random.default_rng(6)
    a = random_cp(rng, 2, 3, 2)
    z = CPVector.zero(2, 3)
    np.testing.assert_array_equal(cp_add(a, z).dense(), a.dense())
    diff = cp_add(a, cp_scale(a, -1.0))
    for x in rng.standard_normal((5, 3)):
        assert abs(cp_eval(diff, x)) < 1e-12
    b = random_cp(rng, 2, 3, 1)
    s = a + b
    assert s.rank == 3
    np.testing.assert_allclose(s.dense(), dense(a) + dense(b), atol=1e-14)
    with pytest.raises(ValueError):
        cp_add(a, CPVector.zero(3, 3))


def test_compress_merges_parallel_terms():
    u, v = np.array([1.0, 2.0, 0.0]), np.array([0.0, 1.0, 1.0])
    w = CPVector([np.column_stack([u, 2 * u, v]), np.column_stack([u, -u, v])])
    c = cp_compress(w)
    assert c.rank == 2
    np.testing.assert_allclose(c.dense(), w.dense(), atol=1e-13)


def test_compress_drops_cancelling_terms():
    u = np.array([1.0, 2.0])
    w = CPVector([np.column_stack([u, u]), np.column_stack([u, -u])])
    assert cp_compress(w).rank == 0


def test_serialization_roundtrip():
    rng = np.random.default_rng(7)
    w = random_cp(rng, 3, 4, 2)
    d = w.to_dict()
    assert d["order"] == 3 and d["dim"] == 4 and d["rank"] == 2
    # column-major: the first column comes first
    np.testing.assert_array_equal(d["factors"][0][:4], w.factors[0][:, 0])
    back = CPVector.from_dict(d)
    for F, G in zip(w.factors, back.factors):
        np.testing.assert_array_equal(F, G)


def test_pair_trace_kappa_one():
    rng = np.random.default_rng(8)
    M = rng.standard_normal((4, 4))
    M = M + M.T
    w = CPVector.from_matrix(M)
    assert cp_pair_trace(w, np.eye(4)) == pytest.approx(np.trace(M))
    assert cp_pair_trace(w, np.eye(4)[:, :2]) == pytest.approx(M[0, 0] + M[1, 1])


def test_pair_trace_kappa_two_dense_oracle():
    rng = np.random.default_rng(9)
    w = cp_symmetrize(random_cp(rng, 4, 3, 2))
    Q = np.linalg.qr(rng.standard_normal((3, 2)))[0]
    M = dense(w).reshape(9, 9)
    Qk = np.kron(Q, Q)
    ref = np.trace(Qk.T @ M @ Qk)
    assert cp_pair_trace(w, Q) == pytest.approx(ref, rel=1e-10)
    np.testing.assert_allclose(square_matricization(w), M, atol=1e-14)


def test_pair_trace_rejects_odd_order_and_nonorthonormal():
    w3 = CPVector.rank_one(np.ones(3), np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        cp_pair_trace(w3, np.eye(3))
    w2 = CPVector.rank_one(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        cp_pair_trace(w2, 2 * np.eye(3)[:, :2])


def test_perfect_matching_count():
    for kappa in range(1, 5):
        k = 2 * kappa
        double_fact = math.prod(range(k - 1, 0, -2))
        assert len(perfect_matchings(k)) == double_fact


def test_implicit_symmetrization_matches_explicit():
    rng = np.random.default_rng(10)
    for k in (2, 4, 6):
        w = random_cp(rng, k, 3, 2)
        Q = np.linalg.qr(rng.standard_normal((3, 2)))[0]
        explicit = cp_pair_trace(cp_symmetrize(w), Q)
        implicit = cp_pair_trace(w, Q, symmetrize=True)
        assert implicit == pytest.approx(explicit, rel=1e-10)
        G1 = cp_pair_trace_gradient(cp_symmetrize(w), Q)
        G2 = cp_pair_trace_gradient(w, Q, symmetrize=True)
        np.testing.assert_allclose(G2, G1, rtol=1e-9, atol=1e-12)


def test_eval_gradient_matches_fd():
    rng = np.random.default_rng(11)
    w = random_cp(rng, 3, 4, 2)
    x = rng.standard_normal(4)
    g = cp_eval_gradient(w, x)
    h = 1e-6
    fd = [(cp_eval(w, x + h * e) - cp_eval(w, x - h * e)) / (2 * h) for e in np.eye(4)]
    np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)


# properties

@PROPS
@given(cp_instances())
def test_prop_dense_oracle_equivalence(inst):
    w, rng = inst
    n, k = w.dim, w.order
    x = rng.standard_normal(n)
    assert np.isclose(cp_eval(w, x), dense(w) @ xpow(x, k), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(w.dense(), dense(w), atol=1e-13)
    perm = tuple(rng.permutation(k))
    np.testing.assert_allclose(cp_permute(w, perm).dense(),
                               permuted_dense(dense(w), n, k, perm), atol=1e-13)
    Ms = [rng.standard_normal((n, n)) for _ in range(k)]
    big = np.ones((1, 1))
    for M in Ms:
        big = np.kron(big, M)
    np.testing.assert_allclose(cp_apply_factorwise(w, Ms).dense(), big @ dense(w),
                               atol=1e-10)
    other = random_cp(rng, k, n, 2)
    np.testing.assert_allclose((w + other).dense(), dense(w) + dense(other),
                               atol=1e-13)
    if k < 4:
        b = random_cp(rng, 1, n, 1)
        np.testing.assert_allclose(cp_kron(w, b).dense(),
                                   np.kron(dense(w), dense(b)), atol=1e-13)


@PROPS
@given(cp_instances(max_n=3, max_k=4, max_R=2))
def test_prop_symmetrize_keeps_polynomial(inst):
    w, rng = inst
    s = cp_symmetrize(w)
    X = rng.standard_normal((100, w.dim))
    ref = cp_eval(w, X)
    np.testing.assert_allclose(cp_eval(s, X), ref, rtol=1e-10,
                               atol=1e-10 * (1 + np.abs(ref).max()))


@PROPS
@given(cp_instances(max_n=3, max_k=4, max_R=2))
def test_prop_symmetrize_is_symmetric_and_idempotent(inst):
    w, rng = inst
    s = cp_symmetrize(w)
    D = s.dense()
    scale = 1 + np.abs(D).max()
    for perm in itertools.permutations(range(w.order)):
        np.testing.assert_allclose(permuted_dense(D, w.dim, w.order, perm), D,
                                   atol=1e-12 * scale)
    np.testing.assert_allclose(cp_symmetrize(s).dense(), D, atol=1e-12 * scale)
    assert s.rank <= math.factorial(w.order) * w.rank


@PROPS
@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3),
       st.integers(0, 2**32 - 1))
def test_prop_pair_trace_rotation_invariant(kappa, n, R, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, n + 1))
    w = random_cp(rng, 2 * kappa, n, R)
    Q = np.linalg.qr(rng.standard_normal((n, r)))[0]
    O = np.linalg.qr(rng.standard_normal((r, r)))[0]
    for sym in (False, True):
        a = cp_pair_trace(w, Q, symmetrize=sym)
        b = cp_pair_trace(w, Q @ O, symmetrize=sym)
        assert np.isclose(a, b, rtol=1e-10, atol=1e-12)


# pooled storage

def pooled_dense(pool, index, weights):
    """Dense expansion straight from the pool, independent of ``factors``."""
    k, R = index.shape
    out = np.zeros(pool.shape[0] ** k)
    for j in range(R):
        term = np.full(1, weights[j])
        for s in range(k):
            term = np.kron(term, pool[:, index[s, j]])
        out += term
    return out


def test_pooled_example():
    pool = np.array([[1.0, 0.0], [0.0, 2.0]])
    w = CPVector.pooled(pool, [[0, 1], [1, 1]], [3.0, -1.0])
    assert (w.order, w.dim, w.rank) == (2, 2, 2) and w.is_pooled
    # 3 e1 (x) 2 e2 - 2 e2 (x) 2 e2
    np.testing.assert_array_equal(w.dense(), [0.0, 6.0, 0.0, -4.0])
    assert cp_eval(w, np.array([1.0, 1.0])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        CPVector.pooled(pool, [[0, 2]])
    with pytest.raises(ValueError):
        CPVector.pooled(pool, [[0, 1]], [1.0])


def test_pooled_compress_merges_shared_columns():
    pool = np.eye(3)
    w = CPVector.pooled(pool, [[0, 0, 1, 2], [1, 1, 2, 0]], [1.0, 2.0, 5.0, 0.0])
    c = cp_compress(w)
    assert c.is_pooled and c.rank == 2
    np.testing.assert_allclose(c.dense(), w.dense())


def test_batch_eval_in_chunks(monkeypatch):
    rng = np.random.default_rng(3)
    plain = CPVector([rng.standard_normal((3, 4)) for _ in range(3)])
    pooled = CPVector.pooled(rng.standard_normal((3, 5)), rng.integers(0, 5, (3, 7)),
                             rng.standard_normal(7))
    X = rng.standard_normal((23, 3))
    whole = [cp_eval(w, X) for w in (plain, pooled)]
    monkeypatch.setattr(cp_tensor, "_EVAL_CHUNK", 10)
    for w, ref in zip((plain, pooled), whole):
        np.testing.assert_allclose(cp_eval(w, X), ref, rtol=1e-13)
        np.testing.assert_allclose(cp_eval(w, X), [cp_eval(w, x) for x in X], rtol=1e-12)


@PROPS
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(0, 6),
       st.integers(0, 2**32 - 1))
def test_prop_pooled_matches_materialized(n, k, M, R, seed):
    rng = np.random.default_rng(seed)
    pool = rng.standard_normal((n, M))
    index = rng.integers(0, M, (k, R))
    weights = rng.standard_normal(R)
    w = CPVector.pooled(pool, index, weights)
    plain = CPVector([np.array(F) for F in w.factors])
    assert not plain.is_pooled
    ref = pooled_dense(pool, index, weights)
    np.testing.assert_allclose(w.dense(), ref, atol=1e-12)
    x = rng.standard_normal(n)
    X = rng.standard_normal((3, n))
    assert np.isclose(cp_eval(w, x), ref @ xpow(x, k), atol=1e-10)
    np.testing.assert_allclose(cp_eval(w, X), cp_eval(plain, X), atol=1e-10)
    np.testing.assert_allclose(cp_eval_gradient(w, x), cp_eval_gradient(plain, x),
                               atol=1e-10)
    T = rng.standard_normal((n, n))
    np.testing.assert_allclose(cp_apply_factorwise(w, [T] * k).dense(),
                               cp_apply_factorwise(plain, [T] * k).dense(), atol=1e-10)
    perm = rng.permutation(k)
    np.testing.assert_allclose(cp_permute(w, perm).dense(),
                               permuted_dense(ref, n, k, perm), atol=1e-12)
    np.testing.assert_allclose(cp_scale(w, -2.0).dense(), -2.0 * ref, atol=1e-12)
    np.testing.assert_allclose(cp_compress(w).dense(), ref,
                               atol=1e-10 * (1 + np.abs(ref).max()))
    back = CPVector.from_dict(w.to_dict())
    assert back.is_pooled
    np.testing.assert_array_equal(back.dense(), w.dense())
    if k % 2 == 0:
        r = int(rng.integers(1, n + 1))
        Q = np.linalg.qr(rng.standard_normal((n, r)))[0]
        for sym in (False, True):
            assert np.isclose(cp_pair_trace(w, Q, symmetrize=sym),
                              cp_pair_trace(plain, Q, symmetrize=sym), atol=1e-10)
            np.testing.assert_allclose(cp_pair_trace_gradient(w, Q, symmetrize=sym),
                                       cp_pair_trace_gradient(plain, Q, symmetrize=sym),
                                       atol=1e-10)
