import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nocrit.space import (
    Ball,
    IndexAllocator,
    SparseVec,
    affine_frame,
    combine,
    dist,
    fresh_index,
)

coef = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)
sparse = st.dictionaries(st.integers(1, 40), coef, max_size=8).map(SparseVec)


def test_zero_entries_are_dropped():
    v = SparseVec({1: 0.0, 3: 2.0})
    assert v.support() == frozenset({3})
    assert SparseVec.zero().is_zero()


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        SparseVec({0: 1.0})
    with pytest.raises(ValueError):
        SparseVec({2: float("nan")})


def test_dense_roundtrip():
    v = SparseVec.from_dense([1.0, 0.0, -2.5])
    assert v.get(1) == 1.0 and v.get(2) == 0.0 and v.get(3) == -2.5
    np.testing.assert_array_equal(v.to_dense([1, 2, 3, 4]), [1.0, 0.0, -2.5, 0.0])


def test_arithmetic_matches_dense():
    a = SparseVec({1: 1.0, 5: 2.0})
    b = SparseVec({5: -2.0, 7: 3.0})
    assert (a + b) == SparseVec({1: 1.0, 7: 3.0})
    assert a.dot(b) == -4.0
    assert dist(a, b) == pytest.approx(math.sqrt(1 + 16 + 9))
    assert combine([2.0, 1.0], [a, b]) == SparseVec({1: 2.0, 5: 2.0, 7: 3.0})


@given(sparse, sparse)
def test_inner_product_symmetry_and_cauchy_schwarz(u, v):
    assert u.dot(v) == pytest.approx(v.dot(u))
    assert abs(u.dot(v)) <= u.norm() * v.norm() * (1 + 1e-12) + 1e-9


@given(sparse, sparse)
def test_triangle_inequality(u, v):
    assert (u + v).norm() <= u.norm() + v.norm() + 1e-9


@given(sparse, coef)
def test_axpy_is_add_scaled(u, a):
    w = SparseVec({2: 1.5, 40: -1.0})
    lhs = w.axpy(a, u)
    rhs = w + u * a
    assert (lhs - rhs).norm() <= 1e-9 * (1 + abs(a) * u.norm())


def test_ball_is_open():
    b = Ball(SparseVec.zero(), 1.0)
    assert b.contains(SparseVec.basis(3, 0.999))
    assert not b.contains(SparseVec.basis(3, 1.0))
    with pytest.raises(ValueError):
        Ball(SparseVec.zero(), 0.0)


def test_fresh_index_never_repeats():
    alloc = IndexAllocator(5)
    assert fresh_index(alloc, 2) == [5, 6]
    assert fresh_index(alloc) == [7]
    with pytest.raises(ValueError):
        fresh_index(alloc, 0)


def test_affine_frame_projection():
    pts = [SparseVec.from_dense([1.0, 0.0]), SparseVec.from_dense([0.0, 1.0])]
    fr = affine_frame(pts)
    assert fr.dim == 1
    x = SparseVec.from_dense([1.0, 1.0])
    # the line x1 + x2 = 1 sits at distance 1/sqrt(2) from (1,1)
    assert fr.residual(x) == pytest.approx(1 / math.sqrt(2))
    assert fr.residual(pts[1]) < 1e-15


def test_affine_frame_flags_dependent_points():
    p = SparseVec.from_dense([1.0, 2.0])
    fr = affine_frame([SparseVec.zero(), p, p * 2.0])
    assert fr.dim == 1 and fr.rank_deficient


@settings(max_examples=40)
@given(st.lists(st.lists(st.floats(-5, 5), min_size=4, max_size=4), min_size=2, max_size=5))
def test_frame_directions_orthonormal(rows):
    fr = affine_frame([SparseVec.from_dense(r) for r in rows])
    G = np.array([[u.dot(v) for v in fr.directions] for u in fr.directions]).reshape(fr.dim, fr.dim)
    np.testing.assert_allclose(G, np.eye(fr.dim), atol=1e-9)
