import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperdress.algebra import CDNumber, cd_mul
from hyperdress.matrix import (CDMatrix, ShapeMismatch, is_real_matrix, mat_add, mat_mul, mat_scale_left,
                               mat_scale_right, matmul_arrays)


def rand_matrix(rng, s, level):
    return CDMatrix(rng.standard_normal((s, s, 1 << level)))


def test_real_matrices_match_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    prod = mat_mul(CDMatrix.from_real(a, 2), CDMatrix.from_real(b, 2))
    assert is_real_matrix(prod)
    assert np.allclose(prod.data[..., 0], a @ b, atol=1e-13)


def test_entries_follow_sum_of_cd_products():
    rng = np.random.default_rng(1)
    a, b = rand_matrix(rng, 2, 3), rand_matrix(rng, 2, 3)
    c = mat_mul(a, b)
    for j in range(2):
        for k in range(2):
            ref = cd_mul(a.entry(j, 0), b.entry(0, k)) + cd_mul(a.entry(j, 1), b.entry(1, k))
            assert c.entry(j, k).close(ref, 1e-12)


def test_identity_and_zero():
    rng = np.random.default_rng(2)
    a = rand_matrix(rng, 3, 2)
    assert mat_mul(CDMatrix.identity(3, 2), a).close(a)
    assert mat_mul(a, CDMatrix.identity(3, 2)).close(a)
    assert mat_add(a, CDMatrix.zeros(3, 2)).close(a)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_quaternion_matrices_associate(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rand_matrix(rng, 2, 2) for _ in range(3))
    assert mat_mul(mat_mul(a, b), c).close(mat_mul(a, mat_mul(b, c)), 1e-11)


def test_octonion_matrices_do_not_associate():
    rng = np.random.default_rng(3)
    a, b, c = (rand_matrix(rng, 1, 3) for _ in range(3))
    assert not mat_mul(mat_mul(a, b), c).close(mat_mul(a, mat_mul(b, c)), 1e-6)


def test_scaling():
    rng = np.random.default_rng(4)
    m = rand_matrix(rng, 2, 2)
    q = CDNumber.random(2, rng)
    left, right = mat_scale_left(q, m), mat_scale_right(m, q)
    assert left.entry(1, 0).close(cd_mul(q, m.entry(1, 0)))
    assert right.entry(0, 1).close(cd_mul(m.entry(0, 1), q))
    assert mat_scale_left(2.0, m).close(CDMatrix(2.0 * m.data))


def test_shape_checks():
    with pytest.raises(ShapeMismatch):
        CDMatrix(np.zeros((2, 3, 4)))
    with pytest.raises(ShapeMismatch):
        mat_mul(CDMatrix.zeros(2, 2), CDMatrix.zeros(3, 2))


def test_matmul_arrays_broadcasts_over_grid():
    rng = np.random.default_rng(5)
    a, b = rng.standard_normal((7, 2, 2, 4)), rng.standard_normal((7, 2, 2, 4))
    out = matmul_arrays(a, b)
    for k in range(7):
        assert np.allclose(out[k], mat_mul(CDMatrix(a[k]), CDMatrix(b[k])).data, atol=1e-13)
