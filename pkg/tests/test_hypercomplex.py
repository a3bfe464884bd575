"""Exact integer identities of the adapted-frame structure triple."""

import numpy as np
import pytest

from finslerchart import build_triple, check_projection_identities, \
    preserves_splitting, quaternion_identities_hold
from finslerchart.hypercomplex import horizontal_projector, vertical_projector


def test_first_structure_column_n1():
    # the first horizontal frame field maps to the first fiber one
    t = build_triple(1)
    col = t.J1[:, 0]
    assert col[2] == 1
    assert np.count_nonzero(col) == 1


def test_table_entries_n2():
    t = build_triple(2)
    m = 4
    d = lambda i: i
    v = lambda i: m + i
    n = 2
    for a in range(n):
        assert t.J1[v(a), d(a)] == 1
        assert t.J1[v(n + a), d(n + a)] == -1
        assert t.J2[d(n + a), d(a)] == 1
        assert t.J2[v(a), v(n + a)] == -1
        assert t.J3[v(n + a), d(a)] == -1
        assert t.J3[d(a), v(n + a)] == 1


def test_product_relation_n1():
    t = build_triple(1)
    assert np.array_equal(t.J1 @ t.J2, t.J3)
    assert np.array_equal(-(t.J2 @ t.J1), t.J3)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_squares_are_minus_identity(n):
    t = build_triple(n)
    I = np.eye(4 * n, dtype=np.int64)
    for a in (1, 2, 3):
        assert np.array_equal(t.matrix(a) @ t.matrix(a), -I)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_quaternion_identities(n):
    assert quaternion_identities_hold(build_triple(n))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_signed_permutation_orthogonality(n):
    t = build_triple(n)
    I = np.eye(4 * n, dtype=np.int64)
    for a in (1, 2, 3):
        J = t.matrix(a)
        assert np.array_equal(J.T @ J, I)
        # one nonzero entry per row and column, each +-1
        assert np.array_equal(np.abs(J).sum(axis=0), np.ones(4 * n))
        assert np.array_equal(np.abs(J).sum(axis=1), np.ones(4 * n))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_block_sparsity(n):
    t = build_triple(n)
    m = 2 * n
    for J in (t.J1, t.J3):
        assert np.count_nonzero(J[:m, :m]) == 0
        assert np.count_nonzero(J[m:, m:]) == 0
    assert np.count_nonzero(t.J2[:m, m:]) == 0
    assert np.count_nonzero(t.J2[m:, :m]) == 0


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("a", [1, 3])
def test_projection_identities(n, a):
    assert check_projection_identities(build_triple(n), a)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_second_structure_preserves_splitting(n):
    # this is exactly why no connection arises from it the way it does
    # from the other two
    assert preserves_splitting(build_triple(n))


def test_projection_identity_rejects_middle_index():
    with pytest.raises(ValueError):
        check_projection_identities(build_triple(1), 2)


def test_projectors_complementary():
    n = 2
    Ph, Pv = horizontal_projector(n), vertical_projector(n)
    I = np.eye(8, dtype=np.int64)
    assert np.array_equal(Ph + Pv, I)
    assert np.array_equal(Ph @ Ph, Ph)
    assert np.array_equal(Ph @ Pv, np.zeros_like(Ph))


def test_bad_n_rejected():
    with pytest.raises(ValueError):
        build_triple(0)


def test_matrices_read_only():
    t = build_triple(1)
    with pytest.raises(ValueError):
        t.J1[0, 0] = 5
