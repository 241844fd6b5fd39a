"""Index-set enumeration, combination coefficients, and their invariants."""

from itertools import product

import numpy as np
import pytest

from fbsde_sparse.basis1d import cgl_nodes
from fbsde_sparse.errors import InvalidParameterError
from fbsde_sparse.indices import (
    basis_index_set,
    combination_coefficient,
    hier_range,
    level_set,
    owning_level,
)


def brute_force_levels(q, p):
    out = []
    for i in product(range(1, p + 1), repeat=q):
        if q <= sum(i) <= p:
            out.append(i)
    return sorted(out)


def test_level_set_examples():
    assert level_set(1, 3).members == ((1,), (2,), (3,))
    assert set(level_set(2, 3).members) == {(1, 1), (1, 2), (2, 1)}
    ls = level_set(3, 4)
    assert set(ls.members) == {(1, 1, 1), (2, 1, 1), (1, 2, 1), (1, 1, 2)}
    assert len(ls) == 4


@pytest.mark.parametrize("q,p", [(1, 1), (2, 5), (3, 6), (4, 7)])
def test_level_set_matches_brute_force(q, p):
    assert list(level_set(q, p).members) == brute_force_levels(q, p)


def test_level_set_invalid_parameters():
    with pytest.raises(InvalidParameterError):
        level_set(3, 2)
    with pytest.raises(InvalidParameterError):
        level_set(0, 1)


def test_combination_coefficient_examples():
    assert combination_coefficient(1, 4, (4,)) == 1
    assert combination_coefficient(2, 3, (1, 2)) == 1
    assert combination_coefficient(2, 4, (1, 2)) == -1
    assert combination_coefficient(3, 5, (1, 1, 2)) == -2


def test_combination_coefficient_rejects_zero_region():
    with pytest.raises(InvalidParameterError):
        combination_coefficient(2, 4, (1, 1))  # |i| = 2 <= p - q
    with pytest.raises(InvalidParameterError):
        combination_coefficient(2, 4, (3, 2))  # |i| = 5 > p


@pytest.mark.parametrize("q", range(1, 7))
def test_combination_coefficients_sum_to_one(q):
    for p in range(q, q + 6):
        total = sum(
            combination_coefficient(q, p, i)
            for i in level_set(q, p)
            if sum(i) > p - q
        )
        assert total == 1


def test_hierarchical_ranges():
    assert list(hier_range(1)) == [0, 1, 2]
    assert list(hier_range(2)) == [3, 4]
    assert list(hier_range(3)) == [5, 6, 7, 8]
    assert owning_level(0) == owning_level(2) == 1
    assert owning_level(3) == owning_level(4) == 2
    assert owning_level(5) == owning_level(8) == 3
    assert owning_level(9) == 4


def test_basis_index_set_examples():
    assert len(basis_index_set(1, 2)) == 5
    assert set(basis_index_set(1, 2).members) == {(0,), (1,), (2,), (3,), (4,)}
    assert len(basis_index_set(2, 2)) == 9
    assert len(basis_index_set(2, 3)) == 21


def test_basis_partition_is_disjoint_union():
    iset = basis_index_set(2, 4)
    parts = iset.partition()
    assert set(parts.keys()) == set(level_set(2, 4).members)
    total = sum(len(v) for v in parts.values())
    assert total == len(iset)
    for lev, members in parts.items():
        for m in members:
            assert tuple(owning_level(k) for k in m) == lev


def brute_force_grid_points(q, p):
    """Union of tensor CGL grids over all admissible levels (full grids)."""
    pts = set()
    for lev in level_set(q, p):
        axes = [tuple(cgl_nodes(i).nodes) for i in lev]
        pts.update(product(*axes))
    return pts


@pytest.mark.parametrize("q", [1, 2, 3, 4])
def test_basis_cardinality_equals_grid_point_count(q):
    for p in range(q, q + 5):
        assert len(basis_index_set(q, p)) == len(brute_force_grid_points(q, p))


def test_orderings_are_deterministic():
    a = level_set(2, 5).members
    b = tuple(sorted(brute_force_levels(2, 5)))
    assert a == b
    first = basis_index_set(3, 5).members
    second = basis_index_set(3, 5).members
    assert first == second
    assert first == tuple(sorted(first))


def test_position_lookup():
    iset = basis_index_set(2, 3)
    for row, member in enumerate(iset.members):
        assert iset.position(member) == row
    assert (0, 0) in iset
    assert (99, 0) not in iset
