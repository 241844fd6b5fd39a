r"""Multi-index sets and combination coefficients for sparse-grid constructions.

Two kinds of multi-index sets drive everything here:

* *Level* sets: all integer tuples ``i = (i_1, ..., i_q)`` with every
  component at least 1 and ``q <= |i|_1 <= p``.  They enumerate the
  anisotropic tensor blocks whose union forms a sparse grid.
* *Basis* sets: the disjoint union over admissible levels of products of
  one-dimensional hierarchical index ranges.  With nested grids of sizes
  ``N_i = 2^i + 1``, the 1D ranges are ``{0, 1, 2}`` for level 1 and
  ``{2^(j-1)+1, ..., 2^j}`` for level ``j >= 2``, so a basis tuple
  ``k = (k_1, ..., k_q)`` simultaneously addresses a grid point and a
  hierarchical basis function.

The signed binomial prefactor ``(-1)^(p-|i|) * C(q-1, p-|i|)`` converts a
telescoping union of tensor operators into a plain signed superposition; it
is shared by sparse interpolation and sparse quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

__all__ = [
    "MultiIndexSet",
    "level_set",
    "combination_coefficient",
    "basis_index_set",
    "owning_level",
    "hier_range",
]


def owning_level(k: int) -> int:
    """Level of the 1D hierarchical range containing index ``k``.

    Indices 0..2 belong to level 1; index ``k >= 3`` belongs to the level
    ``j`` with ``2^(j-1) < k <= 2^j``.
    """
    if k < 0:
        raise ValueError(f"hierarchical index must be >= 0, got {k}")
    if k <= 2:
        return 1
    return (k - 1).bit_length()


def hier_range(j: int) -> range:
    """1D hierarchical index range of level ``j`` (new indices at that level)."""
    if j < 1:
        raise ValueError(f"level must be >= 1, got {j}")
    if j == 1:
        return range(0, 3)
    return range(2 ** (j - 1) + 1, 2**j + 1)


@dataclass(frozen=True)
class MultiIndexSet:
    """An ordered multi-index set, either of level tuples or of basis tuples.

    ``members`` is lexicographically sorted, so iteration order is stable
    across runs and serializations are reproducible.
    """

    q: int
    p: int
    kind: str  # "level" or "basis"
    members: tuple[tuple[int, ...], ...]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, item) -> bool:
        return tuple(item) in self._member_set()

    @lru_cache(maxsize=None)
    def _member_set(self) -> frozenset:
        return frozenset(self.members)

    def position(self, member: tuple[int, ...]) -> int:
        """Row of ``member`` in the canonical ordering."""
        return self._positions()[tuple(member)]

    @lru_cache(maxsize=None)
    def _positions(self) -> dict:
        return {m: i for i, m in enumerate(self.members)}

    def partition(self) -> dict[tuple[int, ...], list[tuple[int, ...]]]:
        """Group basis members by the tuple of owning levels per coordinate."""
        if self.kind != "basis":
            raise ValueError("partition() is defined for basis index sets only")
        groups: dict[tuple[int, ...], list[tuple[int, ...]]] = {}
        for m in self.members:
            key = tuple(owning_level(k) for k in m)
            groups.setdefault(key, []).append(m)
        return groups


def _check_qp(q: int, p: int) -> None:
    if q < 1 or p < q:
        from .errors import InvalidParameterError

        raise InvalidParameterError(f"need p >= q >= 1, got q={q}, p={p}")


@lru_cache(maxsize=None)
def level_set(q: int, p: int) -> MultiIndexSet:
    """All level tuples with components >= 1 and ``q <= |i|_1 <= p``."""
    _check_qp(q, p)
    members = []
    for i in product(range(1, p - q + 2), repeat=q):
        if q <= sum(i) <= p:
            members.append(i)
    members.sort()
    return MultiIndexSet(q=q, p=p, kind="level", members=tuple(members))


def combination_coefficient(q: int, p: int, i: tuple[int, ...]) -> int:
    """Signed binomial weight of level ``i`` in the combination formula.

    Only levels with ``p - q < |i|_1 <= p`` carry a nonzero weight; asking
    for any other level is a caller bug, not a zero.
    """
    from .errors import InvalidParameterError

    _check_qp(q, p)
    s = sum(i)
    if len(i) != q or any(c < 1 for c in i):
        raise InvalidParameterError(f"level index {i} invalid for dimension {q}")
    if not (p - q < s <= p):
        raise InvalidParameterError(
            f"|i|_1={s} outside ({p - q}, {p}]; coefficient is zero there"
        )
    r = p - s
    return (-1) ** r * math.comb(q - 1, r)


@lru_cache(maxsize=None)
def basis_index_set(q: int, p: int) -> MultiIndexSet:
    """Union of hierarchical-range products over all admissible levels.

    The result enumerates both the sparse-grid points and the hierarchical
    basis functions; its cardinality equals the sparse-grid point count.
    """
    _check_qp(q, p)
    members = set()
    for lev in level_set(q, p):
        ranges = [hier_range(j) for j in lev]
        members.update(product(*ranges))
    ordered = tuple(sorted(members))
    return MultiIndexSet(q=q, p=p, kind="basis", members=ordered)
