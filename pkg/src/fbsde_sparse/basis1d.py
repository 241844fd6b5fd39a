r"""One-dimensional building blocks: nested CGL grids, hierarchical Chebyshev
bases, and Gauss-Hermite rules.

CGL nodes of level ``i`` are ``cos(j*pi/2^i), j = 0..2^i``.  Levels nest:
the even-``j`` nodes of level ``i+1`` are exactly the nodes of level ``i``.
We exploit that to pair each *hierarchical* index with a Chebyshev degree:

* level 1 owns indices 0, 1, 2 at nodes 1, 0, -1 and plain degrees 0, 1, 2;
* level ``j >= 2`` owns indices ``2^(j-1)+1 .. 2^j``, its new nodes listed by
  increasing angle (odd multiples of ``pi/2^j``), and the basis function of
  index ``k`` is ``T_k - T_(2^j - k)``.

That difference vanishes at every node of level ``j-1`` (fold the cosine),
which is what makes expansion coefficients independent of the level they
were computed at.

Gauss-Hermite level ``i`` is the ``2^i - 1`` point rule for the weight
``exp(-x^2)`` on the real line; the levels are *not* nested.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_hermite

from .errors import InvalidParameterError, NumericError
from .indices import owning_level

__all__ = [
    "CglLevel",
    "GhLevel",
    "DomainInterval",
    "cgl_nodes",
    "gh_rule",
    "hier_cheb_eval",
    "hier_node",
    "hier_node_table",
    "chebyshev_table",
    "hier_basis_table",
    "collocation_matrix",
    "inverse_collocation_matrix",
    "collocation_condition_number",
]


@dataclass(frozen=True)
class CglLevel:
    """CGL nodes of one level, in the natural (strictly decreasing) order."""

    level: int
    nodes: np.ndarray          # shape (2^i + 1,), nodes[j] = cos(j*pi/2^i)
    new_node_positions: np.ndarray  # odd j for level >= 2; all j for level 1


@dataclass(frozen=True)
class GhLevel:
    """Gauss-Hermite nodes/weights of one level (weight exp(-x^2))."""

    level: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class DomainInterval:
    """A bounded coordinate interval [a, b]."""

    a: float
    b: float

    def __post_init__(self):
        if not self.a < self.b:
            raise InvalidParameterError(f"need a < b, got [{self.a}, {self.b}]")


@lru_cache(maxsize=None)
def cgl_nodes(i: int) -> CglLevel:
    """CGL nodes of level ``i`` with exact symmetry and bitwise nesting.

    The first half is computed as ``cos(j*pi/2^i)``, the midpoint snapped to
    exactly 0, and the second half mirrored, so a node shared by two levels
    is the same float in both.
    """
    if i < 1:
        raise InvalidParameterError(f"level must be >= 1, got {i}")
    n = 2**i
    nodes = np.empty(n + 1)
    half = n // 2
    j = np.arange(half)
    nodes[:half] = np.cos(j * np.pi / n)
    nodes[half] = 0.0
    nodes[half + 1 :] = -nodes[:half][::-1]
    nodes[0] = 1.0
    nodes[-1] = -1.0
    if i == 1:
        new = np.arange(3)
    else:
        new = np.arange(1, n, 2)
    nodes.setflags(write=False)
    new.setflags(write=False)
    return CglLevel(level=i, nodes=nodes, new_node_positions=new)


@lru_cache(maxsize=None)
def gh_rule(i: int) -> GhLevel:
    """Gauss-Hermite rule of level ``i`` (``2^i - 1`` points).

    Nodes/weights come from scipy's Golub-Welsch implementation and are then
    symmetrized (middle node exactly 0, mirrored negatives) so that equal
    nodes from different tensor factors compare bitwise equal.
    """
    if i < 1:
        raise InvalidParameterError(f"level must be >= 1, got {i}")
    n = 2**i - 1
    x, w = roots_hermite(n)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w)) and np.all(w > 0)):
        raise NumericError(f"Gauss-Hermite rule of {n} points failed", detail=(x, w))
    half = n // 2
    x = x.copy()
    w = w.copy()
    x[half] = 0.0
    x[half + 1 :] = -x[:half][::-1]
    w_sym = 0.5 * (w[:half] + w[half + 1 :][::-1])
    w[:half] = w_sym
    w[half + 1 :] = w_sym[::-1]
    x.setflags(write=False)
    w.setflags(write=False)
    return GhLevel(level=i, nodes=x, weights=w)


def hier_node(k: int) -> float:
    """Reference-interval CGL node addressed by hierarchical index ``k``."""
    j = owning_level(k)
    lvl = cgl_nodes(j)
    if j == 1:
        return float(lvl.nodes[k])
    pos = lvl.new_node_positions[k - 2 ** (j - 1) - 1]
    return float(lvl.nodes[pos])


@lru_cache(maxsize=None)
def hier_node_table(kmax: int) -> np.ndarray:
    """Nodes for hierarchical indices 0..kmax as one read-only array."""
    t = np.array([hier_node(k) for k in range(kmax + 1)])
    t.setflags(write=False)
    return t


def chebyshev_table(t: np.ndarray, kmax: int) -> np.ndarray:
    """Chebyshev polynomials T_0..T_kmax at points ``t``, shape (..., kmax+1).

    Uses the three-term recurrence, which extends polynomially outside
    [-1, 1]; arccos-based evaluation would not.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (kmax + 1,))
    out[..., 0] = 1.0
    if kmax >= 1:
        out[..., 1] = t
    for k in range(2, kmax + 1):
        out[..., k] = 2.0 * t * out[..., k - 1] - out[..., k - 2]
    return out


@lru_cache(maxsize=None)
def _hier_pair(kmax: int) -> np.ndarray:
    """pair[k] = 2^j - k for k in level j >= 2, else -1."""
    pair = np.full(kmax + 1, -1, dtype=np.int64)
    for k in range(3, kmax + 1):
        pair[k] = 2 ** owning_level(k) - k
    pair.setflags(write=False)
    return pair


def hier_basis_table(t: np.ndarray, kmax: int) -> np.ndarray:
    """Hierarchical basis functions 0..kmax at points ``t`` in [-1, 1] coords."""
    v = chebyshev_table(t, kmax)
    if kmax >= 3:
        pair = _hier_pair(kmax)
        v[..., 3:] = v[..., 3:] - v[..., pair[3:]]
    return v


def hier_cheb_eval(k: int, j: int, x, dom: DomainInterval) -> float:
    """Evaluate the hierarchical basis function (k, level j) at ``x``.

    ``x`` is mapped affinely from [dom.a, dom.b] to [-1, 1]; values outside
    the interval are evaluated by polynomial extension.
    """
    if j != owning_level(k):
        raise InvalidParameterError(f"index {k} does not belong to level {j}")
    t = (2.0 * np.asarray(x, dtype=float) - dom.a - dom.b) / (dom.b - dom.a)
    v = hier_basis_table(t, max(k, 1))
    return v[..., k] if np.ndim(x) else float(v[..., k])


@lru_cache(maxsize=None)
def collocation_matrix(level: int) -> np.ndarray:
    """Matrix A[m, k] of basis function k at the level's node of index m.

    Rows follow the hierarchical node ordering (index m is hierarchical
    index m), columns the same indices as basis degrees.
    """
    n = 2**level
    nodes = hier_node_table(n)
    a = hier_basis_table(nodes, n)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def inverse_collocation_matrix(level: int) -> np.ndarray:
    """Inverse of :func:`collocation_matrix`; maps node values to coefficients."""
    a = collocation_matrix(level)
    try:
        t = np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:  # cannot happen for CGL + hierarchical basis
        raise NumericError(f"singular 1D transform matrix at level {level}") from exc
    t.setflags(write=False)
    return t


def collocation_condition_number(level: int) -> float:
    """2-norm condition number of the level's collocation matrix."""
    return float(np.linalg.cond(collocation_matrix(level)))
