r"""Sparse CGL grids on boxes, the fast hierarchical transform, and evaluation.

A sparse grid of dimension ``q`` and sparseness ``p`` is the union of small
anisotropic tensor grids; with nested 1D levels each point is counted once
and is addressed by a basis tuple from :func:`fbsde_sparse.indices.basis_index_set`.
Interpolants are stored as coefficients of products of 1D hierarchical
Chebyshev functions, so refining ``p`` never changes existing coefficients.

The transform from grid values to coefficients sweeps the dimensions one at
a time.  Along the active dimension the grid decomposes into pencils: fix
the other coordinates' hierarchical indices with owning levels summing to
``s``, and the active index runs over the full 1D range of level ``p - s``.
Each pencil is hit with the precomputed inverse of the 1D collocation
matrix of that level.  Because the 1D bases are hierarchical, coefficients
produced on coarse pencils agree with what finer pencils would give, and
one sweep per dimension suffices.  The same decomposition solved densely is
used as a test oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis1d import _hier_pair, hier_basis_table, hier_node_table, inverse_collocation_matrix
from .errors import InvalidParameterError
from .indices import MultiIndexSet, basis_index_set, owning_level

try:
    from ._kernels import eval_kernel, table_kernel

    _HAVE_KERNELS = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _HAVE_KERNELS = False

__all__ = [
    "DomainBox",
    "SparseGrid",
    "SparseInterpolant",
    "build_grid",
    "fast_transform",
    "interp_eval",
    "compact",
    "out_of_box_count",
    "dump_interpolant",
    "load_interpolant",
]

_EVAL_CHUNK = 8192  # fixed chunk keeps results bitwise stable across runs


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box, the spatial domain of one grid/interpolant."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        if len(self.lower) != len(self.upper):
            raise InvalidParameterError("box bounds must have equal length")
        if not all(a < b for a, b in zip(self.lower, self.upper)):
            raise InvalidParameterError(f"need lower < upper per coordinate, got {self}")

    @classmethod
    def cube(cls, q: int, a: float, b: float) -> "DomainBox":
        return cls(lower=(float(a),) * q, upper=(float(b),) * q)

    @classmethod
    def from_arrays(cls, lower, upper) -> "DomainBox":
        return cls(tuple(float(v) for v in lower), tuple(float(v) for v in upper))

    @property
    def q(self) -> int:
        return len(self.lower)

    def lower_array(self) -> np.ndarray:
        return np.asarray(self.lower)

    def upper_array(self) -> np.ndarray:
        return np.asarray(self.upper)

    def to_reference(self, x: np.ndarray) -> np.ndarray:
        """Affine map of physical coordinates into [-1, 1]^q."""
        a = self.lower_array()
        b = self.upper_array()
        return (2.0 * x - a - b) / (b - a)

    def from_reference(self, t: np.ndarray) -> np.ndarray:
        a = self.lower_array()
        b = self.upper_array()
        return a + 0.5 * (t + 1.0) * (b - a)


@dataclass(frozen=True)
class SparseGrid:
    """Sparse grid: basis tuples, their points in the box, and in [-1,1]^q."""

    q: int
    p: int
    domain: DomainBox
    index_set: MultiIndexSet
    idx: np.ndarray         # (n, q) int, row r = basis tuple of point r
    ref_points: np.ndarray  # (n, q) in [-1, 1]^q
    points: np.ndarray      # (n, q) in the box

    def __len__(self) -> int:
        return len(self.index_set)

    def point(self, member: tuple[int, ...]) -> np.ndarray:
        return self.points[self.index_set.position(member)]


@lru_cache(maxsize=None)
def build_grid(q: int, p: int, domain: DomainBox) -> SparseGrid:
    """Construct the sparse grid of parameters (q, p) on ``domain``."""
    if domain.q != q:
        raise InvalidParameterError(f"domain has {domain.q} coordinates, expected {q}")
    iset = basis_index_set(q, p)
    idx = np.asarray(iset.members, dtype=np.int64)
    table = hier_node_table(int(idx.max()))
    ref = table[idx]
    pts = domain.from_reference(ref)
    for arr in (idx, ref, pts):
        arr.setflags(write=False)
    return SparseGrid(q=q, p=p, domain=domain, index_set=iset, idx=idx,
                      ref_points=ref, points=pts)


@lru_cache(maxsize=None)
def _transform_plan(q: int, p: int):
    """Per-dimension pencil gather tables for the fast transform.

    Returns, for each dimension, a list of (level, rows) pairs where
    ``rows`` has shape (n_pencils, 2^level + 1) and indexes the flat value
    array in 1D hierarchical order along that dimension.
    """
    iset = basis_index_set(q, p)
    members = iset.members
    plan = []
    for d in range(q):
        pencils: dict[tuple[int, ...], list[tuple[int, int]]] = {}
        for row, m in enumerate(members):
            key = m[:d] + m[d + 1 :]
            pencils.setdefault(key, []).append((m[d], row))
        by_level: dict[int, list[list[int]]] = {}
        for key in sorted(pencils):
            entries = sorted(pencils[key])
            level = p - sum(owning_level(k) for k in key)
            assert len(entries) == 2**level + 1, "pencil does not span a full 1D level"
            by_level.setdefault(level, []).append([row for _, row in entries])
        plan.append(
            [(lvl, np.asarray(rows, dtype=np.int64)) for lvl, rows in sorted(by_level.items())]
        )
    return plan


@dataclass(frozen=True)
class SparseInterpolant:
    """Hierarchical Chebyshev expansion over a box, evaluable anywhere.

    ``coefficients`` has one row per basis tuple (canonical order) and one
    column per value component.
    """

    q: int
    p: int
    domain: DomainBox
    m: int
    index_set: MultiIndexSet
    idx: np.ndarray
    coefficients: np.ndarray  # (n, m)

    @property
    def kmax(self) -> int:
        return int(self.idx.max())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return interp_eval(self, x)


def fast_transform(grid: SparseGrid, values) -> SparseInterpolant:
    """Recover expansion coefficients from values on the grid.

    ``values`` is an (n, m) array aligned with the grid's canonical order,
    an (n,) array for scalar data, or a mapping from basis tuple to value.
    """
    n = len(grid)
    if isinstance(values, dict):
        if set(values.keys()) != set(grid.index_set.members):
            raise InvalidParameterError("values must be defined on exactly the grid's index set")
        values = np.asarray([values[m] for m in grid.index_set.members], dtype=float)
    buf = np.asarray(values, dtype=float)
    if buf.ndim == 1:
        buf = buf[:, None]
    if buf.shape[0] != n:
        raise InvalidParameterError(f"expected {n} values, got {buf.shape[0]}")
    buf = buf.copy()
    for dim_plan in _transform_plan(grid.q, grid.p):
        for level, rows in dim_plan:
            t = inverse_collocation_matrix(level)
            buf[rows] = np.matmul(t, buf[rows])
    buf.setflags(write=False)
    return SparseInterpolant(q=grid.q, p=grid.p, domain=grid.domain,
                             m=buf.shape[1], index_set=grid.index_set,
                             idx=grid.idx, coefficients=buf)


def interp_eval(s: SparseInterpolant, x) -> np.ndarray:
    """Evaluate the interpolant at point(s) ``x``.

    Accepts a single q-vector or an (n, q) batch; points outside the box are
    evaluated by polynomial extension.  Returns (m,) or (n, m).
    """
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    if pts.shape[1] != s.q:
        raise InvalidParameterError(f"points have {pts.shape[1]} coordinates, expected {s.q}")
    t = s.domain.to_reference(pts)
    kmax = s.kmax
    n = pts.shape[0]
    out = np.empty((n, s.m))
    for start in range(0, n, _EVAL_CHUNK):
        sl = slice(start, min(start + _EVAL_CHUNK, n))
        if _HAVE_KERNELS:
            tt = np.ascontiguousarray(t[sl].T)
            tabs = np.empty((s.q, tt.shape[1], kmax + 1))
            table_kernel(tt, _hier_pair(max(kmax, 1)), tabs)
            block = np.zeros((tt.shape[1], s.m))
            eval_kernel(tabs, s.idx, np.ascontiguousarray(s.coefficients), block)
            out[sl] = block
        else:
            tables = [hier_basis_table(t[sl, d], kmax) for d in range(s.q)]
            prod = tables[0][:, s.idx[:, 0]]
            for d in range(1, s.q):
                prod *= tables[d][:, s.idx[:, d]]
            out[sl] = prod @ s.coefficients
    return out[0] if single else out


@dataclass(frozen=True)
class _CompactInterpolant:
    """Pruned evaluation view of a :class:`SparseInterpolant`.

    Same evaluation contract (a subset of terms), no index-set metadata;
    used by the solver where the same interpolant is queried many times.
    """

    q: int
    p: int
    domain: DomainBox
    m: int
    idx: np.ndarray
    coefficients: np.ndarray

    @property
    def kmax(self) -> int:
        return int(self.idx.max())

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return interp_eval(self, x)


def compact(s: SparseInterpolant, rel_tol: float = 1e-15):
    """Drop terms with coefficients below ``rel_tol`` of the largest one.

    Evaluating the result differs from the full interpolant by at most
    ``rel_tol * max|coefficient| * sum|basis|``, i.e. well under solver
    tolerances; exact zeros (polynomial data) vanish entirely.
    """
    scale = float(np.max(np.abs(s.coefficients))) if len(s.coefficients) else 0.0
    keep = np.nonzero(np.any(np.abs(s.coefficients) > rel_tol * scale, axis=1))[0]
    if len(keep) == 0:
        keep = np.asarray([0])
    if len(keep) == len(s.coefficients):
        return s
    idx = np.ascontiguousarray(s.idx[keep])
    coeffs = np.ascontiguousarray(s.coefficients[keep])
    idx.setflags(write=False)
    coeffs.setflags(write=False)
    return _CompactInterpolant(q=s.q, p=s.p, domain=s.domain, m=s.m,
                               idx=idx, coefficients=coeffs)


def out_of_box_count(domain: DomainBox, x, tol: float = 1e-9) -> int:
    """Number of points whose mapped coordinates leave [-1,1] by more than tol."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 1:
        pts = pts[None, :]
    t = domain.to_reference(pts)
    return int(np.count_nonzero(np.any(np.abs(t) > 1.0 + tol, axis=1)))


def dump_interpolant(s: SparseInterpolant, path) -> None:
    """Write a text dump: header ``q,p,m,a...,b...`` then one line per index."""
    with open(path, "w") as fh:
        header = [str(s.q), str(s.p), str(s.m)]
        header += [repr(v) for v in s.domain.lower]
        header += [repr(v) for v in s.domain.upper]
        fh.write(",".join(header) + "\n")
        for row, member in enumerate(s.index_set.members):
            cells = [str(k) for k in member]
            cells += [repr(float(c)) for c in s.coefficients[row]]
            fh.write(",".join(cells) + "\n")


def load_interpolant(path) -> SparseInterpolant:
    """Rebuild an interpolant from :func:`dump_interpolant` output."""
    with open(path) as fh:
        head = fh.readline().strip().split(",")
        q, p, m = int(head[0]), int(head[1]), int(head[2])
        lower = tuple(float(v) for v in head[3 : 3 + q])
        upper = tuple(float(v) for v in head[3 + q : 3 + 2 * q])
        box = DomainBox(lower, upper)
        iset = basis_index_set(q, p)
        coeffs = np.empty((len(iset), m))
        seen = {}
        for line in fh:
            cells = line.strip().split(",")
            member = tuple(int(v) for v in cells[:q])
            seen[member] = [float(v) for v in cells[q : q + m]]
        for row, member in enumerate(iset.members):
            coeffs[row] = seen[member]
    idx = np.asarray(iset.members, dtype=np.int64)
    coeffs.setflags(write=False)
    idx.setflags(write=False)
    return SparseInterpolant(q=q, p=p, domain=box, m=m, index_set=iset,
                             idx=idx, coefficients=coeffs)
