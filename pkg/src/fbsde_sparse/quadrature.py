r"""Sparse Gauss-Hermite quadrature and the conditional expectations it feeds.

The sparse rule in ``R^q`` superposes small tensor Gauss-Hermite rules with
signed binomial weights; only levels with ``p - q < |i|_1 <= p`` contribute.
Some aggregated weights are negative.  The stored rule integrates against
``exp(-xi' xi)``, so its weights sum to ``pi^(q/2)``; the probabilists'
normalization ``pi^(-q/2)`` is applied when an expectation is formed, not
baked into the stored weights.

Conditional expectations of a function of the next time levels are computed
by the Gaussian substitution ``dW = sqrt(2 j dt) xi`` with drift and
diffusion frozen at the conditioning point, i.e. the one-Euler-step
predictor: the integrand is the interpolant evaluated at
``x + b(t, x, y, z) j dt + sigma(t, x, y, z) sqrt(2 j dt) xi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import product

import numpy as np

from .basis1d import gh_rule
from .errors import InvalidParameterError, NumericError
from .indices import combination_coefficient, level_set
from .interpolation import DomainBox, SparseInterpolant, interp_eval, out_of_box_count

__all__ = [
    "GhSparseRule",
    "ExpectationPair",
    "build_gh_rule",
    "conditional_expectation",
    "expectation_batch",
]


@dataclass(frozen=True)
class GhSparseRule:
    """Aggregated sparse Gauss-Hermite rule in R^q.

    ``weights`` carry the signed combination coefficients; ``bound`` is the
    max-abs coordinate over all nodes (the reach of the rule, used for
    domain propagation).
    """

    q: int
    p: int
    nodes: np.ndarray    # (n, q)
    weights: np.ndarray  # (n,), signed
    bound: float

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def M(self) -> float:
        return self.bound


@lru_cache(maxsize=None)
def build_gh_rule(q: int, p: int) -> GhSparseRule:
    """Assemble the sparse Gauss-Hermite rule of parameters (q, p).

    Tensor nodes that coincide bitwise (the 1D levels all contain 0, and
    symmetric nodes repeat across tensor blocks) are merged with their
    weights summed; the node list is sorted lexicographically.
    """
    if q < 1 or p < q:
        raise InvalidParameterError(f"need p >= q >= 1, got q={q}, p={p}")
    agg: dict[tuple[float, ...], float] = {}
    for lev in level_set(q, p):
        if sum(lev) <= p - q:
            continue
        coeff = combination_coefficient(q, p, lev)
        rules = [gh_rule(i) for i in lev]
        for combo in product(*(range(len(r.nodes)) for r in rules)):
            node = tuple(float(rules[m].nodes[j]) for m, j in enumerate(combo))
            w = coeff * math.prod(float(rules[m].weights[j]) for m, j in enumerate(combo))
            agg[node] = agg.get(node, 0.0) + w
    keys = sorted(agg)
    nodes = np.asarray(keys)
    weights = np.asarray([agg[k] for k in keys])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GhSparseRule(q=q, p=p, nodes=nodes, weights=weights,
                        bound=float(np.max(np.abs(nodes))))


@dataclass(frozen=True)
class ExpectationPair:
    """E[Y] and E[Y dW'] approximations at one conditioning point."""

    ey: np.ndarray   # (m,)
    eyw: np.ndarray  # (m, d)


def expectation_batch(yq: SparseInterpolant, x: np.ndarray, y: np.ndarray,
                      z: np.ndarray, t: float, jdt: float, prob,
                      rule: GhSparseRule, wrap_box: DomainBox | None = None):
    """Conditional expectations for a batch of conditioning points.

    ``x`` is (n, q), ``y`` is (n, m), ``z`` is (n, m, d).  Coefficients are
    frozen at ``(t, x, y, z)``.  When ``wrap_box`` is given (periodic
    problems on a fixed box) the displaced evaluation points are folded into
    the box before interpolation.  Returns ``(ey, eyw, n_out_of_box)`` with
    shapes (n, m) and (n, m, d).
    """
    if jdt <= 0.0:
        raise InvalidParameterError(f"need a positive time gap, got {jdt}")
    n = x.shape[0]
    bval = np.asarray(prob.b(t, x, y, z), dtype=float)
    sval = np.asarray(prob.sigma(t, x, y, z), dtype=float)
    scale = math.sqrt(2.0 * jdt)
    disp = np.einsum("nqd,kd->nkq", sval, rule.nodes)
    pts = x[:, None, :] + jdt * bval[:, None, :] + scale * disp
    if wrap_box is not None:
        lo = wrap_box.lower_array()
        width = wrap_box.upper_array() - lo
        pts = lo + np.mod(pts - lo, width)
        oob = 0
    else:
        oob = out_of_box_count(yq.domain, pts.reshape(-1, yq.q))
    vals = interp_eval(yq, pts.reshape(-1, yq.q))
    if not np.all(np.isfinite(vals)):
        bad = int(np.argwhere(~np.isfinite(vals))[0][0])
        raise NumericError(
            "non-finite interpolant value during expectation",
            detail={"point": pts.reshape(-1, yq.q)[bad], "time": t, "jdt": jdt},
        )
    vals = vals.reshape(n, len(rule), yq.m)
    norm = math.pi ** (-rule.q / 2.0)
    w = rule.weights
    ey = norm * (vals * w[None, :, None]).sum(axis=1)
    wxi = (w[:, None] * rule.nodes) * scale          # (K, d)
    eyw = norm * (vals[:, :, :, None] * wxi[None, :, None, :]).sum(axis=1)
    return ey, eyw, oob


def conditional_expectation(yq: SparseInterpolant, x, y, z, t_n: float,
                            jdt: float, prob, rule: GhSparseRule,
                            wrap_box: DomainBox | None = None) -> ExpectationPair:
    """E[Y(next level)] and E[Y dW'] for one conditioning point ``x``."""
    x = np.asarray(x, dtype=float)[None, :]
    y = np.atleast_1d(np.asarray(y, dtype=float))[None, :]
    z = np.asarray(z, dtype=float).reshape(1, y.shape[1], -1)
    ey, eyw, _ = expectation_batch(yq, x, y, z, t_n, jdt, prob, rule, wrap_box)
    return ExpectationPair(ey=ey[0], eyw=eyw[0])
