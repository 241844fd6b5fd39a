r"""Benchmark FBSDE problems with closed-form solutions, plus a PDE-residual
validator that guards the coefficient algebra.

Every problem couples a forward diffusion ``dX = b dt + sigma dW`` with a
backward equation driven by a generator ``f`` and terminal data
``phi(X_T)``.  When the value function ``u`` solving

    u_t + sum_i b_i u_(x_i) + (1/2) sum_ij [sigma sigma']_ij u_(x_i x_j)
        + f(t, x, u, u_x sigma) = 0,     u(T, .) = phi,

is known in closed form, the pair ``Y = u(t, X)``, ``Z = u_x sigma`` is the
exact solution and convergence tables can be measured against it.  The
residual of this identity, with all derivatives taken by finite
differences, is the acceptance gate for each shipped problem: it catches
transcription slips in the dense generator algebra, and it is how the two
ambiguities in the third benchmark (an undefined constant, and a stray
``cos`` where the identity forces ``sin^2``) were settled.

All coefficient callables are vectorized: ``x`` is (n, q), ``y`` (n, m),
``z`` (n, m, d), and ``t`` may be a scalar or an (n, 1) column (the
validator exploits the latter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .errors import InvalidParameterError, UnsupportedOperationError
from .interpolation import DomainBox

__all__ = [
    "FbsdeProblem",
    "example1",
    "example2",
    "example3",
    "constant_problem",
    "brownian_linear_problem",
    "feynman_kac_residual",
    "z_identity_error",
    "terminal_consistency_error",
    "coefficient_bound_excess",
    "validate_problem",
    "ValidationReport",
    "get_problem",
    "default_levels",
]


@dataclass(frozen=True)
class FbsdeProblem:
    """Coefficient functions and metadata of one FBSDE.

    ``domain_strategy`` is "fixed" (all time levels share ``domain0``;
    combined with ``period`` for problems that wrap) or "propagate"
    (boxes grow from ``domain0`` using the bounds ``c_b``, ``c_sigma``,
    which may be callables of time).
    """

    name: str
    q: int
    d: int
    m: int
    horizon: float
    b: Callable
    sigma: Callable
    f: Callable
    phi: Callable
    exact_y: Optional[Callable]
    exact_z: Optional[Callable]
    coupled: bool
    domain_strategy: str
    domain0: DomainBox
    c_b: Union[float, Callable[[float], float], None] = None
    c_sigma: Union[float, Callable[[float], float], None] = None
    period: Optional[float] = None


def _col(t):
    """Time as something that broadcasts against (n, q) coordinate arrays."""
    t = np.asarray(t, dtype=float)
    return t if t.ndim == 0 else t.reshape(-1, 1)


def example1(horizon: float = 1.0) -> FbsdeProblem:
    """Two-dimensional problem with a product-of-sines solution.

    Everything is periodic in each coordinate with period pi/2, so a fixed
    box spanning exactly one period works for all time levels: displaced
    evaluation points are folded back in, and errors measured over the box
    are global by periodicity.  (On a wider box the same sparseness cannot
    resolve the oscillation isotropically, see the domain notes in the
    README.)
    """

    def _sc(t, x):
        a = 4.0 * (x + _col(t))
        return np.sin(a), np.cos(a)

    def b(t, x, y, z):
        _, c = _sc(t, x)
        return c / 4.0 - 1.0

    def sigma(t, x, y, z):
        s, c = _sc(t, x)
        out = np.zeros(x.shape + (2,))
        diag = c * s / 4.0
        out[:, 0, 0] = diag[:, 0]
        out[:, 1, 1] = diag[:, 1]
        return out

    def f(t, x, y, z):
        s, c = _sc(t, x)
        zz = z[:, 0, :]
        val = 0.5 * (zz * s**2).sum(axis=1) - y[:, 0] * (c**2).sum(axis=1)
        val += s[:, 1] * c[:, 0] ** 2 * (s[:, 0] - 1.0)
        val += s[:, 0] * c[:, 1] ** 2 * (s[:, 1] - 1.0)
        return val[:, None]

    def exact_y(t, x):
        s, _ = _sc(t, x)
        return (s[:, 0] * s[:, 1])[:, None]

    def exact_z(t, x):
        s, c = _sc(t, x)
        prod = s[:, 0] * s[:, 1]
        return (prod[:, None] * c**2)[:, None, :]

    return FbsdeProblem(
        name="example1", q=2, d=2, m=1, horizon=horizon,
        b=b, sigma=sigma, f=f,
        phi=lambda x: exact_y(horizon, x),
        exact_y=exact_y, exact_z=exact_z,
        coupled=False,
        domain_strategy="fixed",
        domain0=DomainBox.cube(2, -math.pi / 4.0, math.pi / 4.0),
        c_b=1.25, c_sigma=0.125,
        period=math.pi / 2.0,
    )


def _leave_one_out(xt: np.ndarray) -> np.ndarray:
    """loo[:, j] = product over k != j of xt[:, k] (prefix/suffix products)."""
    n, q = xt.shape
    pre = np.ones((n, q))
    suf = np.ones((n, q))
    for j in range(1, q):
        pre[:, j] = pre[:, j - 1] * xt[:, j - 1]
        suf[:, q - 1 - j] = suf[:, q - j] * xt[:, q - j]
    return pre * suf


def _leave_two_out(xt: np.ndarray) -> np.ndarray:
    """ltoo[:, i, j] = product over k != i, k != j; diagonal holds loo."""
    n, q = xt.shape
    out = np.empty((n, q, q))
    loo = _leave_one_out(xt)
    for i in range(q):
        out[:, i, i] = loo[:, i]
        for j in range(q):
            if j == i:
                continue
            mask = [k for k in range(q) if k != i and k != j]
            out[:, i, j] = np.prod(xt[:, mask], axis=1) if mask else 1.0
    return out


def example2(q: int, horizon: float = 1.0) -> FbsdeProblem:
    """Decoupled q-dimensional problem (2 <= q <= 6) with a polynomial solution.

    The inner sums of the printed generator and Z formulas exclude the
    already-omitted index (the residual gate fails otherwise).
    """
    if not 2 <= q <= 6:
        raise InvalidParameterError(f"dimension must be in 2..6, got {q}")

    def b(t, x, y, z):
        return x * np.exp(-(x**2)) / q

    def sigma(t, x, y, z):
        out = np.zeros(x.shape + (q,))
        diag = np.exp(-(x**2)) / q
        for i in range(q):
            out[:, i, i] = diag[:, i]
        return out

    def exact_y(t, x):
        xt = x + _col(t)
        loo = _leave_one_out(xt)
        return ((x**2 * loo).sum(axis=1) / q)[:, None]

    def exact_z(t, x):
        xt = x + _col(t)
        loo = _leave_one_out(xt)
        ltoo = _leave_two_out(xt)
        zz = np.empty_like(x)
        for i in range(q):
            s = sum(x[:, j] ** 2 * ltoo[:, i, j] for j in range(q) if j != i)
            zz[:, i] = np.exp(-x[:, i] ** 2) / q**2 * (s + 2.0 * x[:, i] * loo[:, i])
        return zz[:, None, :]

    def f(t, x, y, z):
        xt = x + _col(t)
        loo = _leave_one_out(xt)
        ltoo = _leave_two_out(xt)
        val = -(x * z[:, 0, :]).sum(axis=1) + y[:, 0] / q**2
        val -= ((x**2 + np.exp(-2.0 * x**2)) * loo).sum(axis=1) / q**3
        cross = sum(
            x[:, i] ** 2 * ltoo[:, i, j]
            for i in range(q) for j in range(q) if j != i
        )
        val -= cross / q
        return val[:, None]

    return FbsdeProblem(
        name=f"example2:q={q}", q=q, d=q, m=1, horizon=horizon,
        b=b, sigma=sigma, f=f,
        phi=lambda x: exact_y(horizon, x),
        exact_y=exact_y, exact_z=exact_z,
        coupled=False,
        domain_strategy="propagate",
        domain0=DomainBox.cube(q, -1.0, 1.0),
        c_b=math.exp(-0.5) / (q * math.sqrt(2.0)),
        c_sigma=1.0 / q,
    )


def example3(q: int, horizon: float = 1.0) -> FbsdeProblem:
    """Coupled q-dimensional problem (2 <= q <= 5) with cyclic coordinate links.

    The drift and diffusion depend on Y, so every time level needs the
    fixed-point iteration.  The generator's ambiguous prefactor resolves to
    t^2/(4q) and the Z formula carries sin^2 (not cos); both choices are
    what the residual and Z-identity gates accept.
    """
    if not 2 <= q <= 5:
        raise InvalidParameterError(f"dimension must be in 2..5, got {q}")
    succ = [(i + 1) % q for i in range(q)]
    pred = [(i - 1) % q for i in range(q)]

    def b(t, x, y, z):
        return _col(t) / 2.0 * np.cos(y + x) ** 2

    def sigma(t, x, y, z):
        out = np.zeros(x.shape + (q,))
        diag = _col(t) / 2.0 * np.sin(y + x) ** 2
        for i in range(q):
            out[:, i, i] = diag[:, i]
        return out

    def exact_y(t, x):
        xs = x[:, succ] + _col(t)
        return ((x**2 * xs).sum(axis=1) / q)[:, None]

    def exact_z(t, x):
        t = _col(t)
        u = exact_y(t, x)
        xs = x[:, succ] + t
        zz = t / (2.0 * q) * (x[:, pred] ** 2 + 2.0 * x * xs) * np.sin(u + x) ** 2
        return zz[:, None, :]

    def f(t, x, y, z):
        t = _col(t)
        xs = x[:, succ] + t
        val = z[:, 0, :].sum(axis=1)
        val -= ((1.0 + t / 2.0) * (x**2)).sum(axis=1) / q
        val -= (t * (x * xs)).sum(axis=1) / q
        val -= (t**2 / (4.0 * q) * (xs * np.sin(y + x) ** 4)).sum(axis=1)
        return val[:, None]

    return FbsdeProblem(
        name=f"example3:q={q}", q=q, d=q, m=1, horizon=horizon,
        b=b, sigma=sigma, f=f,
        phi=lambda x: exact_y(horizon, x),
        exact_y=exact_y, exact_z=exact_z,
        coupled=True,
        domain_strategy="fixed",
        domain0=DomainBox.cube(q, -1.0, 1.0),
        c_b=lambda t: t / 2.0, c_sigma=lambda t: t / 2.0,
    )


def constant_problem(q: int = 1, c: float = 1.0, horizon: float = 1.0) -> FbsdeProblem:
    """Degenerate problem (b = sigma = f = 0, phi = c); exact Y = c, Z = 0."""
    return FbsdeProblem(
        name=f"constant:q={q}", q=q, d=q, m=1, horizon=horizon,
        b=lambda t, x, y, z: np.zeros_like(x),
        sigma=lambda t, x, y, z: np.zeros(x.shape + (q,)),
        f=lambda t, x, y, z: np.zeros((len(x), 1)),
        phi=lambda x: np.full((len(x), 1), c),
        exact_y=lambda t, x: np.full((len(x), 1), c),
        exact_z=lambda t, x: np.zeros((len(x), 1, q)),
        coupled=False, domain_strategy="fixed",
        domain0=DomainBox.cube(q, -1.0, 1.0),
        c_b=0.0, c_sigma=0.0,
    )


def brownian_linear_problem(horizon: float = 1.0) -> FbsdeProblem:
    """Driftless unit-volatility problem with phi(x) = x; Y = x, Z = 1."""

    def sigma(t, x, y, z):
        return np.ones(x.shape + (1,))

    return FbsdeProblem(
        name="brownian_linear", q=1, d=1, m=1, horizon=horizon,
        b=lambda t, x, y, z: np.zeros_like(x),
        sigma=sigma,
        f=lambda t, x, y, z: np.zeros((len(x), 1)),
        phi=lambda x: x.copy(),
        exact_y=lambda t, x: x.copy(),
        exact_z=lambda t, x: np.ones((len(x), 1, 1)),
        coupled=False, domain_strategy="fixed",
        domain0=DomainBox.cube(1, -1.0, 1.0),
        c_b=0.0, c_sigma=1.0,
    )


def _fd_time_derivative(u, t, x, h=1e-5):
    """Richardson-extrapolated central difference in t."""
    def d(hh):
        return (u(t + hh, x) - u(t - hh, x)) / (2.0 * hh)

    return (4.0 * d(h / 2.0) - d(h)) / 3.0


def _fd_gradient(u, t, x, h=1e-5):
    """Gradient of u in x, shape (n, m, q)."""
    n, q = x.shape
    m = u(t, x).shape[1]
    g = np.empty((n, m, q))
    for i in range(q):
        e = np.zeros_like(x)
        e[:, i] = 1.0

        def d(hh):
            return (u(t, x + hh * e) - u(t, x - hh * e)) / (2.0 * hh)

        g[:, :, i] = (4.0 * d(h / 2.0) - d(h)) / 3.0
    return g


def _fd_hessian(u, t, x, h=1e-3):
    """Second derivatives in x, shape (n, m, q, q).

    The step is larger than for first derivatives: second differences at
    h = 1e-5 are dominated by rounding (~1e-6), which would swamp the
    residual gates.
    """
    n, q = x.shape
    m = u(t, x).shape[1]
    hess = np.empty((n, m, q, q))
    u0 = u(t, x)
    for i in range(q):
        ei = np.zeros_like(x)
        ei[:, i] = 1.0

        def d2(hh):
            return (u(t, x + hh * ei) - 2.0 * u0 + u(t, x - hh * ei)) / hh**2

        hess[:, :, i, i] = (4.0 * d2(h / 2.0) - d2(h)) / 3.0
        for j in range(i + 1, q):
            ej = np.zeros_like(x)
            ej[:, j] = 1.0

            def dm(hh):
                return (u(t, x + hh * (ei + ej)) - u(t, x + hh * (ei - ej))
                        - u(t, x - hh * (ei - ej)) + u(t, x - hh * (ei + ej))) / (4.0 * hh**2)

            mixed = (4.0 * dm(h / 2.0) - dm(h)) / 3.0
            hess[:, :, i, j] = mixed
            hess[:, :, j, i] = mixed
    return hess


def _sample_tx(prob: FbsdeProblem, samples: int, seed: int, box: DomainBox | None):
    rng = np.random.RandomState(seed)
    box = box or prob.domain0
    lo = box.lower_array()
    hi = box.upper_array()
    x = lo + rng.random_sample((samples, prob.q)) * (hi - lo)
    margin = 2e-3 * prob.horizon  # keep FD stencils inside [0, T]
    t = (margin + rng.random_sample((samples, 1)) * (prob.horizon - 2 * margin))
    return t, x


def feynman_kac_residual(prob: FbsdeProblem, samples: int = 1000, seed: int = 0,
                         box: DomainBox | None = None,
                         second_order_factor: float = 0.5) -> float:
    """Max PDE residual of the exact solution over random (t, x) samples.

    ``second_order_factor`` scales the diffusion term of the generator of
    the diffusion; 1/2 is the convention under which the shipped benchmark
    generators reproduce their exact solutions.
    """
    if prob.exact_y is None:
        raise UnsupportedOperationError("residual check needs an exact solution")
    t, x = _sample_tx(prob, samples, seed, box)
    u = prob.exact_y
    uval = u(t, x)
    ut = _fd_time_derivative(u, t, x)
    grad = _fd_gradient(u, t, x)
    hess = _fd_hessian(u, t, x)
    z = prob.exact_z(t, x) if prob.exact_z is not None else np.zeros(
        (len(x), prob.m, prob.d))
    z = np.einsum("nmq,nqd->nmd", grad, prob.sigma(t, x, uval, z))
    bval = prob.b(t, x, uval, z)
    sval = prob.sigma(t, x, uval, z)
    a = np.einsum("nqd,nrd->nqr", sval, sval)
    res = (ut
           + np.einsum("nq,nmq->nm", bval, grad)
           + second_order_factor * np.einsum("nqr,nmqr->nm", a, hess)
           + prob.f(t, x, uval, z))
    return float(np.max(np.abs(res)))


def z_identity_error(prob: FbsdeProblem, samples: int = 1000, seed: int = 1,
                     box: DomainBox | None = None) -> float:
    """Max deviation of the stored Z from (grad of exact Y) * sigma."""
    if prob.exact_y is None or prob.exact_z is None:
        raise UnsupportedOperationError("Z check needs an exact solution")
    t, x = _sample_tx(prob, samples, seed, box)
    uval = prob.exact_y(t, x)
    zval = prob.exact_z(t, x)
    grad = _fd_gradient(prob.exact_y, t, x)
    sval = prob.sigma(t, x, uval, zval)
    return float(np.max(np.abs(zval - np.einsum("nmq,nqd->nmd", grad, sval))))


def terminal_consistency_error(prob: FbsdeProblem, samples: int = 1000,
                               seed: int = 2, box: DomainBox | None = None) -> float:
    """Max deviation of phi from the exact solution at the horizon."""
    if prob.exact_y is None:
        raise UnsupportedOperationError("terminal check needs an exact solution")
    _, x = _sample_tx(prob, samples, seed, box)
    return float(np.max(np.abs(prob.phi(x) - prob.exact_y(prob.horizon, x))))


def coefficient_bound_excess(prob: FbsdeProblem, samples: int = 100_000,
                             seed: int = 3, box: DomainBox | None = None) -> float:
    """How far sampled |b|, |sigma| exceed the declared bounds (<= 0 is good)."""
    if prob.c_b is None or prob.c_sigma is None:
        return 0.0
    t, x = _sample_tx(prob, samples, seed, box)
    y = prob.exact_y(t, x) if prob.exact_y is not None else np.zeros((len(x), prob.m))
    z = prob.exact_z(t, x) if prob.exact_z is not None else np.zeros(
        (len(x), prob.m, prob.d))
    cb = prob.c_b(t) if callable(prob.c_b) else prob.c_b
    cs = prob.c_sigma(t) if callable(prob.c_sigma) else prob.c_sigma
    db = np.max(np.abs(prob.b(t, x, y, z)) - np.broadcast_to(np.asarray(cb), (len(x), 1)))
    ds = np.max(np.abs(prob.sigma(t, x, y, z)).max(axis=2)
                - np.broadcast_to(np.asarray(cs), (len(x), 1)))
    return float(max(db, ds))


@dataclass(frozen=True)
class ValidationReport:
    name: str
    residual: float
    z_error: float
    terminal_error: float
    bound_excess: float

    @property
    def passed(self) -> bool:
        return (self.residual <= 1e-6 and self.z_error <= 1e-6
                and self.terminal_error <= 1e-12 and self.bound_excess <= 1e-9)


def validate_problem(prob: FbsdeProblem, samples: int = 1000,
                     seed: int = 0) -> ValidationReport:
    """Run every consistency gate of one problem."""
    return ValidationReport(
        name=prob.name,
        residual=feynman_kac_residual(prob, samples=samples, seed=seed),
        z_error=z_identity_error(prob, samples=samples, seed=seed + 1),
        terminal_error=terminal_consistency_error(prob, samples=samples, seed=seed + 2),
        bound_excess=coefficient_bound_excess(prob, seed=seed + 3),
    )


def get_problem(spec: str, horizon: float = 1.0) -> FbsdeProblem:
    """Problem by CLI id, e.g. "example1", "example2:q=4", "example3:q=3"."""
    name, _, rest = spec.partition(":")
    params = {}
    if rest:
        for chunk in rest.split(","):
            key, _, val = chunk.partition("=")
            params[key.strip()] = int(val)
    try:
        if name == "example1":
            return example1(horizon=horizon)
        if name == "example2":
            return example2(params.get("q", 3), horizon=horizon)
        if name == "example3":
            return example3(params.get("q", 2), horizon=horizon)
        if name == "constant":
            return constant_problem(params.get("q", 1), horizon=horizon)
        if name == "brownian_linear":
            return brownian_linear_problem(horizon=horizon)
    except TypeError as exc:
        raise InvalidParameterError(f"bad problem parameters in {spec!r}: {exc}") from exc
    raise InvalidParameterError(f"unknown problem {spec!r}")


def default_levels(prob: FbsdeProblem, k: int) -> tuple[int, int]:
    """Grid/quadrature sparseness defaults mirroring the benchmark tables."""
    name = prob.name.partition(":")[0]
    q = prob.q
    if name == "example1":
        return 7, 3
    if name == "example2":
        return q + 1, q + 1
    if name == "example3":
        pq = q + 1
        if q == 4 and k >= 3:
            pq = 6
        elif q == 5 and k >= 2:
            pq = 7
        return q + 1, pq
    return q + 2, q + 2
