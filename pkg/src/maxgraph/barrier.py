"""Rotationally symmetric comparison hypersurfaces ``{ |y - eta| = f(|x - xi|) }``.

The profile is

    f(r) = int_0^r (K + L t^n / n) / sqrt(t^(2n-2) + (K + L t^n / n)^2) dt

with ``K > 0`` and ``L <= 0``, admissible for ``0 <= r < (n K / |L|)^(1/n)``.
Writing ``s(r) = L r / n + K r^(1-n)`` one has ``f' = s / sqrt(1 + s^2)``,
``f'' = s' / (1 + s^2)^(3/2)``, ``f' / sqrt(1 - f'^2) = s`` and
``f'' / (1 - f'^2)^(3/2) = s'``, which is how every closed form below is
evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boundary_data import BoundaryData
from .domain_grid import GraphField, StructuredGrid
from .errors import InfeasibleFit, InvalidArgument
from .lorentz_core import SpacetimeVector

QUAD_TOL = 1e-12
CONTAIN_TOL = 1e-12
TANGENT_TOL = 1e-10

# Gauss-Kronrod 7/15 nodes on [-1, 1] (non-negative half) and weights
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])  # 15 nodes, ascending
_WK = np.concatenate([_WGK[:-1], _WGK[::-1]])
_WG15 = np.zeros(15)
_WG15[[1, 3, 5]] = _WG[:3]
_WG15[[13, 11, 9]] = _WG[:3]
_WG15[7] = _WG[3]


def gk15(fn, a, b):
    """Kronrod estimate and |Kronrod - Gauss| on each interval ``[a_k, b_k]``."""
    a = np.atleast_1d(np.asarray(a, float))
    b = np.atleast_1d(np.asarray(b, float))
    c = 0.5 * (a + b)
    h = 0.5 * (b - a)
    x = c[:, None] + h[:, None] * _NODES[None, :]
    y = fn(x)
    k = h * (y @ _WK)
    g = h * (y @ _WG15)
    return k, np.abs(k - g)


def adaptive_quad(fn, a, b, tol=QUAD_TOL, max_intervals=100000):
    """Adaptive composite Gauss-Kronrod integral of a vectorised ``fn`` over ``[a, b]``.

    Intervals are bisected until every piece's error estimate is below its
    length-proportional share of ``tol``.
    """
    if b == a:
        return 0.0
    total_len = abs(b - a)
    lo, hi = np.array([a], float), np.array([b], float)
    acc = 0.0
    n_done = 0
    while lo.size:
        k, err = gk15(fn, lo, hi)
        ok = err <= tol * np.abs(hi - lo) / total_len
        tiny = np.abs(hi - lo) <= 1e-14 * total_len
        done = ok | tiny
        acc += k[done].sum()
        n_done += lo.size
        if n_done > max_intervals:
            raise RuntimeError("adaptive quadrature did not converge")
        lo, hi = lo[~done], hi[~done]
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
    return float(acc)


@dataclass
class BarrierParams:
    K: float
    Lambda: float
    xi: np.ndarray
    eta: np.ndarray
    tangency_residual: float | None = field(default=None, compare=False)

    def __post_init__(self):
        self.xi = np.atleast_1d(np.asarray(self.xi, float))
        self.eta = np.atleast_1d(np.asarray(self.eta, float))
        if not (np.isfinite(self.K) and self.K > 0):
            raise InvalidArgument(f"K must be positive, got {self.K}")
        if not (np.isfinite(self.Lambda) and self.Lambda <= 0):
            raise InvalidArgument(f"Lambda must be <= 0, got {self.Lambda}")

    @classmethod
    def at_origin(cls, n: int, m: int, K: float, Lambda: float) -> "BarrierParams":
        return cls(K, Lambda, np.zeros(n), np.zeros(m))

    @property
    def n(self) -> int:
        return self.xi.size

    @property
    def m(self) -> int:
        return self.eta.size

    @property
    def r_max(self) -> float:
        if self.Lambda == 0:
            return np.inf
        return (self.n * self.K / abs(self.Lambda)) ** (1.0 / self.n)


@dataclass
class ShapeSpectrum:
    c1: float  # multiplicity n - 1
    c2: float  # multiplicity m - 1
    c3: float  # multiplicity 1


def _integrand(p: BarrierParams):
    n, K, L = p.n, p.K, p.Lambda

    def fn(t):
        num = K + L * t**n / n
        return num / np.sqrt(t ** (2 * n - 2) + num * num)

    return fn


def _check_radius(p, r, allow_zero):
    r = np.asarray(r, float)
    bad = (r < 0) | (r >= p.r_max) | ~np.isfinite(r) | ((r == 0) & (not allow_zero))
    if np.any(bad):
        raise InvalidArgument(f"radius outside the admissible range [0, {p.r_max:.6g}): {r[bad].ravel()[:3]}")
    return r


def f_eval(p: BarrierParams, r: float) -> float:
    """Profile ``f_{K,Lambda}(r)`` by adaptive quadrature (absolute tolerance 1e-12)."""
    r = float(_check_radius(p, r, allow_zero=True))
    return adaptive_quad(_integrand(p), 0.0, r)


def f_eval_many(p: BarrierParams, radii) -> np.ndarray:
    """``f`` at many radii, integrating piecewise between sorted radii."""
    radii = np.asarray(radii, float)
    _check_radius(p, radii, allow_zero=True)
    flat = radii.ravel()
    order = np.argsort(flat)
    knots = np.concatenate([[0.0], flat[order]])
    fn = _integrand(p)
    pieces = np.array([adaptive_quad(fn, knots[k], knots[k + 1], QUAD_TOL / max(1, flat.size)) for k in range(flat.size)])
    out = np.empty_like(flat)
    out[order] = np.cumsum(pieces)
    return out.reshape(radii.shape)


def _s(p, r):
    return p.Lambda * r / p.n + p.K * r ** (1 - p.n)


def _s_prime(p, r):
    return p.Lambda / p.n + (1 - p.n) * p.K * r ** (-p.n)


def f_prime(p: BarrierParams, r):
    """Closed-form slope ``f'(r)`` in (0, 1) on the open admissible range."""
    r = _check_radius(p, r, allow_zero=False)
    s = _s(p, r)
    return s / np.sqrt(1.0 + s * s)


def f_second(p: BarrierParams, r):
    r = _check_radius(p, r, allow_zero=False)
    s = _s(p, r)
    return _s_prime(p, r) / (1.0 + s * s) ** 1.5


def shape_spectrum(p: BarrierParams, r: float, f_value: float | None = None) -> ShapeSpectrum:
    """Principal values of the second fundamental form at radius ``r``.

    ``c1 = -f'/(r sqrt(1-f'^2))``, ``c2 = 1/(f sqrt(1-f'^2))``,
    ``c3 = -f''/(1-f'^2)^(3/2)``.
    """
    _check_radius(p, r, allow_zero=False)
    f = f_eval(p, r) if f_value is None else f_value
    s = _s(p, r)
    return ShapeSpectrum(c1=float(-s / r), c2=float(np.sqrt(1.0 + s * s) / f), c3=float(-_s_prime(p, r)))


def one_minus_f_prime(p: BarrierParams, r):
    """``1 - f'(r)`` without cancellation near the light cone (small ``r``)."""
    r = _check_radius(p, r, allow_zero=False)
    s = _s(p, r)
    root = np.sqrt(1.0 + s * s)
    return 1.0 / (root * (root + s))


def ode_residual(p: BarrierParams, r) -> np.ndarray:
    """``(n-1) f'/(r sqrt(1-f'^2)) + f''/(1-f'^2)^(3/2) - Lambda`` from f', f'' themselves."""
    fp = f_prime(p, r)
    fpp = f_second(p, r)
    q = one_minus_f_prime(p, r) * (1.0 + fp)
    return (p.n - 1) * fp / (r * np.sqrt(q)) + fpp / q**1.5 - p.Lambda


# -- tangent geometry at a point of the hypersurface --------------------------------


def _lorentz(v, w, n):
    return v[..., :n] @ w[..., :n].T - v[..., n:] @ w[..., n:].T


def surface_frame(p: BarrierParams, r: float, f_value: float | None = None):
    """Geometry at the canonical point ``x = xi + r e_1``, ``y = eta + f(r) e_1``.

    Returns ``(normal, slice_basis, timelike_basis)`` as rows of length
    ``n + m``: the unit timelike normal, a Lorentz-orthonormal basis of the
    spacelike slice ``{v2 = 0}`` of the tangent space (the profile direction
    last), and unit timelike tangents to the ``S^{m-1}`` factor.
    """
    n, m = p.n, p.m
    fp = float(f_prime(p, r))
    q = np.sqrt(float(one_minus_f_prime(p, r)) * (1.0 + fp))
    normal = np.zeros(n + m)
    normal[0] = fp / q
    normal[n] = 1.0 / q
    slice_basis = np.zeros((n, n + m))
    for k in range(1, n):
        slice_basis[k - 1, k] = 1.0
    slice_basis[n - 1, 0] = 1.0 / q
    slice_basis[n - 1, n] = fp / q
    timelike = np.zeros((m - 1, n + m))
    for k in range(1, m):
        timelike[k - 1, n + k] = 1.0
    return normal, slice_basis, timelike


def _frame_signs(n, m):
    return np.concatenate([np.ones(n), -np.ones(m - 1)])


def mean_curvature_in_frame(p: BarrierParams, r: float, coeffs, f_value: float | None = None) -> float:
    """Mean curvature over the plane spanned by ``coeffs`` in the adapted tangent frame.

    Row ``k`` of ``coeffs`` (shape ``(n, n + m - 1)``) holds the components
    of a tangent vector along the rows of ``surface_frame``: ``n - 1``
    directions tangent to the ``S^{n-1}`` orbit, the profile direction, then
    ``m - 1`` timelike directions.  The frame is Lorentz-orthonormal and
    diagonalises the second fundamental form, with values
    ``(c1, ..., c1, c3, c2, ..., c2)``; orthonormalising the plane
    (Gram-Schmidt, here as a Cholesky factorisation of its Gram matrix)
    and tracing gives ``H = tr(G^{-1} B)``.
    """
    n, m = p.n, p.m
    C = np.atleast_2d(np.asarray(coeffs, float))
    if C.shape != (n, n + m - 1):
        raise InvalidArgument(f"frame coefficients must have shape ({n}, {n + m - 1}), got {C.shape}")
    f = f_eval(p, r) if f_value is None else f_value
    spec = shape_spectrum(p, r, f)
    d = np.concatenate([np.full(n - 1, spec.c1), [spec.c3], np.full(m - 1, spec.c2)])
    G = (C * _frame_signs(n, m)) @ C.T
    B = (C * d) @ C.T
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise InvalidArgument("basis does not span a spacelike plane") from None
    if np.diag(L).min() <= 1e-7 * np.sqrt(np.abs(G).max()):
        raise InvalidArgument("basis does not span a spacelike plane")
    Y = np.linalg.solve(L, np.linalg.solve(L, B).T)
    return float(np.trace(Y))


def mean_curvature_over_plane(p: BarrierParams, r: float, basis, f_value: float | None = None) -> float:
    """Trace of the second fundamental form over the plane spanned by ``basis``.

    ``basis`` holds ``n`` tangent vectors at the canonical point (rows of
    length ``n + m``, spatial part first).  They are projected onto the
    adapted frame and orthonormalised in the Lorentzian inner product.
    Near the light cone (small ``r``) the ambient components of tangent
    vectors are nearly null, so precision there is limited by the input;
    ``mean_curvature_in_frame`` avoids that.
    """
    n, m = p.n, p.m
    basis = np.atleast_2d(np.asarray(basis, float))
    if basis.shape != (n, n + m):
        raise InvalidArgument(f"basis must have shape ({n}, {n + m}), got {basis.shape}")
    f = f_eval(p, r) if f_value is None else f_value
    normal, S, T = surface_frame(p, r, f)
    scale = np.linalg.norm(basis, axis=1)
    if np.any(scale == 0):
        raise InvalidArgument("basis contains a zero vector")
    off = np.abs(_lorentz(basis, normal[None, :], n)[:, 0]) / scale
    if np.any(off > TANGENT_TOL):
        raise InvalidArgument(f"basis is not tangent to the hypersurface (|<v, n>| = {off.max():.2e})")
    frame = np.vstack([S, T])
    coeffs = _lorentz(basis, frame, n) * _frame_signs(n, m)
    return mean_curvature_in_frame(p, r, coeffs, f)


def random_plane_coefficients(n: int, m: int, rng: np.random.Generator, max_mix: float = 0.999) -> np.ndarray:
    """Random spacelike ``n``-plane as frame coefficients ``(n, n + m - 1)``.

    The slice ``{v2 = 0}`` is tilted towards the timelike directions by a
    matrix ``M`` with ``sigma_max(M)`` uniform in ``[0, max_mix)`` (the
    plane stays spacelike iff ``sigma_max(M) < 1``), then mixed by a random
    well-conditioned invertible matrix.
    """
    M = rng.standard_normal((n, m - 1))
    if m > 1:
        M *= rng.uniform(0, max_mix) / max(np.linalg.norm(M, 2), 1e-300)
    rows = np.hstack([np.eye(n), M])
    q1, _ = np.linalg.qr(rng.standard_normal((n, n)))
    q2, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return q1 @ np.diag(rng.uniform(0.5, 2.0, n)) @ q2 @ rows


def random_spacelike_plane(p: BarrierParams, r: float, rng: np.random.Generator, max_mix: float = 0.999):
    """Random spacelike ``n``-plane of the tangent space as ``n`` ambient rows."""
    _, S, T = surface_frame(p, r)
    return random_plane_coefficients(p.n, p.m, rng, max_mix) @ np.vstack([S, T])


def contains(p: BarrierParams, q: SpacetimeVector) -> bool:
    """``|q.y - eta| <= f(|q.x - xi|) + 1e-12``."""
    if q.x.size != p.n or q.y.size != p.m:
        raise InvalidArgument("point and barrier live in different signatures")
    r = float(np.linalg.norm(q.x - p.xi))
    if r >= p.r_max:
        raise InvalidArgument(f"|x - xi| = {r:.6g} is outside the admissible radius {p.r_max:.6g}")
    w = float(np.linalg.norm(q.y - p.eta))
    return w <= f_eval(p, r) + CONTAIN_TOL


@dataclass
class ComparisonReport:
    boundary_contained: bool
    interior_contained: bool
    worst_violation: float
    worst_boundary_violation: float
    worst_interior_violation: float
    worst_node: int
    interior_violations: int

    @property
    def consistent(self) -> bool:
        """Boundary containment implies interior containment."""
        return (not self.boundary_contained) or self.interior_contained


def comparison_check(u: GraphField, p: BarrierParams) -> ComparisonReport:
    """Compare ``w = |u - eta|`` with ``f(|x - xi|)`` at every node."""
    grid = u.grid
    if u.m != p.m or grid.n != p.n:
        raise InvalidArgument("field and barrier have different signatures")
    r = np.linalg.norm(grid.coords - p.xi, axis=1)
    bad = np.flatnonzero(r >= p.r_max)
    if bad.size:
        raise InvalidArgument(f"node {bad[0]} lies at radius {r[bad[0]]:.6g} >= r_max = {p.r_max:.6g}")
    f = f_eval_many(p, r)
    w = np.linalg.norm(u.values - p.eta, axis=1)
    gap = w - f
    b = grid.is_boundary
    wb = float(gap[b].max())
    wi = float(gap[~b].max()) if (~b).any() else -np.inf
    return ComparisonReport(
        boundary_contained=bool(wb <= CONTAIN_TOL),
        interior_contained=bool(wi <= CONTAIN_TOL),
        worst_violation=float(gap.max()),
        worst_boundary_violation=wb,
        worst_interior_violation=wi,
        worst_node=int(np.argmax(gap)),
        interior_violations=int(np.count_nonzero(gap[~b] > CONTAIN_TOL)),
    )


# -- boundary barrier fitting ------------------------------------------------------


def _boundary_node(grid: StructuredGrid, x0) -> int:
    if np.ndim(x0) == 0:
        node = int(x0)
    else:
        d = np.linalg.norm(grid.coords - np.asarray(x0, float), axis=1)
        node = int(np.argmin(d))
        if d[node] > 1e-12 * max(1.0, np.abs(x0).max()):
            raise InvalidArgument("x0 is not a grid node")
    if not grid.is_boundary[node]:
        raise InvalidArgument(f"node {node} is not on the boundary")
    return node


def _tangential_derivatives(data: BoundaryData, grid: StructuredGrid, node: int, tangents, step=1e-6):
    """Derivatives of phi along each tangent direction at a boundary node, ``(n-1, m)``."""
    x0 = grid.coords[node]
    if data.analytic is not None:
        out = []
        for t in tangents:
            hi = data.analytic((x0 + step * t)[None])[0]
            lo = data.analytic((x0 - step * t)[None])[0]
            out.append((hi - lo) / (2 * step))
        return np.array(out)
    # fall back to the boundary samples: nearest boundary neighbours along each tangent
    pos = {k: i for i, k in enumerate(grid.boundary_nodes)}
    xb = grid.coords[grid.boundary_nodes]
    out = []
    for t in tangents:
        d = xb - x0
        along = d @ t
        perp = np.linalg.norm(d - np.outer(along, t), axis=1)
        fwd = np.flatnonzero((along > 0) & (perp < 0.5 * np.abs(along) + 1e-14))
        bwd = np.flatnonzero((along < 0) & (perp < 0.5 * np.abs(along) + 1e-14))
        if fwd.size == 0 or bwd.size == 0:
            raise InvalidArgument("cannot difference boundary samples at this node")
        kf = fwd[np.argmin(np.linalg.norm(d[fwd], axis=1))]
        kb = bwd[np.argmin(np.linalg.norm(d[bwd], axis=1))]
        hf, hb = np.linalg.norm(d[kf]), np.linalg.norm(d[kb])
        phi0 = data.samples[pos[node]]
        out.append((hb**2 * (data.samples[kf] - phi0) + hf**2 * (phi0 - data.samples[kb])) / (hf * hb * (hf + hb)))
    return np.array(out)


def _bisect(fn, lo, hi, tol=1e-12, max_iter=200):
    flo = fn(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def fit_boundary_barrier(x0, theta, eps: float, Lambda: float, data: BoundaryData, grid: StructuredGrid | None = None) -> BarrierParams:
    """Fit ``Gamma_{1/eps, Lambda}`` through ``(x0, phi(x0))`` tangent to the boundary data.

    The apex sits at distance ``eps`` outside the domain,
    ``xi = x0 - eps (b t + nu) / sqrt(1 + b^2)`` with ``nu`` the inward
    normal and ``t`` the tangential direction of ``D'phi . theta``, and
    ``eta = phi(x0) - f(eps) theta``.  ``b`` solves
    ``f'(eps) b / sqrt(1 + b^2) = a`` with ``a = |D'phi . theta|``.
    """
    grid = grid or data.grid
    if not eps > 0:
        raise InvalidArgument("eps must be positive")
    if not Lambda < 0:
        raise InvalidArgument("fitting needs Lambda < 0")
    theta = np.atleast_1d(np.asarray(theta, float))
    if theta.size != data.m or not np.isclose(np.linalg.norm(theta), 1.0, atol=1e-12):
        raise InvalidArgument("theta must be a unit vector in R^m")
    node = _boundary_node(grid, x0)
    x0 = grid.coords[node]
    nu, tangents = grid.boundary_frame(node)
    dphi = _tangential_derivatives(data, grid, node, tangents)  # (n-1, m)
    cov = (dphi @ theta) @ tangents  # tangential vector D'phi . theta
    a = float(np.linalg.norm(cov))
    t_hat = cov / a if a > 0 else tangents[0]

    params = BarrierParams(1.0 / eps, Lambda, np.zeros(grid.n), np.zeros(data.m))
    if eps >= params.r_max:
        raise InfeasibleFit("eps exceeds the admissible radius; choose a smaller eps")
    fp = float(f_prime(params, eps))
    if a >= fp:
        raise InfeasibleFit(f"boundary slope a = {a:.6g} >= f'(eps) = {fp:.6g}; choose a smaller eps")
    if a == 0:
        b = 0.0
    else:
        eq = lambda b: fp * b / np.sqrt(b * b + 1.0) - a  # noqa: E731
        hi = 1.0
        while eq(hi) <= 0:
            hi *= 2.0
        b = _bisect(eq, 0.0, hi)
    xi = x0 - eps * (b * t_hat + nu) / np.sqrt(1.0 + b * b)
    pos = int(np.flatnonzero(grid.boundary_nodes == node)[0])
    phi0 = data.analytic(x0[None])[0] if data.analytic is not None else data.samples[pos]
    f_eps = f_eval(params, eps)
    eta = phi0 - f_eps * theta
    fitted = BarrierParams(1.0 / eps, Lambda, xi, eta)
    fitted.tangency_residual = _tangency_residual(fitted, data, grid, node, tangents)
    return fitted


def _tangency_residual(p: BarrierParams, data, grid, node, tangents, step=1e-5) -> float:
    """``max |D'(w^2) - D'(f^2)|`` over tangent directions, by central differences."""
    if data.analytic is None:
        dphi = _tangential_derivatives(data, grid, node, tangents)
        x0 = grid.coords[node]
        pos = int(np.flatnonzero(grid.boundary_nodes == node)[0])
        y0 = data.samples[pos] - p.eta
        res = []
        for t, dp in zip(tangents, dphi):
            dw2 = 2.0 * dp @ y0
            r0 = np.linalg.norm(x0 - p.xi)
            df2 = 2.0 * f_eval(p, r0) * f_prime(p, r0) * (x0 - p.xi) @ t / r0
            res.append(abs(dw2 - df2))
        return float(max(res))
    x0 = grid.coords[node]

    def w2(x):
        return float(np.sum((data.analytic(x[None])[0] - p.eta) ** 2))

    def f2(x):
        return f_eval(p, np.linalg.norm(x - p.xi)) ** 2

    res = []
    for t in tangents:
        dw = (w2(x0 + step * t) - w2(x0 - step * t)) / (2 * step)
        df = (f2(x0 + step * t) - f2(x0 - step * t)) / (2 * step)
        res.append(abs(dw - df))
    return float(max(res))
