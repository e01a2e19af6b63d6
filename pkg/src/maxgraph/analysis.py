"""Diagnostics evaluated at a solved state: variations of volume, probes and curvature bounds."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import lorentz_core as lc
from .boundary_data import BoundaryData, extend_to_interior
from .domain_grid import GraphField, StructuredGrid, gradient_at, hessian_at
from .errors import InvalidArgument, PreconditionViolation
from .solver import (
    SolverConfig,
    assemble_jacobi,
    continuity_solve,
    discrete_volume,
    interior_dofs,
    min_margin,
    newton_solve,
    residual_div,
    residual_nondiv,
    volume_gradient,
)

MARGIN_FACTOR = 0.5
VOLUME_SLACK = 1e-12


def worker_count() -> int:
    """Worker threads for probe trials, capped by ``MAXGRAPH_THREADS``."""
    cap = os.environ.get("MAXGRAPH_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise InvalidArgument(f"MAXGRAPH_THREADS must be an integer, got {cap!r}") from None
    return n


def _map_trials(fn, seeds):
    workers = worker_count()
    if workers == 1 or len(seeds) < 2:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, seeds))


# -- perturbations -----------------------------------------------------------------


@dataclass
class PerturbationField:
    grid: StructuredGrid
    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[0] != self.grid.num_nodes:
            raise InvalidArgument("perturbation needs one row per node")
        if np.any(w[self.grid.is_boundary] != 0):
            raise InvalidArgument("perturbation must vanish on boundary nodes")
        self.w = w

    @classmethod
    def zeros(cls, grid: StructuredGrid, m: int) -> "PerturbationField":
        return cls(grid, np.zeros((grid.num_nodes, m)))


def smooth_perturbation(grid: StructuredGrid, m: int, rng: np.random.Generator, modes: int = 3) -> PerturbationField:
    """Low-frequency trigonometric field times the boundary bump, sup-normalised to 1."""
    x = grid.coords
    lo = x.min(axis=0)
    span = np.maximum(x.max(axis=0) - lo, 1e-300)
    xs = (x - lo) / span
    bump = grid.bump()
    w = np.zeros((grid.num_nodes, m))
    for a in range(m):
        acc = np.full(grid.num_nodes, rng.normal())
        for _ in range(modes):
            k = rng.integers(0, 3, size=grid.n)
            acc += rng.normal() * np.cos(np.pi * (xs @ k) + rng.uniform(0, 2 * np.pi))
        w[:, a] = acc * bump
    w[grid.is_boundary] = 0.0
    s = np.abs(w).max()
    if s > 0:
        w /= s
    return PerturbationField(grid, w)


def scale_to_margin(u: GraphField, w: PerturbationField, factor: float = MARGIN_FACTOR, iters: int = 30) -> float:
    """Largest ``s`` in ``[0, 1]`` (by bisection) with ``margin(u + s w) >= factor * margin(u)``."""
    grid = u.grid
    floor = factor * min_margin(grid, u.values)
    if not floor > 0:
        raise PreconditionViolation("state is not spacelike")

    def ok(s):
        return min_margin(grid, u.values + s * w.w) >= floor

    if ok(1.0):
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# -- volume and its variations -------------------------------------------------------


def volume(u: GraphField) -> float:
    """Discrete volume: quadrature of ``sqrt(det g)`` over the grid's corner simplices."""
    return discrete_volume(u)


def _check_w(u, w):
    if isinstance(w, PerturbationField):
        w = w.w
    w = np.asarray(w, float).reshape(u.values.shape)
    if np.any(w[u.grid.is_boundary] != 0):
        raise InvalidArgument("perturbation must vanish on boundary nodes")
    return w


def first_variation(u: GraphField, w) -> float:
    """Directional derivative of the discrete volume at ``u`` along ``w``."""
    w = _check_w(u, w)
    return float(np.sum(volume_gradient(u.grid, u.values) * w))


def second_variation(u: GraphField, w, L=None) -> float:
    """``<L w, w>`` with ``L`` the Jacobi operator (Hessian of the discrete volume)."""
    w = _check_w(u, w)
    if L is None:
        L = assemble_jacobi(u)
    wi = w.ravel()[interior_dofs(u.grid, u.m)]
    return float(wi @ (L @ wi))


def first_variation_fd(u: GraphField, w, eps: float = 1e-5) -> float:
    w = _check_w(u, w)
    plus = volume(GraphField(u.grid, u.values + eps * w))
    minus = volume(GraphField(u.grid, u.values - eps * w))
    return (plus - minus) / (2 * eps)


def second_variation_fd(u: GraphField, w, eps: float = 1e-4) -> float:
    w = _check_w(u, w)
    plus = volume(GraphField(u.grid, u.values + eps * w))
    minus = volume(GraphField(u.grid, u.values - eps * w))
    return (plus - 2.0 * volume(u) + minus) / (eps * eps)


# -- probes --------------------------------------------------------------------------


def _child_rngs(seed, trials):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(trials)]


def volume_maximality_probe(u: GraphField, trials: int = 100, seed: int = 0) -> dict:
    """Compare ``volume(u + w)`` with ``volume(u)`` for random admissible perturbations."""
    base = volume(u)

    def trial(rng):
        w = smooth_perturbation(u.grid, u.m, rng)
        s = scale_to_margin(u, w)
        if s == 0.0:
            return None
        s *= rng.uniform(0.1, 1.0)
        return volume(GraphField(u.grid, u.values + s * w.w)) - base

    deltas = _map_trials(trial, _child_rngs(seed, trials))
    done = np.array([d for d in deltas if d is not None])
    skipped = len(deltas) - done.size
    violations = int(np.count_nonzero(done > VOLUME_SLACK))
    strict = int(np.count_nonzero(done < 0))
    return {
        "probe": "volume_maximality",
        "trials": trials,
        "skipped": skipped,
        "violations": violations,
        "strict_decreases": strict,
        "max_volume_change": float(done.max()) if done.size else float("nan"),
        "passed": bool(done.size > 0 and violations == 0 and strict == done.size),
    }


def second_variation_probe(u: GraphField, trials: int = 100, seed: int = 0, fd_trials: int = 5) -> dict:
    """Rayleigh quotients of the Jacobi operator and agreement with the finite-difference oracle."""
    L = assemble_jacobi(u)
    Idof = interior_dofs(u.grid, u.m)
    rngs = _child_rngs(seed, trials + fd_trials)
    rq = []
    for rng in rngs[:trials]:
        x = rng.standard_normal(Idof.size)
        rq.append(float(x @ (L @ x)) / float(x @ x))
    fd_err = 0.0
    for rng in rngs[trials:]:
        # sup-normalised w keeps <Lw, w> well above the rounding floor of the difference quotient
        w = smooth_perturbation(u.grid, u.m, rng)
        exact = second_variation(u, w, L)
        fd_err = max(fd_err, abs(second_variation_fd(u, w) - exact) / abs(exact))
    rq = np.array(rq)
    return {
        "probe": "second_variation",
        "trials": trials,
        "max_rayleigh": float(rq.max()) if rq.size else float("nan"),
        "fd_relative_error": fd_err,
        "passed": bool(rq.size > 0 and rq.max() < 0 and fd_err <= 1e-5),
    }


def first_variation_probe(u: GraphField, trials: int = 20, seed: int = 0, tol: float = 1e-8) -> dict:
    """``|delta Vol(w)| <= tol * |w|`` at a solved state."""
    worst = 0.0
    for rng in _child_rngs(seed, trials):
        w = smooth_perturbation(u.grid, u.m, rng)
        worst = max(worst, abs(first_variation(u, w)) / np.linalg.norm(w.w))
    return {"probe": "first_variation", "trials": trials, "max_ratio": worst, "passed": bool(worst <= tol)}


def uniqueness_probe(boundary: BoundaryData, grid: StructuredGrid | None = None, cfg: SolverConfig | None = None, tol: float = 1e-8) -> dict:
    """Solve by three routes and report pairwise sup-norm differences.

    Routes: continuation with the configured step count, continuation with a
    different step count, and damped Newton from the harmonic extension.
    """
    grid = grid or boundary.grid
    cfg = cfg or SolverConfig()
    alt = SolverConfig(**{**asdict(cfg), "homotopy_steps_init": cfg.homotopy_steps_init + 7})
    routes = {
        f"continuation_{cfg.homotopy_steps_init}": lambda: continuity_solve(boundary, grid, cfg).u,
        f"continuation_{alt.homotopy_steps_init}": lambda: continuity_solve(boundary, grid, alt).u,
        "newton_from_extension": lambda: newton_solve(extend_to_interior(boundary, grid), boundary, cfg),
    }
    sols = {name: fn().values for name, fn in routes.items()}
    names = list(sols)
    diffs = {}
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            diffs[f"{names[i]}|{names[j]}"] = float(np.abs(sols[names[i]] - sols[names[j]]).max())
    worst = max(diffs.values())
    return {
        "probe": "uniqueness",
        "routes": names,
        "pairwise_sup_diff": diffs,
        "max_sup_diff": worst,
        "passed": bool(worst <= tol),
        "solutions": sols,
    }


# -- gradient, ellipticity and curvature -----------------------------------------------


@dataclass
class DiagnosticsReport:
    volume: float
    residual_inf: float
    sigma_max_Du: float
    mu: float
    sum_gii_max: float
    ellipticity_bound: float
    interior_energy_max: float
    boundary_energy_max: float
    ricci_min_eig: float
    second_variation_max_rayleigh: float

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in asdict(self).items()}

    def checks(self, tol: float = 1e-8) -> dict:
        return {
            "gradient_bound": bool(self.sigma_max_Du < 1.0),
            "ellipticity": bool(self.sum_gii_max <= self.ellipticity_bound + tol),
            "max_principle": bool(self.interior_energy_max <= self.boundary_energy_max + tol),
        }


def _nodal_geometry(u: GraphField):
    J = gradient_at(u)
    marg = lc.margins(J)
    k = int(np.argmin(marg))
    if not marg[k] > 0:
        raise PreconditionViolation(f"field is not spacelike at node {k}", node=k, margin=float(marg[k]))
    _, g_inv, _ = lc.metric_batch(J)
    return J, g_inv, np.sqrt(np.clip(1.0 - marg, 0.0, None))


def interior_residual_inf(u: GraphField) -> float:
    r = residual_div(u)
    return float(np.abs(r[~u.grid.is_boundary]).max()) if (~u.grid.is_boundary).any() else 0.0


def gradient_ellipticity_report(
    u: GraphField,
    rayleigh_trials: int = 20,
    seed: int = 0,
    ricci: bool = True,
) -> DiagnosticsReport:
    """Gradient bound, ellipticity bound and the graph-energy maximum principle at ``u``.

    ``mu`` is taken from boundary nodes only; the bounds are evaluated at all nodes.
    """
    grid = u.grid
    J, g_inv, sig = _nodal_geometry(u)
    b = grid.is_boundary
    mu = 1.0 - float(sig[b].max())
    sum_gii = np.trace(g_inv, axis1=1, axis2=2)
    energy = np.einsum("eia,eij,eja->e", J, g_inv, J)
    L = assemble_jacobi(u)
    rq = -np.inf
    if L.shape[0]:
        for rng in _child_rngs(seed, rayleigh_trials):
            x = rng.standard_normal(L.shape[0])
            rq = max(rq, float(x @ (L @ x)) / float(x @ x))
    ric = ricci_min_eigenvalue(u) if (ricci and (~b).any()) else float("nan")
    return DiagnosticsReport(
        volume=volume(u),
        residual_inf=interior_residual_inf(u),
        sigma_max_Du=float(sig.max()),
        mu=mu,
        sum_gii_max=float(sum_gii.max()),
        ellipticity_bound=grid.n / (mu * (2.0 - mu)) if mu > 0 else float("inf"),
        interior_energy_max=float(energy[~b].max()) if (~b).any() else 0.0,
        boundary_energy_max=float(energy[b].max()),
        ricci_min_eig=ric,
        second_variation_max_rayleigh=rq,
    )


def ricci_tensor(u: GraphField, nodes=None, mean_curvature_term: bool = False):
    """Ricci tensor of the induced metric from the Gauss equation, in an orthonormal frame.

    In graph coordinates the second fundamental form is represented by
    ``h_ij = d_i d_j u`` with normal inner product ``-h^T Q h'``,
    ``Q = (I - J^T J)^{-1}``, giving ``Ric_ik = g^{jl} h_ij^T Q h_kl``.  With
    ``mean_curvature_term`` the term ``<H, A>`` is included as well, which
    vanishes only up to discretisation error.  Returns ``(nodes, Ric)`` with
    ``Ric`` of shape ``(len(nodes), n, n)``.
    """
    grid = u.grid
    if nodes is None:
        nodes = grid.interior_nodes
    nodes = np.asarray(nodes)
    if np.any(grid.is_boundary[nodes]):
        raise InvalidArgument("Ricci tensor is evaluated at interior nodes only")
    J = gradient_at(u)[nodes]
    H = hessian_at(u)[nodes]  # (k, n, n, m)
    g, g_inv, _ = lc.metric_batch(J)
    m = u.m
    Q = np.linalg.inv(np.eye(m)[None] - np.einsum("eia,eib->eab", J, J))
    QH = np.einsum("eab,eklb->ekla", Q, H)
    ric = np.einsum("ejl,eija,ekla->eik", g_inv, H, QH)
    if mean_curvature_term:
        mc = np.einsum("ejl,ejla->ea", g_inv, H)
        ric = ric - np.einsum("ea,eika->eik", mc, QH)
    # orthonormal frame: g^{-1/2} Ric g^{-1/2}
    w, V = np.linalg.eigh(g)
    s = np.einsum("eij,ej,ekj->eik", V, 1.0 / np.sqrt(w), V)
    ric = np.einsum("eij,ejk,ekl->eil", s, ric, s)
    return nodes, 0.5 * (ric + np.transpose(ric, (0, 2, 1)))


def ricci_min_eigenvalue(u: GraphField, nodes=None, mean_curvature_term: bool = False) -> float:
    _, ric = ricci_tensor(u, nodes, mean_curvature_term)
    return float(np.linalg.eigvalsh(ric)[:, 0].min()) if ric.size else float("nan")


def ricci_check(u: GraphField, newton_tol: float = 1e-10, stride: int = 1, mean_curvature_term: bool = False) -> float:
    """Minimum Ricci eigenvalue over every ``stride``-th interior node of a solved state."""
    res = interior_residual_inf(u)
    if res > 100 * newton_tol:
        raise PreconditionViolation(f"state is not solved (residual {res:.3e} > {100 * newton_tol:.1e})")
    nodes = u.grid.interior_nodes[::max(1, int(stride))]
    return ricci_min_eigenvalue(u, nodes, mean_curvature_term)


def nondivergence_residual_inf(u: GraphField) -> float:
    r = residual_nondiv(u)
    return float(np.abs(r).max())


