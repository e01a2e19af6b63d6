"""Discrete maximal-graph equation and its continuity-method solver.

The discrete problem is variational.  The volume

    V(u) = sum_e w_e sqrt(det(I - J_e J_e^T))

is summed over the corner simplices of the grid (``J_e`` is the P1 gradient
on simplex ``e``).  Its derivative with respect to an interior nodal value
is the cell-integrated divergence ``div(g^{-1} sqrt(det g) grad u)``, so

    residual_div = dV/du / control_volume

is a conservative finite-volume discretisation whose linearisation,
the Hessian of ``V``, is symmetric by construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import lorentz_core as lc
from .boundary_data import BoundaryData, acausality_margin, extend_to_interior
from .domain_grid import (
    GraphField,
    StructuredGrid,
    element_gradients,
    divergence_from_fluxes,
    face_gradients,
    gradient_at,
    hessian_at,
    maximal_coefficient,
)
from .errors import (
    AcausalityViolation,
    InvalidArgument,
    LinearSolveError,
    NonConvergence,
    PreconditionViolation,
)

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    homotopy_steps_init: int = 10
    step_halving_limit: int = 8
    spacelike_slack_delta: float = 0.05
    linear_tol: float = 1e-12
    jacobian_mode: str = "analytic"
    linear_solver: str = "cg"

    def __post_init__(self):
        for name in ("newton_tol", "linear_tol"):
            if not getattr(self, name) > 0:
                raise InvalidArgument(f"{name} must be positive")
        if not 0 < self.spacelike_slack_delta < 1:
            raise InvalidArgument("spacelike_slack_delta must lie in (0, 1)")
        if self.max_newton_iters < 1 or self.homotopy_steps_init < 1 or self.step_halving_limit < 0:
            raise InvalidArgument("iteration counts must be positive")
        if self.jacobian_mode not in ("analytic", "finite_difference_check"):
            raise InvalidArgument(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if self.linear_solver not in ("cg", "direct"):
            raise InvalidArgument(f"unknown linear_solver {self.linear_solver!r}")

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidArgument(f"unknown solver options: {sorted(extra)}")
        return cls(**d)


@dataclass
class SolveState:
    t: float
    u: GraphField
    residual_inf: float
    min_margin: float
    newton_iters_used: int
    history: list = field(default_factory=list)


# -- discrete volume and derivatives ---------------------------------------------


def _element_J(grid: StructuredGrid, values: np.ndarray, check=True):
    J = element_gradients(grid, values)
    if check:
        marg = lc.margins(J)
        k = int(np.argmin(marg))
        if not marg[k] > 0:
            node = int(grid.elem_base[k])
            raise PreconditionViolation(
                f"non-spacelike gradient next to node {node} (margin {marg[k]:.3e})",
                node=node,
                margin=float(marg[k]),
            )
    return J


def min_margin(grid: StructuredGrid, values: np.ndarray) -> float:
    """Worst spacelike margin over the simplex gradients the discrete volume sees."""
    return float(lc.margins(element_gradients(grid, values)).min())


def discrete_volume(u: GraphField) -> float:
    grid = u.grid
    J = _element_J(grid, u.values)
    return float(grid.elem_w @ lc.volume_density(J))


def volume_gradient(grid: StructuredGrid, values: np.ndarray) -> np.ndarray:
    """Exact derivative of the discrete volume with respect to every nodal value."""
    J = _element_J(grid, values)
    _, dF = lc.volume_density_grad(J)
    local = grid.elem_w[:, None, None] * np.einsum("eik,eia->eka", grid.elem_D, dF)
    N, m = grid.num_nodes, values.shape[1]
    out = np.zeros((N, m))
    for a in range(m):
        out[:, a] -= np.bincount(grid.elem_base, local[:, :, a].sum(axis=1), minlength=N)
        for k in range(grid.n):
            out[:, a] += np.bincount(grid.elem_nbr[:, k], local[:, k, a], minlength=N)
    return out


def volume_hessian(grid: StructuredGrid, values: np.ndarray) -> sp.csr_matrix:
    """Hessian of the discrete volume over all ``N * m`` nodal unknowns.

    Unknown ``(node, a)`` sits at row ``node * m + a``.
    """
    J = _element_J(grid, values)
    H4 = lc.volume_density_hessian(J)
    n, m = grid.n, values.shape[1]
    D = grid.elem_D
    B = np.concatenate([-D.sum(axis=2, keepdims=True), D], axis=2)  # (E, n, n+1)
    HB = np.einsum("eiakb,ekd->eiadb", H4, B)
    local = np.einsum("eic,eiadb->ecadb", B * grid.elem_w[:, None, None], HB)
    nodes = np.concatenate([grid.elem_base[:, None], grid.elem_nbr], axis=1)
    dof = (nodes[:, :, None] * m + np.arange(m)[None, None, :]).reshape(nodes.shape[0], -1)
    size = dof.shape[1]
    rows = np.repeat(dof, size, axis=1).ravel()
    cols = np.tile(dof, (1, size)).ravel()
    Nm = grid.num_nodes * m
    H = sp.coo_matrix((local.reshape(-1), (rows, cols)), shape=(Nm, Nm)).tocsr()
    return H


def interior_dofs(grid: StructuredGrid, m: int) -> np.ndarray:
    I = grid.interior_nodes
    return (I[:, None] * m + np.arange(m)[None, :]).ravel()


def boundary_dofs(grid: StructuredGrid, m: int) -> np.ndarray:
    B = grid.boundary_nodes
    return (B[:, None] * m + np.arange(m)[None, :]).ravel()


# -- residuals -----------------------------------------------------------------


def residual_div(u: GraphField, boundary: BoundaryData | None = None) -> np.ndarray:
    """Divergence-form residual ``(N, m)``.

    Interior rows: ``dV/du`` divided by the node's control volume.
    Boundary rows: ``u - phi`` when ``boundary`` is given, else zero.
    """
    grid = u.grid
    r = volume_gradient(grid, u.values) / grid.control_volume[:, None]
    if boundary is None:
        r[grid.is_boundary] = 0.0
    else:
        r[grid.boundary_nodes] = u.values[grid.boundary_nodes] - boundary.samples
    return r


def _nodal_spacelike(u: GraphField):
    J = gradient_at(u)
    marg = lc.margins(J)
    k = int(np.argmin(marg))
    if not marg[k] > 0:
        raise PreconditionViolation(f"field is not spacelike at node {k} (margin {marg[k]:.3e})", node=k, margin=float(marg[k]))
    return J


def residual_nondiv(u: GraphField) -> np.ndarray:
    """``sum_ij g^{ij} d_i d_j u^a`` by central differences; boundary rows zero."""
    grid = u.grid
    J = _nodal_spacelike(u)
    _, g_inv, _ = lc.metric_batch(J)
    H = hessian_at(u)
    out = np.einsum("eij,eija->ea", g_inv, np.nan_to_num(H))
    out[grid.is_boundary] = 0.0
    return out


def conservation_identity_residual(u: GraphField) -> np.ndarray:
    """``sum_i d_i (g^{ij} sqrt(det g))`` for each ``j``, shape ``(N, n)``.

    Finite-volume divergence of the coefficient columns, with the coefficient
    evaluated from the face gradients of ``u``.  Face gradients use central
    stencils only, so no one-sided boundary differences enter.
    """
    grid = u.grid
    _nodal_spacelike(u)
    p, q, grad, normal, meas, vol = face_gradients(u)
    marg = lc.margins(grad)
    k = int(np.argmin(marg))
    if not marg[k] > 0:
        raise PreconditionViolation(f"non-spacelike face gradient next to node {p[k]}", node=int(p[k]))
    Cf = maximal_coefficient(grad)
    flux = meas[:, None] * np.einsum("fi,fij->fj", normal, Cf)
    return divergence_from_fluxes(grid.num_nodes, p, q, flux, vol, grid.is_boundary)


# -- Jacobi operator -----------------------------------------------------------


def assemble_jacobi(u: GraphField) -> sp.csr_matrix:
    """Jacobi operator on interior unknowns: the Hessian of the discrete volume.

    This is the linearisation of ``control_volume * residual_div``; it is
    symmetric, and negative definite at maximal states.
    """
    grid = u.grid
    H = volume_hessian(grid, u.values)
    I = interior_dofs(grid, u.m)
    return H[I][:, I].tocsr()


def fd_jacobian(u: GraphField, eps: float = 1e-6) -> np.ndarray:
    """Dense central-difference Jacobian of ``dV/du`` on interior unknowns (small grids only)."""
    grid = u.grid
    m = u.m
    I = interior_dofs(grid, m)
    out = np.empty((I.size, I.size))
    base = u.values.ravel()
    for c, k in enumerate(I):
        vp = base.copy()
        vm = base.copy()
        vp[k] += eps
        vm[k] -= eps
        gp = volume_gradient(grid, vp.reshape(-1, m)).ravel()[I]
        gm = volume_gradient(grid, vm.reshape(-1, m)).ravel()[I]
        out[:, c] = (gp - gm) / (2.0 * eps)
    return out


def jacobian_check(u: GraphField, eps: float = 1e-6) -> float:
    """Relative max-norm discrepancy between analytic and finite-difference Jacobians."""
    L = assemble_jacobi(u).toarray()
    F = fd_jacobian(u, eps)
    return float(np.abs(L - F).max() / max(np.abs(L).max(), 1e-300))


# -- linear solves ---------------------------------------------------------------


def _solve_spd(A: sp.csr_matrix, b: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Jacobi-preconditioned CG; falls back to a sparse direct solve if CG
    stalls (``A`` may be indefinite away from maximal states).
    """
    if b.size == 0:
        return b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b)
    if cfg.linear_solver == "cg":
        d = A.diagonal()
        if np.all(d > 0):
            M = sp.diags(1.0 / d)
            x, info = spla.cg(A, b, rtol=cfg.linear_tol, atol=0.0, maxiter=20 * b.size, M=M)
            if info == 0 and np.linalg.norm(A @ x - b) <= 10 * cfg.linear_tol * bnorm:
                return x
        log.debug("CG did not converge; using direct solve")
    x = spla.spsolve(A.tocsc(), b)
    res = np.linalg.norm(A @ x - b)
    if not np.all(np.isfinite(x)) or res > 1e-6 * bnorm:
        raise LinearSolveError(f"linear solve failed (relative residual {res / bnorm:.3e})", residual=res)
    return x


# -- Newton ------------------------------------------------------------------------


def _newton(grid, values, boundary: BoundaryData, cfg: SolverConfig):
    m = values.shape[1]
    values = boundary.full_values(values)
    I = grid.interior_nodes
    Idof = interior_dofs(grid, m)
    ref = min_margin(grid, values)
    if not ref > 0:
        raise PreconditionViolation(f"initial guess is not spacelike (margin {ref:.3e})", margin=ref)
    floor = cfg.spacelike_slack_delta * ref
    cv = grid.control_volume[I][:, None]
    for it in range(cfg.max_newton_iters + 1):
        grad = volume_gradient(grid, values)
        res_inf = float(np.abs(grad[I] / cv).max()) if I.size else 0.0
        if res_inf <= cfg.newton_tol:
            return values, it, res_inf
        if it == cfg.max_newton_iters:
            break
        L = assemble_jacobi(GraphField(grid, values))
        if cfg.jacobian_mode == "finite_difference_check" and it == 0:
            err = jacobian_check(GraphField(grid, values))
            if err > 1e-6:
                raise NonConvergence(f"analytic Jacobian disagrees with finite differences ({err:.2e})")
        step = _solve_spd(-L, grad.ravel()[Idof], cfg)
        delta = np.zeros(values.size)
        delta[Idof] = step
        delta = delta.reshape(values.shape)
        alpha = 1.0
        for _ in range(cfg.step_halving_limit + 1):
            trial = values + alpha * delta
            if min_margin(grid, trial) >= floor:
                break
            alpha *= 0.5
        else:
            state = SolveState(np.nan, GraphField(grid, values), res_inf, min_margin(grid, values), it)
            raise NonConvergence("step halving limit exceeded while keeping the graph spacelike", state=state)
        values = trial
    state = SolveState(np.nan, GraphField(grid, values), res_inf, min_margin(grid, values), cfg.max_newton_iters)
    raise NonConvergence(
        f"Newton did not reach {cfg.newton_tol:g} in {cfg.max_newton_iters} iterations (residual {res_inf:.3e})",
        state=state,
    )


def newton_solve(u0: GraphField, boundary: BoundaryData, cfg: SolverConfig | None = None) -> GraphField:
    """Damped Newton on ``residual_div`` from ``u0`` with Dirichlet data ``boundary``."""
    cfg = cfg or SolverConfig()
    values, _, _ = _newton(u0.grid, u0.values, boundary, cfg)
    return GraphField(u0.grid, values)


def _tangent(grid, values, phi_full, m):
    """Derivative of the solution branch with respect to the homotopy parameter."""
    H = volume_hessian(grid, values)
    Idof = interior_dofs(grid, m)
    Bdof = boundary_dofs(grid, m)
    phiB = phi_full.ravel()[Bdof]
    rhs = H[Idof][:, Bdof] @ phiB
    v = np.zeros(values.size)
    v[Bdof] = phiB
    v[Idof] = _solve_spd(-H[Idof][:, Idof].tocsr(), rhs, SolverConfig(linear_tol=1e-10))
    return v.reshape(values.shape)


def continuity_solve(
    boundary: BoundaryData,
    grid: StructuredGrid | None = None,
    cfg: SolverConfig | None = None,
    progress=None,
) -> SolveState:
    """Follow boundary data ``t * phi`` from ``t = 0`` (``u = 0``) to ``t = 1``.

    Each step predicts along the solution tangent and corrects with Newton.
    A failed step halves the increment, at most ``step_halving_limit`` times
    in total.  ``progress`` receives one dict per accepted step.
    """
    cfg = cfg or SolverConfig()
    grid = grid or boundary.grid
    mu0 = acausality_margin(boundary, grid)
    if not mu0 > 0:
        raise AcausalityViolation(f"boundary data is not acausal (mu0 = {mu0:.6g})", mu0=mu0)
    m = boundary.m
    phi_full = boundary.full_values()
    values = np.zeros((grid.num_nodes, m))
    t = 0.0
    dt = 1.0 / cfg.homotopy_steps_init
    halvings = 0
    total_iters = 0
    history = []
    res_inf = 0.0
    while t < 1.0:
        t_new = 1.0 if t + dt >= 1.0 - 1e-14 else t + dt
        target = boundary.scaled(t_new)
        try:
            v = _tangent(grid, values, phi_full, m)
            guess = target.full_values(values + (t_new - t) * v)
            if not min_margin(grid, guess) > 0:
                guess = target.full_values(values)
            new_values, iters, res_inf = _newton(grid, guess, target, cfg)
        except (NonConvergence, PreconditionViolation, LinearSolveError) as exc:
            halvings += 1
            log.info("homotopy step t=%.6g -> %.6g failed (%s); halving", t, t_new, exc)
            if halvings > cfg.step_halving_limit:
                state = SolveState(t, GraphField(grid, values), res_inf, min_margin(grid, values), total_iters, history)
                raise NonConvergence(
                    f"continuation stalled at t = {t:.6g}", state=state, last_good_t=t
                ) from exc
            dt *= 0.5
            continue
        values = new_values
        t = t_new
        total_iters += iters
        marg = min_margin(grid, values)
        rec = {"t": t, "residual_inf": res_inf, "min_margin": marg, "iters": iters}
        history.append(rec)
        if progress is not None:
            progress(rec)
    return SolveState(1.0, GraphField(grid, values), res_inf, min_margin(grid, values), total_iters, history)


def solve_from_extension(boundary: BoundaryData, cfg: SolverConfig | None = None) -> GraphField:
    """Direct Newton at ``t = 1`` starting from the harmonic extension."""
    u0 = extend_to_interior(boundary)
    return newton_solve(u0, boundary, cfg)


def state_dict(state: SolveState) -> dict:
    return {
        "t": state.t,
        "residual_inf": state.residual_inf,
        "min_margin": state.min_margin,
        "newton_iters_used": state.newton_iters_used,
    }
