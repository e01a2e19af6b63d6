"""Boundary data: presets, discrete acausality margin and harmonic extension."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .domain_grid import GraphField, StructuredGrid
from .errors import InvalidArgument, LinearSolveError

PRESETS = ("constant", "affine", "sinusoidal", "catenoid_trace")


@dataclass
class BoundaryData:
    """Boundary values ``phi`` sampled on the boundary nodes of ``grid``.

    ``samples`` has one row per entry of ``grid.boundary_nodes``.
    """

    grid: StructuredGrid
    samples: np.ndarray
    analytic: Callable | None = None
    c2_bound_kappa: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.shape[0] != self.grid.boundary_nodes.size:
            raise InvalidArgument("need exactly one sample per boundary node")
        if not np.all(np.isfinite(s)):
            raise InvalidArgument("boundary samples must be finite")
        self.samples = s
        if not self.c2_bound_kappa:
            self.c2_bound_kappa = estimate_kappa(self.grid, s)

    @property
    def m(self) -> int:
        return self.samples.shape[1]

    def scaled(self, t: float) -> "BoundaryData":
        """Data ``t * phi``; samples are scaled elementwise, so bit-exact."""
        fn = None
        if self.analytic is not None:
            base = self.analytic
            fn = lambda x: t * base(x)  # noqa: E731
        return BoundaryData(self.grid, t * self.samples, fn, t * self.c2_bound_kappa)

    def full_values(self, interior=None) -> np.ndarray:
        """Nodal array with ``interior`` (or zeros) inside and the samples on the boundary."""
        N = self.grid.num_nodes
        out = np.zeros((N, self.m)) if interior is None else np.array(interior, dtype=float, copy=True)
        out[self.grid.boundary_nodes] = self.samples
        return out


def from_function(grid: StructuredGrid, fn: Callable) -> BoundaryData:
    """Sample ``fn(coords) -> (N, m)`` on the boundary nodes."""
    xb = grid.coords[grid.boundary_nodes]
    vals = np.asarray(fn(xb), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    return BoundaryData(grid, vals, analytic=fn)


def preset(grid: StructuredGrid, name: str, m: int = 1, **params) -> BoundaryData:
    """Named boundary data.

    constant        ``value``: list of m numbers (default zeros)
    affine          ``A``: n x m matrix, optional ``offset``; phi = x @ A + offset
    sinusoidal      ``amplitude``, ``frequency``, optional ``phase`` (length m);
                    component a is ``amp_a sin(freq_a * x_{a mod n} + phase_a)``
    catenoid_trace  ``K``: phi = K asinh(r / K) with r = |x|; m must be 1
    """
    n = grid.n
    if name == "constant":
        value = np.broadcast_to(np.asarray(params.get("value", np.zeros(m)), float), (m,)).copy()
        fn = lambda x: np.tile(value, (x.shape[0], 1))  # noqa: E731
    elif name == "affine":
        A = np.asarray(params["A"], dtype=float).reshape(n, m)
        off = np.broadcast_to(np.asarray(params.get("offset", 0.0), float), (m,)).copy()
        fn = lambda x: x @ A + off  # noqa: E731
    elif name == "sinusoidal":
        amp = np.broadcast_to(np.asarray(params["amplitude"], float), (m,)).copy()
        freq = np.broadcast_to(np.asarray(params["frequency"], float), (m,)).copy()
        phase = np.broadcast_to(np.asarray(params.get("phase", 0.0), float), (m,)).copy()
        axis = np.arange(m) % n
        fn = lambda x: amp * np.sin(freq * x[:, axis] + phase)  # noqa: E731
    elif name == "catenoid_trace":
        if m != 1:
            raise InvalidArgument("catenoid_trace is scalar (m = 1)")
        K = float(params.get("K", 1.0))
        if K <= 0:
            raise InvalidArgument("catenoid_trace needs K > 0")
        fn = lambda x: (K * np.arcsinh(np.linalg.norm(x, axis=1) / K))[:, None]  # noqa: E731
    else:
        raise InvalidArgument(f"unknown boundary preset {name!r}; choose from {PRESETS}")
    return from_function(grid, fn)


def _boundary_neighbours(grid: StructuredGrid):
    """Triples (prev, node, next) of boundary nodes along straight edges or circles, and spacing."""
    triples, spacing = [], []
    if grid.is_polar:
        idx = grid.ring_index()
        nt = grid.counts[1]
        rings = [grid.counts[0] - 1] if grid.has_center else [0, grid.counts[0] - 1]
        for i in rings:
            j = np.arange(nt)
            triples.append(np.stack([idx[i, (j - 1) % nt], idx[i, j], idx[i, (j + 1) % nt]], axis=1))
            spacing.append(np.full(nt, 2.0 * np.pi * grid.radii[i] / nt))
    else:
        counts = np.array(grid.counts)
        idx = np.indices(grid.counts).reshape(grid.n, -1).T
        node = np.arange(grid.num_nodes)
        for a in range(grid.n):
            ok = grid.is_boundary & (idx[:, a] > 0) & (idx[:, a] < counts[a] - 1)
            stride = int(np.prod(counts[a + 1 :]))
            k = node[ok]
            # both neighbours along axis a must be boundary nodes too
            good = grid.is_boundary[k - stride] & grid.is_boundary[k + stride]
            k = k[good]
            triples.append(np.stack([k - stride, k, k + stride], axis=1))
            spacing.append(np.full(k.size, grid.spacing[a]))
    return np.concatenate(triples), np.concatenate(spacing)


def estimate_kappa(grid: StructuredGrid, samples: np.ndarray) -> float:
    """Divided-difference estimate of the C^2 norm of the boundary data."""
    pos = np.full(grid.num_nodes, -1)
    pos[grid.boundary_nodes] = np.arange(grid.boundary_nodes.size)
    tri, h = _boundary_neighbours(grid)
    if tri.size == 0:
        return float(np.abs(samples).max())
    a, b, c = (samples[pos[tri[:, k]]] for k in range(3))
    d1 = np.abs(c - a) / (2.0 * h[:, None])
    d2 = np.abs(c - 2.0 * b + a) / (h[:, None] ** 2)
    return float(max(np.abs(samples).max(), d1.max(), d2.max()))


def acausality_margin(data: BoundaryData, grid: StructuredGrid | None = None, chunk: int = 2048) -> float:
    """``mu0 = 1 - max |phi(x) - phi(x')| / |x - x'|`` over distinct boundary node pairs."""
    grid = grid or data.grid
    xb = grid.coords[grid.boundary_nodes]
    phi = data.samples
    nb = xb.shape[0]
    if nb < 2:
        raise InvalidArgument("need at least two boundary nodes")
    worst = 0.0
    for s in range(0, nb, chunk):
        dx = np.linalg.norm(xb[s : s + chunk, None, :] - xb[None, :, :], axis=2)
        dp = np.linalg.norm(phi[s : s + chunk, None, :] - phi[None, :, :], axis=2)
        mask = dx > 0
        if mask.any():
            worst = max(worst, float((dp[mask] / dx[mask]).max()))
    return 1.0 - worst


def laplacian_matrix(grid: StructuredGrid) -> sp.csr_matrix:
    """Stiffness matrix of the corner-simplex Dirichlet energy (positive semidefinite).

    ``u^T S u = sum_e w_e |grad_e u|^2``; ``-S`` is the Jacobi operator at ``u = 0``.
    """
    n = grid.n
    D = grid.elem_D
    B = np.concatenate([-D.sum(axis=2, keepdims=True), D], axis=2)  # (E, n, n+1)
    local = np.einsum("e,eia,eib->eab", grid.elem_w, B, B)
    nodes = np.concatenate([grid.elem_base[:, None], grid.elem_nbr], axis=1)
    rows = np.repeat(nodes, n + 1, axis=1).ravel()
    cols = np.tile(nodes, (1, n + 1)).ravel()
    N = grid.num_nodes
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()


def extend_to_interior(data: BoundaryData, grid: StructuredGrid | None = None) -> GraphField:
    """Componentwise discrete-harmonic extension of the boundary data."""
    grid = grid or data.grid
    S = laplacian_matrix(grid)
    I = grid.interior_nodes
    B = grid.boundary_nodes
    u = data.full_values()
    if I.size:
        S_II = S[I][:, I].tocsc()
        rhs = -(S[I][:, B] @ data.samples)
        sol = spla.spsolve(S_II, rhs)
        sol = np.asarray(sol).reshape(I.size, -1)
        res = np.abs(S_II @ sol - rhs).max() if rhs.size else 0.0
        scale = max(1.0, np.abs(rhs).max())
        if not np.all(np.isfinite(sol)) or res > 1e-9 * scale:
            raise LinearSolveError(f"harmonic extension solve failed, residual {res:.3e}", residual=res)
        u[I] = sol
    return GraphField(grid, u)
