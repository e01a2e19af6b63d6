"""Structured grids over the domain and finite-difference / finite-volume stencils.

Two grid kinds are supported:

* ``cartesian_box``: tensor grid on ``[a_1,b_1] x ... x [a_n,b_n]``;
  node ordering is C order over ``counts``.
* ``polar_annulus`` (``n = 2``): rings ``r_0 < ... < r_{Nr-1}`` times
  ``N_theta`` equally spaced angles.  When the inner radius is 0 the axis is
  a single shared centre node (index 0) and ring ``i >= 1`` starts at
  ``1 + (i - 1) * N_theta``.

Besides nodal stencils, every grid carries a list of *corner simplices*:
for each cell and each of its corners, the simplex spanned by that corner
and its edge neighbours.  The piecewise-linear gradient on a corner simplex
is ``J = D @ (u[nbr] - u[base])``.  Averaging over all corners of a cell is
the same as averaging the two diagonal triangulations in 2-D, so every
weighted sum over simplices is a sum of conforming P1 integrals.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numpy as np

from . import lorentz_core as lc
from .errors import InvalidArgument, PreconditionViolation

BOX = "cartesian_box"
ANNULUS = "polar_annulus"


@dataclass
class StructuredGrid:
    kind: str
    bounds: tuple
    counts: tuple
    coords: np.ndarray
    is_boundary: np.ndarray
    dist_to_boundary: np.ndarray
    # corner simplices
    elem_base: np.ndarray = field(repr=False, default=None)
    elem_nbr: np.ndarray = field(repr=False, default=None)
    elem_D: np.ndarray = field(repr=False, default=None)
    elem_w: np.ndarray = field(repr=False, default=None)
    control_volume: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.coords.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.is_boundary)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_boundary)

    @property
    def is_polar(self) -> bool:
        return self.kind == ANNULUS

    @property
    def has_center(self) -> bool:
        return self.is_polar and self.bounds[0][0] == 0.0

    # polar helpers
    @property
    def radii(self) -> np.ndarray:
        r0, r1 = self.bounds[0]
        return np.linspace(r0, r1, self.counts[0])

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.counts[1]) / self.counts[1]

    def ring_index(self) -> np.ndarray:
        """Node index array of shape ``(Nr, Ntheta)``; the centre row repeats node 0."""
        nr, nt = self.counts
        idx = np.arange(nr * nt).reshape(nr, nt)
        if self.has_center:
            idx = idx - nt + 1
            idx[0, :] = 0
        return idx

    @property
    def spacing(self) -> np.ndarray:
        if self.is_polar:
            return np.array([self.radii[1] - self.radii[0], 2.0 * np.pi / self.counts[1]])
        return np.array([(b - a) / (c - 1) for (a, b), c in zip(self.bounds, self.counts)])

    @property
    def h(self) -> float:
        """Largest physical node spacing."""
        if self.is_polar:
            dr, dt = self.spacing
            return float(max(dr, self.bounds[0][1] * dt))
        return float(self.spacing.max())

    def domain_volume(self) -> float:
        if self.is_polar:
            r0, r1 = self.bounds[0]
            return float(np.pi * (r1 * r1 - r0 * r0))
        return float(np.prod([b - a for a, b in self.bounds]))

    def boundary_frame(self, node: int):
        """Inward unit normal and an ``(n-1, n)`` tangent basis at a boundary node."""
        if not self.is_boundary[node]:
            raise InvalidArgument(f"node {node} is not a boundary node")
        x = self.coords[node]
        if self.is_polar:
            r = np.hypot(*x)
            er = x / r
            et = np.array([-er[1], er[0]])
            r0, r1 = self.bounds[0]
            normal = -er if np.isclose(r, r1) else er
            return normal, et[None, :]
        hits = []
        for a, (lo, hi) in enumerate(self.bounds):
            if x[a] == lo:
                hits.append((a, 1.0))
            elif x[a] == hi:
                hits.append((a, -1.0))
        if len(hits) != 1:
            raise InvalidArgument(f"boundary node {node} sits on a corner or edge; no unique normal")
        a, s = hits[0]
        eye = np.eye(self.n)
        return s * eye[a], np.delete(eye, a, axis=0)

    def bump(self) -> np.ndarray:
        """Smooth nodal function, positive inside and exactly zero on the boundary."""
        x = self.coords
        if self.is_polar:
            r0, r1 = self.bounds[0]
            r = np.hypot(x[:, 0], x[:, 1])
            if self.has_center:
                b = np.cos(0.5 * np.pi * r / r1)
            else:
                b = np.sin(np.pi * (r - r0) / (r1 - r0))
        else:
            b = np.ones(self.num_nodes)
            for a, (lo, hi) in enumerate(self.bounds):
                b = b * np.sin(np.pi * (x[:, a] - lo) / (hi - lo))
        b[self.is_boundary] = 0.0
        return b


@dataclass
class GraphField:
    grid: StructuredGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.num_nodes:
            raise InvalidArgument(f"field has {v.shape[0]} rows, grid has {self.grid.num_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field values must be finite")
        self.values = v

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "GraphField":
        return GraphField(self.grid, self.values.copy())


# -- construction ------------------------------------------------------------


def build_grid(spec=None, **kwargs) -> StructuredGrid:
    """Build a grid from ``{"kind", "bounds", "counts"}``.

    Box bounds are ``[[a1, b1], ..., [an, bn]]``; annulus bounds are
    ``[[r0, r1]]`` and counts ``[N_radial, N_angular]``.
    """
    spec = dict(spec or {}, **kwargs)
    kind = spec.get("kind", BOX)
    bounds = [tuple(float(v) for v in b) for b in spec["bounds"]]
    counts = tuple(int(c) for c in spec["counts"])
    if kind == BOX:
        return _build_box(bounds, counts)
    if kind == ANNULUS:
        return _build_annulus(bounds, counts)
    raise InvalidArgument(f"unknown grid kind {kind!r}")


def _build_box(bounds, counts) -> StructuredGrid:
    n = len(bounds)
    if n < 1 or len(counts) != n:
        raise InvalidArgument("box needs one (a, b) interval and one count per axis")
    for (a, b), c in zip(bounds, counts):
        if not b > a:
            raise InvalidArgument(f"degenerate box interval [{a}, {b}]")
        if c < 3:
            raise InvalidArgument("need at least 3 nodes per axis")
    axes = [np.linspace(a, b, c) for (a, b), c in zip(bounds, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([m.ravel() for m in mesh], axis=1)
    idx = np.indices(counts).reshape(n, -1).T
    is_b = np.any((idx == 0) | (idx == np.array(counts) - 1), axis=1)
    lo = np.array([a for a, _ in bounds])
    hi = np.array([b for _, b in bounds])
    dist = np.minimum(coords - lo, hi - coords).min(axis=1)
    dist[is_b] = 0.0
    grid = StructuredGrid(BOX, tuple(bounds), counts, coords, is_b, dist)
    _box_elements(grid)
    return grid


def _box_elements(grid: StructuredGrid):
    counts = np.array(grid.counts)
    n = grid.n
    h = grid.spacing
    cells = np.indices(counts - 1).reshape(n, -1).T
    bases, nbrs, Ds = [], [], []
    for s in itertools.product((0, 1), repeat=n):
        s = np.array(s)
        base = cells + s
        nb = []
        for a in range(n):
            q = base.copy()
            q[:, a] = cells[:, a] + 1 - s[a]
            nb.append(np.ravel_multi_index(q.T, grid.counts))
        bases.append(np.ravel_multi_index(base.T, grid.counts))
        nbrs.append(np.stack(nb, axis=1))
        # edge a points along +e_a when s_a = 0, -e_a when s_a = 1
        D = np.diag((1.0 - 2.0 * s) / h)
        Ds.append(np.broadcast_to(D, (cells.shape[0], n, n)))
    grid.elem_base = np.concatenate(bases)
    grid.elem_nbr = np.concatenate(nbrs)
    grid.elem_D = np.concatenate(Ds)
    grid.elem_w = np.full(grid.elem_base.size, np.prod(h) / 2**n)
    _control_volumes(grid)


def _build_annulus(bounds, counts) -> StructuredGrid:
    if len(bounds) != 1 or len(counts) != 2:
        raise InvalidArgument("annulus needs bounds [[r0, r1]] and counts [N_radial, N_angular]")
    r0, r1 = bounds[0]
    nr, nt = counts
    if not (r1 > r0 >= 0.0):
        raise InvalidArgument(f"annulus needs r1 > r0 >= 0, got [{r0}, {r1}]")
    if nr < 3 or nt < 3:
        raise InvalidArgument("need at least 3 radial and 3 angular nodes")
    if r0 == 0.0 and nt < 5:
        raise InvalidArgument("disk grids need at least 5 angular nodes")
    radii = np.linspace(r0, r1, nr)
    theta = 2.0 * np.pi * np.arange(nt) / nt
    R, T = np.meshgrid(radii, theta, indexing="ij")
    coords = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)
    ring = np.repeat(np.arange(nr), nt)
    if r0 == 0.0:
        coords = np.vstack([[0.0, 0.0], coords[nt:]])
        ring = np.concatenate([[0], ring[nt:]])
        is_b = ring == nr - 1
    else:
        is_b = (ring == 0) | (ring == nr - 1)
    r = radii[ring]
    dist = r1 - r if r0 == 0.0 else np.minimum(r - r0, r1 - r)
    dist[is_b] = 0.0
    grid = StructuredGrid(ANNULUS, ((r0, r1),), (nr, nt), coords, is_b, dist)
    _annulus_elements(grid)
    return grid


def _annulus_elements(grid: StructuredGrid):
    nr, nt = grid.counts
    idx = grid.ring_index()
    x = grid.coords
    i0 = 1 if grid.has_center else 0
    ii, jj = np.meshgrid(np.arange(i0, nr - 1), np.arange(nt), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    jp = (jj + 1) % nt
    quad = np.stack([idx[ii, jj], idx[ii + 1, jj], idx[ii + 1, jp], idx[ii, jp]], axis=1)
    bases, nbrs, ws, Es = [], [], [], []
    for k in range(4):
        b = quad[:, k]
        nb = np.stack([quad[:, (k + 1) % 4], quad[:, (k - 1) % 4]], axis=1)
        E = np.stack([x[nb[:, 0]] - x[b], x[nb[:, 1]] - x[b]], axis=2)
        bases.append(b)
        nbrs.append(nb)
        Es.append(E)
        ws.append(0.25 * np.abs(np.linalg.det(E)))
    if grid.has_center:
        j = np.arange(nt)
        b = np.zeros(nt, dtype=int)
        nb = np.stack([idx[1, j], idx[1, (j + 1) % nt]], axis=1)
        E = np.stack([x[nb[:, 0]] - x[b], x[nb[:, 1]] - x[b]], axis=2)
        bases.append(b)
        nbrs.append(nb)
        Es.append(E)
        ws.append(0.5 * np.abs(np.linalg.det(E)))
    E = np.concatenate(Es)
    grid.elem_base = np.concatenate(bases)
    grid.elem_nbr = np.concatenate(nbrs)
    grid.elem_D = np.transpose(np.linalg.inv(E), (0, 2, 1))
    grid.elem_w = np.concatenate(ws)
    _control_volumes(grid)


def _control_volumes(grid: StructuredGrid):
    n = grid.n
    share = grid.elem_w / (n + 1)
    cv = np.bincount(grid.elem_base, share, minlength=grid.num_nodes)
    for k in range(n):
        cv += np.bincount(grid.elem_nbr[:, k], share, minlength=grid.num_nodes)
    grid.control_volume = cv


# -- element gradients -------------------------------------------------------


def element_gradients(grid: StructuredGrid, values: np.ndarray) -> np.ndarray:
    """Piecewise-linear gradient on every corner simplex, shape ``(E, n, m)``."""
    delta = values[grid.elem_nbr] - values[grid.elem_base][:, None, :]
    return np.einsum("eik,eka->eia", grid.elem_D, delta)


# -- nodal stencils ----------------------------------------------------------


def _polar_frames(theta):
    c, s = np.cos(theta), np.sin(theta)
    er = np.stack([c, s], axis=-1)
    et = np.stack([-s, c], axis=-1)
    return er, et


def _center_gradient(grid, rings):
    """Gradient at the disk centre from the first Fourier mode on ring 1."""
    nt = grid.counts[1]
    th = grid.angles
    r1 = grid.radii[1]
    u1 = rings[1]
    gx = 2.0 / (nt * r1) * np.einsum("j,ja->a", np.cos(th), u1)
    gy = 2.0 / (nt * r1) * np.einsum("j,ja->a", np.sin(th), u1)
    return np.stack([gx, gy], axis=0)


def _rings(grid, values):
    return values[grid.ring_index()]


def _all_gradients(grid: StructuredGrid, values: np.ndarray) -> np.ndarray:
    m = values.shape[1]
    if not grid.is_polar:
        u = values.reshape(grid.counts + (m,))
        parts = [
            np.gradient(u, grid.spacing[a], axis=a, edge_order=2).reshape(-1, m)
            for a in range(grid.n)
        ]
        return np.stack(parts, axis=1)
    nr, nt = grid.counts
    rings = _rings(grid, values)
    radii = grid.radii
    dth = 2.0 * np.pi / nt
    ur = np.gradient(rings, radii, axis=0, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ut = (np.roll(rings, -1, axis=1) - np.roll(rings, 1, axis=1)) / (
            2.0 * radii[:, None, None] * np.sin(dth)
        )
    er, et = _polar_frames(grid.angles)
    G = ur[:, :, None, :] * er[None, :, :, None] + ut[:, :, None, :] * et[None, :, :, None]
    out = np.empty((grid.num_nodes, 2, m))
    idx = grid.ring_index()
    i0 = 1 if grid.has_center else 0
    out[idx[i0:].ravel()] = G[i0:].reshape(-1, 2, m)
    if grid.has_center:
        out[0] = _center_gradient(grid, rings)
    return out


def gradient_at(field: GraphField, node=None) -> np.ndarray:
    """Nodal gradient matrix ``J[i, a] = d_i u^a`` in Cartesian components.

    Second-order central differences inside, second-order one-sided at
    boundary nodes.  Polar grids convert radial/angular differences to
    Cartesian components; the angular difference is divided by
    ``2 r sin(dtheta)`` which keeps it exact on affine fields.  With
    ``node=None`` all nodes are returned as ``(N, n, m)``.
    """
    G = _all_gradients(field.grid, field.values)
    return G if node is None else G[node]


def hessian_at(field: GraphField) -> np.ndarray:
    """Cartesian Hessian of each component, ``(N, n, n, m)``; NaN on boundary nodes.

    Central differences, exact on quadratics (box) and on affine fields (polar).
    """
    grid = field.grid
    v = field.values
    m = v.shape[1]
    n = grid.n
    out = np.full((grid.num_nodes, n, n, m), np.nan)
    if not grid.is_polar:
        u = v.reshape(grid.counts + (m,))
        h = grid.spacing
        inner = tuple(slice(1, -1) for _ in range(n))
        H = np.empty(tuple(c - 2 for c in grid.counts) + (n, n, m))

        def shifted(offsets):
            sl = tuple(slice(1 + o, c - 1 + o) for o, c in zip(offsets, grid.counts))
            return u[sl]

        for a in range(n):
            ea = np.zeros(n, dtype=int)
            ea[a] = 1
            H[..., a, a, :] = (shifted(ea) - 2.0 * u[inner] + shifted(-ea)) / h[a] ** 2
            for b in range(a + 1, n):
                eb = np.zeros(n, dtype=int)
                eb[b] = 1
                mixed = (
                    shifted(ea + eb) - shifted(ea - eb) - shifted(eb - ea) + shifted(-ea - eb)
                ) / (4.0 * h[a] * h[b])
                H[..., a, b, :] = mixed
                H[..., b, a, :] = mixed
        nodes = np.ravel_multi_index(
            np.indices(tuple(c - 2 for c in grid.counts)).reshape(n, -1) + 1, grid.counts
        )
        out[nodes] = H.reshape(-1, n, n, m)
        return out

    nr, nt = grid.counts
    rings = _rings(grid, v)
    radii = grid.radii
    dr = radii[1] - radii[0]
    dth = 2.0 * np.pi / nt
    th = grid.angles
    er, et = _polar_frames(th)
    up = np.roll(rings, -1, axis=1)
    um = np.roll(rings, 1, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        T = (up - um) / (2.0 * radii[:, None, None] * np.sin(dth))
        Ttt = (up - 2.0 * rings + um) / (radii[:, None, None] ** 2 * 2.0 * (1.0 - np.cos(dth)))
    if grid.has_center:
        gc = _center_gradient(grid, rings)
        T[0] = np.einsum("ja,ab->jb", et, gc)
    sl = slice(1, nr - 1)
    Hrr = (rings[2:] - 2.0 * rings[sl] + rings[:-2]) / dr**2
    Hrt = (T[2:] - T[:-2]) / (2.0 * dr)
    ur = (rings[2:] - rings[:-2]) / (2.0 * dr)
    Htt = ur / radii[sl, None, None] + Ttt[sl]
    # Cartesian H = Hrr er er^T + Hrt (er et^T + et er^T) + Htt et et^T
    rr = np.einsum("ji,jk->jik", er, er)
    rt = np.einsum("ji,jk->jik", er, et)
    rt = rt + np.transpose(rt, (0, 2, 1))
    tt = np.einsum("ji,jk->jik", et, et)
    Hc = (
        Hrr[:, :, None, None, :] * rr[None, :, :, :, None]
        + Hrt[:, :, None, None, :] * rt[None, :, :, :, None]
        + Htt[:, :, None, None, :] * tt[None, :, :, :, None]
    )
    idx = grid.ring_index()
    out[idx[sl].ravel()] = Hc.reshape(-1, 2, 2, m)
    if grid.has_center:
        r1 = radii[1]
        u0 = rings[0, 0]
        mean = rings[1].mean(axis=0)
        c2 = 2.0 / nt * np.einsum("j,ja->a", np.cos(2 * th), rings[1])
        s2 = 2.0 / nt * np.einsum("j,ja->a", np.sin(2 * th), rings[1])
        lap = 4.0 * (mean - u0) / r1**2
        dxy = 4.0 * c2 / r1**2
        out[0, 0, 0] = 0.5 * (lap + dxy)
        out[0, 1, 1] = 0.5 * (lap - dxy)
        out[0, 0, 1] = out[0, 1, 0] = 2.0 * s2 / r1**2
    return out


# -- finite-volume divergence --------------------------------------------------


def maximal_coefficient(J: np.ndarray) -> np.ndarray:
    """``g^{-1} sqrt(det g)`` for a stack of gradients."""
    _, g_inv, sq = lc.metric_batch(J)
    return g_inv * sq[:, None, None]


def _nodal_coefficients(field: GraphField, coeff):
    grid = field.grid
    if coeff is None:
        coeff = maximal_coefficient
    if callable(coeff):
        J = gradient_at(field)
        marg = lc.margins(J)
        worst = int(np.argmin(marg))
        if marg[worst] <= 0:
            raise PreconditionViolation(
                f"field is not spacelike at node {worst} (margin {marg[worst]:.3e})",
                node=worst,
                margin=float(marg[worst]),
            )
        return coeff(J)
    C = np.asarray(coeff, dtype=float)
    if C.shape != (grid.num_nodes, grid.n, grid.n):
        raise InvalidArgument(f"coefficient array must have shape (N, n, n), got {C.shape}")
    return C


def face_gradients(field: GraphField):
    """Gradients of ``u`` at the faces of the node-centred finite-volume cells.

    Returns ``(p, q, grad, normal, measure, cell_volume)``: face ``f`` separates
    the cells of nodes ``p[f]`` and ``q[f]``, ``normal[f]`` points from ``p`` to
    ``q``, ``grad[f]`` is ``(n, m)``.  The normal component is the centred
    difference across the face, the tangential components are averages of
    the two nodal gradients.  Faces between two boundary nodes are omitted.
    """
    grid = field.grid
    G = gradient_at(field)
    u = field.values
    if grid.is_polar:
        return _polar_faces(grid, u, G)
    return _box_faces(grid, u, G)


def _box_faces(grid, u, G):
    n = grid.n
    h = grid.spacing
    counts = np.array(grid.counts)
    idx = np.indices(grid.counts).reshape(n, -1).T
    ps, qs, gs, ns, ms = [], [], [], [], []
    for a in range(n):
        ok = idx[:, a] < counts[a] - 1
        p = np.ravel_multi_index(idx[ok].T, grid.counts)
        q_idx = idx[ok].copy()
        q_idx[:, a] += 1
        q = np.ravel_multi_index(q_idx.T, grid.counts)
        keep = ~(grid.is_boundary[p] & grid.is_boundary[q])
        p, q = p[keep], q[keep]
        grad = 0.5 * (G[p] + G[q])
        grad[:, a, :] = (u[q] - u[p]) / h[a]
        ps.append(p)
        qs.append(q)
        gs.append(grad)
        ns.append(np.broadcast_to(np.eye(n)[a], (p.size, n)))
        ms.append(np.full(p.size, np.prod(np.delete(h, a))))
    vol = np.full(grid.num_nodes, np.prod(h))
    return (np.concatenate(ps), np.concatenate(qs), np.concatenate(gs), np.concatenate(ns),
            np.concatenate(ms), vol)


def _polar_faces(grid, u, G):
    nr, nt = grid.counts
    idx = grid.ring_index()
    radii = grid.radii
    dth = 2.0 * np.pi / nt
    th = grid.angles
    er, et = _polar_frames(th)
    er_h, et_h = _polar_frames(th + 0.5 * dth)
    rhalf = 0.5 * (radii[1:] + radii[:-1])
    ps, qs, gs, ns, ms = [], [], [], [], []

    # radial faces: chord at r_{i+1/2}, normal e_r(theta_j)
    ii, jj = np.meshgrid(np.arange(nr - 1), np.arange(nt), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    p = idx[ii, jj]
    q = idx[ii + 1, jj]
    keep = ~(grid.is_boundary[p] & grid.is_boundary[q])
    p, q, ii, jj = p[keep], q[keep], ii[keep], jj[keep]
    dr = radii[ii + 1] - radii[ii]
    normal_d = (u[q] - u[p]) / dr[:, None]
    tang_d = np.einsum("fi,fim->fm", et[jj], 0.5 * (G[p] + G[q]))
    grad = normal_d[:, None, :] * er[jj][:, :, None] + tang_d[:, None, :] * et[jj][:, :, None]
    ps.append(p)
    qs.append(q)
    gs.append(grad)
    ns.append(er[jj])
    ms.append(2.0 * rhalf[ii] * np.sin(0.5 * dth))

    # angular faces on rings strictly inside: radial segment, normal e_theta(theta_{j+1/2})
    ii, jj = np.meshgrid(np.arange(1, nr - 1), np.arange(nt), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    p = idx[ii, jj]
    q = idx[ii, (jj + 1) % nt]
    chord = 2.0 * radii[ii] * np.sin(0.5 * dth)
    normal_d = (u[q] - u[p]) / chord[:, None]
    tang_d = np.einsum("fi,fim->fm", er_h[jj], 0.5 * (G[p] + G[q]))
    grad = normal_d[:, None, :] * et_h[jj][:, :, None] + tang_d[:, None, :] * er_h[jj][:, :, None]
    ps.append(p)
    qs.append(q)
    gs.append(grad)
    ns.append(et_h[jj])
    ms.append(rhalf[ii] - rhalf[ii - 1])

    vol = np.zeros(grid.num_nodes)
    rlo = np.concatenate([[radii[0]], rhalf])
    rhi = np.concatenate([rhalf, [radii[-1]]])
    ring_vol = 0.5 * (rhi**2 - rlo**2) * np.sin(dth)
    for i in range(nr):
        vol[idx[i]] = ring_vol[i]
    if grid.has_center:
        vol[0] = 0.5 * nt * rhalf[0] ** 2 * np.sin(dth)
    return (np.concatenate(ps), np.concatenate(qs), np.concatenate(gs), np.concatenate(ns),
            np.concatenate(ms), vol)


def face_fluxes(field: GraphField, coeff=None):
    """Face fluxes of ``C grad u``: ``(p, q, flux, cell_volume)``.

    ``flux[f]`` (shape ``(m,)``) leaves the cell of ``p[f]`` through the face
    shared with ``q[f]``.  The face coefficient is the average of the two
    nodal coefficients.  ``coeff`` is a nodal array ``(N, n, n)`` or a
    callable on the nodal gradient stack; default ``g^{-1} sqrt(det g)``.
    """
    C = _nodal_coefficients(field, coeff)
    p, q, grad, normal, meas, vol = face_gradients(field)
    Cf = 0.5 * (C[p] + C[q])
    flux = meas[:, None] * np.einsum("fi,fij,fjm->fm", normal, Cf, grad)
    return p, q, flux, vol


def divergence_from_fluxes(num_nodes, p, q, flux, vol, is_boundary):
    out = np.zeros((num_nodes, flux.shape[1]))
    for a in range(flux.shape[1]):
        out[:, a] = np.bincount(p, flux[:, a], minlength=num_nodes) - np.bincount(
            q, flux[:, a], minlength=num_nodes
        )
    out /= np.where(vol > 0, vol, 1.0)[:, None]
    out[is_boundary] = 0.0
    return out


def face_flux_divergence(field: GraphField, coeff=None) -> np.ndarray:
    """Conservative divergence of ``C grad u`` at interior nodes, ``(N, m)``.

    Boundary rows are zero.  Exact zero for affine ``u`` with constant ``C``.
    """
    grid = field.grid
    p, q, flux, vol = face_fluxes(field, coeff)
    return divergence_from_fluxes(grid.num_nodes, p, q, flux, vol, grid.is_boundary)


# -- serialization -------------------------------------------------------------


def write_field_csv(path, field: GraphField):
    grid = field.grid
    n, m = grid.n, field.m
    header = [f"x{i + 1}" for i in range(n)] + [f"u{a + 1}" for a in range(m)]
    cols = [grid.coords, field.values]
    if grid.is_polar:
        x = grid.coords
        r = np.hypot(x[:, 0], x[:, 1])
        t = np.mod(np.arctan2(x[:, 1], x[:, 0]), 2.0 * np.pi)
        header += ["r", "theta"]
        cols.append(np.stack([r, t], axis=1))
    data = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow(["%.17g" % v for v in row])


def read_field_csv(path, grid: StructuredGrid) -> GraphField:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    ucols = [k for k, h in enumerate(header) if h.startswith("u")]
    xcols = [k for k, h in enumerate(header) if h.startswith("x")]
    if body.shape[0] != grid.num_nodes or len(xcols) != grid.n:
        raise InvalidArgument("CSV does not match the grid")
    if not np.allclose(body[:, xcols], grid.coords, atol=1e-12, rtol=0):
        raise InvalidArgument("CSV node coordinates do not match the grid")
    return GraphField(grid, body[:, ucols])
