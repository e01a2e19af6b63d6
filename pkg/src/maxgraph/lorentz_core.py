"""Split-signature algebra on R^{n,m} and the pointwise geometry of graphs.

A graph ``y = u(x)`` over a domain in R^n has, at each point, a gradient
matrix ``J`` of shape ``(n, m)`` with ``J[i, a] = d_i u^a``.  Its induced
metric is ``g = I - J J^T``; the graph element is spacelike iff ``g`` is
positive definite, i.e. iff the largest singular value of ``J`` is below 1.

The batched helpers at the bottom work on stacks of gradient matrices with
shape ``(N, n, m)`` and are what the solver and diagnostics call in loops.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidArgument

NULL_RTOL = 1e-14


@dataclass(frozen=True)
class Signature:
    n: int
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m or self.n < 1 or self.m < 1:
            raise InvalidArgument(f"signature needs n >= 1 and m >= 1, got ({self.n}, {self.m})")


@dataclass(frozen=True)
class SpacetimeVector:
    """A vector of R^{n,m}: spatial part ``x`` and temporal part ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __init__(self, x, y):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(x, dtype=float)))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(y, dtype=float)))

    @property
    def signature(self) -> Signature:
        return Signature(self.x.size, self.y.size)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


class CausalClass(str, Enum):
    SPACELIKE = "spacelike"
    NULL = "null"
    TIMELIKE = "timelike"


@dataclass
class MetricTensor:
    g: np.ndarray
    g_inv: np.ndarray | None
    det_g: float | None
    min_eig: float

    @property
    def spacelike(self) -> bool:
        return self.min_eig > 0


def lorentz_inner(v: SpacetimeVector, w: SpacetimeVector) -> float:
    if v.x.shape != w.x.shape or v.y.shape != w.y.shape:
        raise InvalidArgument(
            f"signature mismatch: ({v.x.size},{v.y.size}) vs ({w.x.size},{w.y.size})"
        )
    return float(v.x @ w.x - v.y @ w.y)


def causal_class(v: SpacetimeVector) -> CausalClass:
    q = lorentz_inner(v, v)
    scale = float(v.x @ v.x + v.y @ v.y)
    if abs(q) <= NULL_RTOL * scale:
        return CausalClass.NULL
    return CausalClass.SPACELIKE if q > 0 else CausalClass.TIMELIKE


def _as_gradient(J) -> np.ndarray:
    J = np.asarray(J, dtype=float)
    if J.ndim != 2:
        raise InvalidArgument(f"gradient matrix must be 2-D (n, m), got shape {J.shape}")
    if not np.all(np.isfinite(J)):
        raise InvalidArgument("gradient matrix has non-finite entries")
    return J


def induced_metric(J) -> MetricTensor:
    """Induced metric ``g = I - J J^T``.

    Inverse and determinant are only filled in when ``g`` is positive
    definite; otherwise they are ``None`` and ``min_eig <= 0`` flags the
    element as non-spacelike.
    """
    J = _as_gradient(J)
    n = J.shape[0]
    g = np.eye(n) - J @ J.T
    g = 0.5 * (g + g.T)
    min_eig = float(np.linalg.eigvalsh(g)[0])
    if min_eig <= 0:
        return MetricTensor(g=g, g_inv=None, det_g=None, min_eig=min_eig)
    g_inv = np.linalg.inv(g)
    return MetricTensor(g=g, g_inv=0.5 * (g_inv + g_inv.T), det_g=float(np.linalg.det(g)), min_eig=min_eig)


def spacelike_margin(J) -> float:
    """``1 - sigma_max(J)**2``; positive iff the graph element is spacelike."""
    J = _as_gradient(J)
    if J.size == 0:
        return 1.0
    smax = np.linalg.norm(J, 2)
    return float(1.0 - smax * smax)


# -- batched forms -----------------------------------------------------------


def _largest_eig_gram(J: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of ``J J^T`` per matrix; closed form when n <= 2 or m == 1."""
    n, m = J.shape[1], J.shape[2]
    if n == 1 or m == 1:
        return np.einsum("eia,eia->e", J, J)
    S = np.einsum("eia,eja->eij", J, J)
    if n == 2:
        half_tr = 0.5 * (S[:, 0, 0] + S[:, 1, 1])
        gap = np.hypot(0.5 * (S[:, 0, 0] - S[:, 1, 1]), S[:, 0, 1])
        return half_tr + gap
    return np.linalg.eigvalsh(S)[:, -1]


def margins(J: np.ndarray) -> np.ndarray:
    """Spacelike margin for a stack ``(N, n, m)`` of gradient matrices."""
    return 1.0 - _largest_eig_gram(J)


def metric_batch(J: np.ndarray):
    """Return ``(g, g_inv, sqrt_det)`` for a stack of spacelike gradients."""
    n = J.shape[1]
    g = np.eye(n)[None] - np.einsum("eia,eja->eij", J, J)
    if n == 1:
        det = g[:, 0, 0]
        g_inv = 1.0 / g
    elif n == 2:
        det = g[:, 0, 0] * g[:, 1, 1] - g[:, 0, 1] * g[:, 1, 0]
        g_inv = np.empty_like(g)
        g_inv[:, 0, 0] = g[:, 1, 1] / det
        g_inv[:, 1, 1] = g[:, 0, 0] / det
        g_inv[:, 0, 1] = -g[:, 0, 1] / det
        g_inv[:, 1, 0] = -g[:, 1, 0] / det
    else:
        g_inv = np.linalg.inv(g)
        det = np.linalg.det(g)
    return g, g_inv, np.sqrt(det)


def volume_density(J: np.ndarray) -> np.ndarray:
    """``sqrt(det(I - J J^T))`` for each matrix in the stack."""
    _, _, sq = metric_batch(J)
    return sq


def volume_density_grad(J: np.ndarray):
    """Value and derivative of the volume density with respect to ``J``.

    ``dF/dJ = -sqrt(det g) g^{-1} J``.
    """
    _, g_inv, sq = metric_batch(J)
    P = np.einsum("eij,eja->eia", g_inv, J)
    return sq, -sq[:, None, None] * P


def volume_density_hessian(J: np.ndarray) -> np.ndarray:
    """Second derivative ``d2F / dJ[i,a] dJ[k,b]`` as an array ``(N, n, m, n, m)``.

    With ``P = g^{-1} J`` and ``M = J^T P``::

        d2F = sqrt(det g) * (P_ia P_kb - P_ka P_ib - ginv_ki (I + M)_ab)
    """
    _, g_inv, sq = metric_batch(J)
    m = J.shape[2]
    P = np.einsum("eij,eja->eia", g_inv, J)
    M = np.einsum("eia,eib->eab", J, P) + np.eye(m)[None]
    PP = np.einsum("eia,ekb->eiakb", P, P)
    H = PP - np.transpose(PP, (0, 3, 2, 1, 4)) - np.einsum("eki,eab->eiakb", g_inv, M)
    return sq[:, None, None, None, None] * H
