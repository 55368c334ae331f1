"""One-dimensional spectral-element building blocks in the normal variable."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial import legendre

from ..errors import DataError


def gll_nodes(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto-Legendre nodes and weights on [-1, 1] (p + 1 points)."""
    if p < 2:
        raise DataError("element order must be at least 2")
    interior = legendre.Legendre.basis(p).deriv().roots()
    x = np.concatenate([[-1.0], np.sort(interior.real), [1.0]])
    Pp = legendre.legval(x, [0] * p + [1])
    w = 2.0 / (p * (p + 1) * Pp ** 2)
    return x, w


def barycentric_weights(x: np.ndarray) -> np.ndarray:
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def interpolation_matrix(x: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Rows evaluate the Lagrange interpolant through nodes x at ``points``."""
    lam = barycentric_weights(x)
    points = np.asarray(points, dtype=float)
    diff = points[:, None] - x[None, :]
    exact = np.abs(diff) < 1e-15
    diff[exact] = 1.0
    terms = lam / diff
    out = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    out[hit] = exact[hit].astype(float)
    return out


def differentiation_matrix(x: np.ndarray, points: np.ndarray | None = None) -> np.ndarray:
    """Derivative of the Lagrange interpolant through x, evaluated at x (default) or ``points``."""
    lam = barycentric_weights(x)
    n = x.size
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = lam[j] / lam[i] / (x[i] - x[j])
        D[i, i] = -D[i].sum()
    if points is None:
        return D
    return interpolation_matrix(x, points) @ D


def graded_mesh(T: float, h_min: float, h_max: float, ratio: float = 1.6) -> np.ndarray:
    """Element boundaries on [0, T]: geometric growth from h_min up to h_max, then uniform."""
    if not (0 < h_min <= h_max) or T <= 0:
        raise DataError("invalid mesh parameters")
    edges = [0.0]
    h = h_min
    while edges[-1] + h < T - 1e-12 and h < h_max:
        edges.append(edges[-1] + h)
        h = min(h * ratio, h_max)
    rest = T - edges[-1]
    m = max(1, int(np.ceil(rest / h_max - 1e-9)))
    edges.extend(edges[-1] + rest * np.arange(1, m + 1) / m)
    edges[-1] = T
    return np.array(edges)


def uniform_mesh(T: float, h: float) -> np.ndarray:
    m = max(1, int(np.ceil(T / h - 1e-9)))
    return np.linspace(0.0, T, m + 1)


@dataclass(frozen=True)
class SpectralElementMesh:
    """Continuous velocity space of order p on GLL nodes, discontinuous pressure on p - 1 Gauss points."""

    edges: np.ndarray
    order: int

    @property
    def n_elements(self) -> int:
        return self.edges.size - 1

    @property
    def n_nodes(self) -> int:
        return self.n_elements * self.order + 1

    @property
    def n_pressure(self) -> int:
        return self.n_elements * (self.order - 1)

    @cached_property
    def reference(self):
        xg, wg = gll_nodes(self.order)
        xp, wp = legendre.leggauss(self.order - 1)
        D = differentiation_matrix(xg)
        Ig = interpolation_matrix(xg, xp)
        Dg = differentiation_matrix(xg, xp)
        return xg, wg, xp, wp, D, Ig, Dg

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.edges)

    @cached_property
    def jacobians(self) -> np.ndarray:
        return 0.5 * self.lengths

    @cached_property
    def element_nodes(self) -> np.ndarray:
        """(E, p + 1) physical positions of each element's GLL nodes."""
        xg = self.reference[0]
        return self.edges[:-1, None] + (xg[None, :] + 1.0) * self.jacobians[:, None]

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.empty(self.n_nodes)
        p = self.order
        for e in range(self.n_elements):
            t[e * p:(e + 1) * p + 1] = self.element_nodes[e]
        return t

    @cached_property
    def pressure_nodes(self) -> np.ndarray:
        """(E, p - 1) physical Gauss points."""
        xp = self.reference[2]
        return self.edges[:-1, None] + (xp[None, :] + 1.0) * self.jacobians[:, None]

    @cached_property
    def global_index(self) -> np.ndarray:
        p = self.order
        return np.arange(self.n_elements)[:, None] * p + np.arange(p + 1)[None, :]

    def gather(self, values: np.ndarray) -> np.ndarray:
        """(..., n_nodes) -> (..., E, p + 1)."""
        return values[..., self.global_index]

    def scatter_add(self, local: np.ndarray) -> np.ndarray:
        """(..., E, p + 1) -> (..., n_nodes), summing shared interface nodes."""
        p, E = self.order, self.n_elements
        out = np.zeros(local.shape[:-2] + (self.n_nodes,), dtype=local.dtype)
        for m in range(p + 1):
            out[..., m:m + E * p:p] += local[..., :, m]
        return out

    @cached_property
    def scaled_derivative(self) -> np.ndarray:
        """(E, p + 1, p + 1) physical derivative matrices at GLL nodes."""
        D = self.reference[4]
        return D[None] / self.jacobians[:, None, None]

    @cached_property
    def scaled_pressure_derivative(self) -> np.ndarray:
        Dg = self.reference[6]
        return Dg[None] / self.jacobians[:, None, None]

    def locate(self, t: np.ndarray) -> np.ndarray:
        """Element index containing each t (clipped to the mesh)."""
        return np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, self.n_elements - 1)

    def velocity_interpolation(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element indices and (len(t), p + 1) Lagrange weights for velocity at heights t."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = self.locate(t)
        ref = (t - self.edges[e]) / self.jacobians[e] - 1.0
        xg = self.reference[0]
        W = np.stack([interpolation_matrix(xg, ref[i:i + 1])[0] for i in range(t.size)]) if t.size else \
            np.zeros((0, self.order + 1))
        return e, W

    def velocity_derivative_interpolation(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = self.locate(t)
        ref = (t - self.edges[e]) / self.jacobians[e] - 1.0
        xg = self.reference[0]
        W = np.stack([differentiation_matrix(xg, ref[i:i + 1])[0] / self.jacobians[e[i]]
                      for i in range(t.size)])
        return e, W

    def pressure_interpolation(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        e = self.locate(t)
        ref = (t - self.edges[e]) / self.jacobians[e] - 1.0
        xp = self.reference[2]
        W = np.stack([interpolation_matrix(xp, ref[i:i + 1])[0] for i in range(t.size)])
        return e, W
