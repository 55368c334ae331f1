"""Half-space boundary layers: cylinder reduction, truncated solves, tail extraction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from ..errors import DataError, GeometryError
from ..fields.geometry import HalfSpaceGeometry, RationalNormal, tangential_lattice_basis
from ..fields.periodic import BoundaryData, EllipticTensorField
from .sem import SpectralElementMesh, graded_mesh
from .strip import StripGeometry, StripSolution, StripSolver


def default_mesh(T: float, order: int = 8, h_min: float = 0.05, h_max: float = 0.5) -> SpectralElementMesh:
    """Geometric grading near t = 0 and uniform elements further out."""
    return SpectralElementMesh(graded_mesh(T, h_min, h_max, ratio=1.5), order)


def lateral_points_for(W: np.ndarray, points_per_unit: int) -> tuple[int, ...]:
    """Even lateral grid sizes proportional to the sup-norm of each period vector."""
    out = []
    for a in range(W.shape[1]):
        n = int(np.ceil(points_per_unit * max(1.0, float(np.abs(W[:, a]).max()))))
        out.append(max(8, n + (n % 2)))
    return tuple(out)


@dataclass
class CylinderProblem:
    """A half-space problem written on the laterally periodic strip over its boundary.

    ``frame`` parametrizes y = s n + W xi + t n with W a basis of the tangential
    period lattice (of the approximant direction when n is irrational).
    ``V0`` holds the Dirichlet data (Cartesian components) on the lateral grid.
    """

    A: EllipticTensorField
    g: BoundaryData
    geometry: HalfSpaceGeometry
    frame: StripGeometry
    lateral_shape: tuple[int, ...]
    mesh: SpectralElementMesh
    T: float
    approximant: tuple[int, ...] | None = None
    scale: float = 1.0

    @property
    def dim(self) -> int:
        return self.geometry.dim

    def coefficient(self, points: np.ndarray) -> np.ndarray:
        return self.A.evaluate(points / self.scale)

    def lateral_points(self) -> np.ndarray:
        """Physical points (d, *Nlat) of the boundary grid."""
        axes = [np.arange(n) / n for n in self.lateral_shape]
        xi = np.stack(np.meshgrid(*axes, indexing="ij"))
        return self.frame.to_physical(xi, np.zeros(xi.shape[1:]))

    @cached_property
    def V0(self) -> np.ndarray:
        return self.g.evaluate(self.lateral_points())

    def rotated_coefficient(self, t: float = 0.0) -> np.ndarray:
        """B = rotation of A in all four indices by M, sampled on the lateral grid at height t."""
        pts = self.lateral_points() + self.frame.normal.reshape((-1,) + (1,) * len(self.lateral_shape)) * t
        A = self.coefficient(pts)
        M = self.geometry.M
        return np.einsum("xa,yb,ki,lj,xykl...->abij...", M, M, M, M, A, optimize=True)


def to_cylinder(A: EllipticTensorField, g: BoundaryData, geometry: HalfSpaceGeometry, T: float,
                points_per_unit: int = 16, mesh: SpectralElementMesh | None = None,
                lateral_shape: Sequence[int] | None = None) -> CylinderProblem:
    if T <= 2:
        raise GeometryError(f"truncation height must exceed 2, got {T}")
    d = geometry.dim
    if A.dim != d or g.grid.dim != d:
        raise DataError("coefficient, data and geometry dimensions differ")
    cls = geometry.classification
    if isinstance(cls, RationalNormal):
        v = np.array(cls.v, dtype=float)
        W = cls.basis.astype(float)
        n = geometry.n
        approx = None
    else:
        v = np.array(cls.approximant, dtype=float)
        W = tangential_lattice_basis(cls.approximant).astype(float)
        n = v / np.linalg.norm(v)
        approx = tuple(cls.approximant)
    frame = StripGeometry(geometry.s * n, W, n)
    shape = tuple(lateral_shape) if lateral_shape is not None else lateral_points_for(W, points_per_unit)
    return CylinderProblem(A, g, geometry, frame, shape, mesh or default_mesh(T), float(T), approx)


@dataclass
class BoundaryLayerSolution:
    problem: CylinderProblem
    strip: StripSolution
    residual: float
    truncation_sensitive: bool | None = None

    @property
    def T(self) -> float:
        return self.problem.T

    @property
    def heights(self) -> np.ndarray:
        return self.strip.mesh.nodes

    @cached_property
    def V(self) -> np.ndarray:
        """(d, *Nlat, nt) velocity."""
        return self.strip.velocity_grid()

    @cached_property
    def R(self) -> np.ndarray:
        """(*Nlat, nt) pressure."""
        return self.strip.pressure_grid()

    @cached_property
    def slice_means(self) -> np.ndarray:
        """(nt, d) tangential averages m(t)."""
        return self.strip.slice_means()

    def mean_at(self, t) -> np.ndarray:
        return self.strip.mean_at(np.atleast_1d(t))

    @cached_property
    def gradient_magnitude(self) -> np.ndarray:
        """(*Nlat, nt) Frobenius norm of the physical velocity gradient."""
        G = self.strip.physical_gradient_grid()
        return np.sqrt((G ** 2).sum(axis=(0, 1)))

    @cached_property
    def decay_profile(self) -> np.ndarray:
        """sup over lateral nodes of t |grad V| at each node height."""
        nl = len(self.problem.lateral_shape)
        sup = self.gradient_magnitude.max(axis=tuple(range(nl)))
        return self.heights * sup

    def M_q(self, q: float) -> float:
        """(cell-averaged integral over the strip of |grad V|^q)^(1/q)."""
        mesh = self.strip.mesh
        wJ = mesh.reference[1][None, :] * mesh.jacobians[:, None]
        wt = mesh.scatter_add(wJ[None])[0]
        nl = len(self.problem.lateral_shape)
        lat = (self.gradient_magnitude ** q).mean(axis=tuple(range(nl)))
        return float((lat @ wt) ** (1.0 / q))

    def boundary_traces(self) -> tuple[np.ndarray, np.ndarray]:
        """Velocity gradient (j, alpha, *Nlat) and pressure (*Nlat) at t = 0."""
        modes = self.strip.modes
        G = modes.to_grid(np.moveaxis(self.strip.boundary_gradient_modes(), 0, -1), axis=2)
        p = modes.to_grid(self.strip.boundary_pressure_modes(), axis=0)
        return G, p


def _make_solver(prob: CylinderProblem) -> StripSolver:
    return StripSolver(prob.coefficient, prob.frame, prob.lateral_shape, prob.mesh)


def solve_boundary_layer(prob: CylinderProblem, tol: float = 1e-10, check_truncation: bool = False
                         ) -> BoundaryLayerSolution:
    """Dirichlet data at t = 0, traction-free at t = T."""
    solver = _make_solver(prob)
    strip = solver.solve([solver.rhs(prob.V0)], tol=tol)[0]
    sol = BoundaryLayerSolution(prob, strip, strip.residual)
    if check_truncation:
        sol.truncation_sensitive = truncation_sensitivity(sol, tol)
    return sol


def solve_boundary_layers(prob: CylinderProblem, data: Sequence[np.ndarray], tol: float = 1e-10
                          ) -> list[BoundaryLayerSolution]:
    """Several Dirichlet data sets (each (d, *Nlat)) on one cylinder, sharing the discretization."""
    solver = _make_solver(prob)
    strips = solver.solve([solver.rhs(V0) for V0 in data], tol=tol)
    return [BoundaryLayerSolution(prob, s, s.residual) for s in strips]


def truncation_sensitivity(sol: BoundaryLayerSolution, tol: float = 1e-10) -> bool:
    """True when doubling T moves m(T/2) by more than 10x the tail error estimate."""
    prob = sol.problem
    T2 = 2 * prob.T
    doubled = to_cylinder(prob.A, prob.g, prob.geometry, T2, lateral_shape=prob.lateral_shape,
                          mesh=SpectralElementMesh(np.concatenate([prob.mesh.edges, prob.mesh.edges[1:] + prob.T]),
                                                   prob.mesh.order))
    other = solve_boundary_layer(doubled, tol)
    est = extract_tail(sol).error_estimate
    shift = np.abs(other.mean_at(prob.T / 2) - sol.mean_at(prob.T / 2)).max()
    return bool(shift > 10 * max(est, 1e-13))


@dataclass
class TailVector:
    U: np.ndarray
    error_estimate: float
    method: str = "extrapolation"
    heights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    means: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    warnings: list[str] = field(default_factory=list)


def _aitken(a: np.ndarray, b: np.ndarray, c: np.ndarray, noise: float) -> np.ndarray:
    out = c.copy()
    d1, d2 = b - a, c - b
    for i in range(c.size):
        if abs(d1[i]) <= noise or abs(d2[i]) <= noise:
            continue
        r = d2[i] / d1[i]
        if 0 < r < 0.9:
            out[i] = c[i] + d2[i] * r / (1 - r)
    return out


def extract_tail(sol: BoundaryLayerSolution, schedule: Sequence[float] | None = None) -> TailVector:
    """Tail of the slice means over an equally spaced height schedule inside (T/4, T).

    The value at the largest height is improved by Aitken extrapolation of the last
    three means when they converge geometrically above round-off.
    """
    T = sol.T
    sched = np.linspace(0.5 * T, 0.9 * T, 5) if schedule is None else np.asarray(schedule, dtype=float)
    if sched.size < 2 or np.any(np.diff(sched) <= 0) or sched[0] <= T / 4 or sched[-1] >= T:
        raise DataError("schedule must be increasing and inside (T/4, T)")
    means = sol.mean_at(sched)
    diffs = np.abs(np.diff(means, axis=0)).max(axis=1)
    scale = max(1.0, float(np.abs(means).max()))
    noise = 1e-13 * scale
    notes = []
    if np.any(diffs[1:] > diffs[:-1] * (1 + 1e-6) + noise):
        notes.append("slice means are not Cauchy over the schedule")
    U = means[-1].copy()
    if sched.size >= 3:
        s3 = sched[-3:]
        if abs((s3[2] - s3[1]) - (s3[1] - s3[0])) <= 1e-12 * T:
            U = _aitken(means[-3], means[-2], means[-1], noise)
    return TailVector(U, float(diffs.max()), "extrapolation", sched, means, notes)


def gradient_decay_check(sol: BoundaryLayerSolution) -> tuple[np.ndarray, bool]:
    """Profile t -> sup t |grad V|; passes when its maximum over [T/2, T) is at most
    twice its median over (1, T/2)."""
    t = sol.heights
    prof = sol.decay_profile
    T = sol.T
    mid = (t > 1) & (t < T / 2)
    far = (t >= T / 2) & (t < T)
    if not mid.any() or not far.any():
        return np.stack([t, prof], axis=1), True
    floor = 1e-12 * max(1.0, float(np.abs(sol.V).max()))
    ok = float(prof[far].max()) <= 2 * float(np.median(prof[mid])) + floor
    return np.stack([t, prof], axis=1), bool(ok)


@dataclass
class TailComparison:
    offsets: np.ndarray
    tails: np.ndarray
    differences: np.ndarray
    error_estimates: np.ndarray
    holder_exponent: float | None


def compare_tails(A: EllipticTensorField, g: BoundaryData, geometry: HalfSpaceGeometry, s_list: Sequence[float],
                  T: float = 8.0, tol: float = 1e-10, **kwargs) -> TailComparison:
    tails, errs = [], []
    for s in s_list:
        prob = to_cylinder(A, g, geometry.with_offset(float(s)), T, **kwargs)
        tv = extract_tail(solve_boundary_layer(prob, tol))
        tails.append(tv.U)
        errs.append(tv.error_estimate)
    tails = np.array(tails)
    diff = np.abs(tails[:, None, :] - tails[None, :, :]).max(axis=2)
    s_arr = np.asarray(s_list, dtype=float)
    exponent = None
    i0 = int(np.argmin(np.abs(s_arr - s_arr[0])))
    sel = np.abs(s_arr - s_arr[i0]) > 0
    vals = diff[i0, sel]
    if sel.sum() >= 2 and np.all(vals > 1e-14):
        exponent = float(np.polyfit(np.log(np.abs(s_arr[sel] - s_arr[i0])), np.log(vals), 1)[0])
    return TailComparison(s_arr, tails, diff, np.array(errs), exponent)


def profile_csv(sol: BoundaryLayerSolution, config_hash: str = "") -> str:
    """CSV with columns t, m1..md, sup_t_gradV."""
    buf = io.StringIO()
    if config_hash:
        buf.write(f"# config_sha256={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    d = sol.problem.dim
    w.writerow(["t"] + [f"m{i + 1}" for i in range(d)] + ["sup_t_gradV"])
    for t, m, p in zip(sol.heights, sol.slice_means, sol.decay_profile):
        w.writerow([repr(float(t))] + [repr(float(x)) for x in m] + [repr(float(p))])
    return buf.getvalue()
