"""Desk-scale verification: homogenization rates, effective-tensor cross-check, Green kernels, pressure bounds.

Heterogeneous problems live in an axis-aligned box [0, L)^(d-1) x [0, H] with the
wall {x_m = 0} (m = ``normal_axis``), lateral periodicity, Dirichlet data on the
wall and a traction-free top.  They are discretized by the strip solver.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .correctors import CorrectorSet, corrector_set, parallel_map
from .errors import ConsistencyError, DataError, FitError, GeometryError, ResolutionError
from .fields.periodic import BoundaryData, EllipticTensorField, PeriodicField
from .halfspace.sem import SpectralElementMesh, graded_mesh, uniform_mesh
from .halfspace.strip import StripGeometry, StripSolution, StripSolver

ForceFn = Callable[[np.ndarray], np.ndarray]


# rate fits ------------------------------------------------------------------------------
@dataclass
class RateFit:
    """Least-squares fit log(ordinates) = c + slope * log(abscissae).

    ``fitted_exponent`` is ``sign * slope``: +slope for convergence rates in epsilon,
    -slope for decay rates in a separation.  ``skipped`` marks data at noise level,
    in which case the exponent is +inf.
    """

    abscissae: np.ndarray
    ordinates: np.ndarray
    fitted_exponent: float
    r_squared: float
    skipped: bool = False

    def to_csv(self, xname: str, yname: str, config_hash: str = "") -> str:
        buf = io.StringIO()
        if config_hash:
            buf.write(f"# config_sha256={config_hash}\n")
        buf.write(f"# fitted_exponent={self.fitted_exponent!r} r_squared={self.r_squared!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([xname, yname])
        for x, y in zip(self.abscissae, self.ordinates):
            w.writerow([repr(float(x)), repr(float(y))])
        return buf.getvalue()


def fit_power_law(x: Sequence[float], y: Sequence[float], sign: float = 1.0, noise: float = 0.0) -> RateFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3 or x.size != y.size:
        raise FitError(f"a rate fit needs at least 3 paired points, got {x.size}")
    if np.any(x <= 0):
        raise FitError("abscissae must be positive")
    if np.all(y <= noise):
        return RateFit(x, y, float("inf"), 1.0, True)
    if np.any(y <= 0):
        raise FitError("ordinates must be positive for a log-log fit")
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + icpt)
    tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if tot == 0 else float(np.clip(1.0 - (resid ** 2).sum() / tot, 0.0, 1.0))
    return RateFit(x, y, float(sign * slope), r2)


# boxes ----------------------------------------------------------------------------------
def oscillation_axes(A: EllipticTensorField, tol: float = 1e-12) -> tuple[int, ...]:
    """Physical axes along which the coefficient is not constant."""
    spec = np.fft.fftn(A.samples, axes=tuple(range(4, 4 + A.dim)))
    scale = max(1e-300, float(np.abs(spec).max()))
    ks = np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n) for n in A.grid.shape], indexing="ij")
    out = []
    for a in range(A.dim):
        mask = ks[a] != 0
        if mask.any() and float(np.abs(spec[..., mask]).max()) > tol * scale:
            out.append(a)
    return tuple(out)


@dataclass(frozen=True)
class Box:
    """[0, width)^(d-1) x [0, height] with the wall at x_m = 0 and lateral periodicity."""

    dim: int
    width: float
    height: float
    normal_axis: int
    lateral_shape: tuple[int, ...]
    mesh: SpectralElementMesh

    @property
    def lateral_axes(self) -> tuple[int, ...]:
        return tuple(a for a in range(self.dim) if a != self.normal_axis)

    @property
    def frame(self) -> StripGeometry:
        d = self.dim
        W = np.zeros((d, d - 1))
        for c, a in enumerate(self.lateral_axes):
            W[a, c] = self.width
        n = np.zeros(d)
        n[self.normal_axis] = 1.0
        return StripGeometry(np.zeros(d), W, n)

    def lateral_coordinates(self) -> list[np.ndarray]:
        return [self.width * np.arange(n) / n for n in self.lateral_shape]

    def node_axes(self) -> list[np.ndarray]:
        """Physical-axis coordinate vectors of the (lateral grid x velocity nodes) tensor grid."""
        lat = self.lateral_coordinates()
        axes = []
        c = 0
        for a in range(self.dim):
            if a == self.normal_axis:
                axes.append(self.mesh.nodes)
            else:
                axes.append(lat[c])
                c += 1
        return axes

    def node_points(self) -> np.ndarray:
        """(d, *Nlat, nt) physical points of the velocity grid."""
        xi = np.stack(np.meshgrid(*[np.arange(n) / n for n in self.lateral_shape], indexing="ij"))
        t = self.mesh.nodes
        nl = self.dim - 1
        return self.frame.to_physical(xi[..., None], t.reshape((1,) * nl + t.shape))

    def node_weights(self) -> np.ndarray:
        """(*Nlat, nt) quadrature weights of the velocity grid (physical volume)."""
        mesh = self.mesh
        wJ = mesh.reference[1][None, :] * mesh.jacobians[:, None]
        wt = mesh.scatter_add(wJ[None])[0]
        area = self.width ** (self.dim - 1) / float(np.prod(self.lateral_shape))
        return np.broadcast_to(area * wt, self.lateral_shape + wt.shape).copy()

    def spacing(self) -> tuple[float, float]:
        """(lateral grid spacing, largest velocity-node gap)."""
        return self.width / min(self.lateral_shape), float(np.diff(self.mesh.nodes).max())


def _two_sided_mesh(H: float, h_min: float, h_max: float, order: int) -> SpectralElementMesh:
    half = graded_mesh(H / 2, h_min, h_max, ratio=1.5)
    edges = np.concatenate([half, H - half[::-1][1:]])
    return SpectralElementMesh(edges, order)


def make_box(A: EllipticTensorField, epsilon: float, width: float = 4.0, height: float = 4.0,
             normal_axis: int | None = None, points_per_cell: int = 12, points_per_unit: int = 8,
             order: int = 8) -> Box:
    """Box resolving the epsilon-scale along every axis where A oscillates.

    Lateral axes carry ``points_per_cell`` points per epsilon-cell when A varies along
    them and ``points_per_unit`` per unit length otherwise.  Along the normal the
    mesh uses elements of length epsilon/2 when A varies there; otherwise it is graded
    towards the wall and the top to resolve epsilon-thick layers.
    """
    d = A.dim
    m = d - 1 if normal_axis is None else int(normal_axis)
    if not 0 <= m < d:
        raise GeometryError(f"normal axis {m} out of range")
    osc = oscillation_axes(A)
    shape = []
    for a in range(d):
        if a == m:
            continue
        per = points_per_cell / epsilon if a in osc else points_per_unit
        n = int(np.ceil(per * width - 1e-9))
        shape.append(n + n % 2)
    if m in osc:
        p = max(order, 6)
        mesh = SpectralElementMesh(uniform_mesh(height, epsilon / 2), p)
    else:
        mesh = _two_sided_mesh(height, min(0.25, epsilon / 4), 0.25, order)
    return Box(d, float(width), float(height), m, tuple(shape), mesh)


def check_resolution(A: EllipticTensorField, box: Box, epsilon: float, points_per_cell: int = 8) -> None:
    """ResolutionError unless every oscillating axis carries at least ``points_per_cell`` points per cell."""
    for a in oscillation_axes(A):
        if a == box.normal_axis:
            per = epsilon / float(np.diff(box.mesh.nodes).max())
        else:
            c = box.lateral_axes.index(a)
            per = box.lateral_shape[c] * epsilon / box.width
        if per < points_per_cell - 1e-9:
            raise ResolutionError(f"axis {a} resolves an epsilon-cell with {per:.2f} points, "
                                  f"at least {points_per_cell} are required", stage="verify")


def _scaled_coefficient(A: EllipticTensorField, epsilon: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda y: A.evaluate(np.asarray(y) / epsilon)


def _constant_coefficient(C: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    C = np.asarray(C, dtype=float)

    def fn(y):
        y = np.asarray(y)
        return np.broadcast_to(C.reshape(C.shape + (1,) * (y.ndim - 1)), C.shape + y.shape[1:])
    return fn


# heterogeneous solves ----------------------------------------------------------------------
@dataclass
class HeterogeneousSolve:
    epsilon: float
    box: Box
    u_eps: StripSolution
    u_0: StripSolution
    A: EllipticTensorField
    A0: np.ndarray
    g: BoundaryData | None
    f: ForceFn | None
    eps_solver: StripSolver = field(repr=False)

    def velocity_difference(self) -> np.ndarray:
        return self.u_eps.velocity_grid() - self.u_0.velocity_grid()

    def error_inf(self) -> float:
        return float(np.abs(self.velocity_difference()).max())

    def error_l2(self) -> float:
        diff = self.velocity_difference()
        return float(np.sqrt((self.box.node_weights() * (diff ** 2).sum(axis=0)).sum()))


def _force_samples(solver: StripSolver, f: ForceFn | None) -> np.ndarray | None:
    if f is None:
        return None
    pts = solver.sample_points()
    vals = np.asarray(f(pts), dtype=float)
    if vals.shape != pts.shape:
        raise DataError(f"body force returned shape {vals.shape}, expected {pts.shape}")
    return vals


def solve_heterogeneous(A: EllipticTensorField, g: BoundaryData | None, f: ForceFn | None, epsilon: float,
                        box: Box | None = None, tol: float = 1e-10, correctors: CorrectorSet | None = None,
                        **box_kw) -> HeterogeneousSolve:
    """The epsilon-problem with coefficient A(x/epsilon) and the A0-problem on one box with identical data."""
    if not 0 < epsilon <= 1:
        raise DataError(f"epsilon must lie in (0, 1], got {epsilon}")
    box = box or make_box(A, epsilon, **box_kw)
    if box.width < 4 or box.height < 4:
        raise GeometryError("box width and height must be at least 4")
    cells = box.width / epsilon
    if abs(cells - round(cells)) > 1e-9:
        raise GeometryError("box width must hold an integer number of epsilon-cells")
    check_resolution(A, box, epsilon)
    cs = correctors or corrector_set(A)
    A0 = cs.A0.A0
    frame = box.frame
    eps_solver = StripSolver(_scaled_coefficient(A, epsilon), frame, box.lateral_shape, box.mesh)
    hom_solver = StripSolver(_constant_coefficient(A0), frame, box.lateral_shape, box.mesh,
                             dealias=eps_solver.modes.dealias)
    V0 = None
    if g is not None:
        xi = eps_solver.modes.coordinates()
        V0 = g.evaluate(frame.to_physical(xi, np.zeros(xi.shape[1:])))
    u_eps = eps_solver.solve([eps_solver.rhs(V0, _force_samples(eps_solver, f))], tol)[0]
    u_0 = hom_solver.solve([hom_solver.rhs(V0, _force_samples(hom_solver, f))], tol)[0]
    return HeterogeneousSolve(float(epsilon), box, u_eps, u_0, A, A0, g, f, eps_solver)


@dataclass
class ExpansionBundle:
    velocity: np.ndarray          # (d, *Nlat, nt)
    pressure: np.ndarray          # (*Nlat, nt)
    remainder: np.ndarray         # (d, *Nlat, nt)
    corrector_term: np.ndarray    # chi(x/eps) . grad u0, (d, *Nlat, nt)
    include_bl: bool
    bl: StripSolution | None = None

    @property
    def remainder_inf(self) -> float:
        return float(np.abs(self.remainder).max())

    @property
    def boundary_remainder_inf(self) -> float:
        return float(np.abs(self.remainder[..., 0]).max())


def _periodic_on_box(F: PeriodicField, box: Box, epsilon: float) -> np.ndarray:
    axes = [x / epsilon for x in box.node_axes()]
    vals = F.evaluate_tensor_grid(axes)
    lead = vals.ndim - box.dim
    return np.moveaxis(vals, lead + box.normal_axis, -1)


def build_expansion(hs: HeterogeneousSolve, correctors: CorrectorSet | None = None, include_bl: bool = True,
                    tol: float = 1e-10) -> ExpansionBundle:
    """u0 + eps chi(x/eps) grad u0 (+ eps u_bl) and p0 + pi(x/eps) grad u0, with the remainder u_eps - expansion."""
    cs = correctors or corrector_set(hs.A)
    eps, box = hs.epsilon, hs.box
    chi = _periodic_on_box(cs.chi_field(), box, eps)          # (beta, j, k, *Nlat, nt)
    pi = _periodic_on_box(cs.pi_field(), box, eps)            # (beta, j, *Nlat, nt)
    grad0 = hs.u_0.physical_gradient_grid()                    # (j, alpha, *Nlat, nt)
    corr = np.einsum("bjk...,jb...->k...", chi, grad0)
    u0 = hs.u_0.velocity_grid()
    vel = u0 + eps * corr
    pres = hs.u_0.pressure_grid() + np.einsum("bj...,jb...->...", pi, grad0)
    bl = None
    if include_bl:
        solver = hs.eps_solver
        bl = solver.solve([solver.rhs(-corr[..., 0])], tol)[0]
        vel = vel + eps * bl.velocity_grid()
        pres = pres + eps * bl.pressure_grid()
    rem = hs.u_eps.velocity_grid() - vel
    return ExpansionBundle(vel, pres, rem, corr, include_bl, bl)


@dataclass
class ConvergenceStudy:
    epsilons: np.ndarray
    err_inf: np.ndarray
    err_l2: np.ndarray
    remainder_inf: np.ndarray | None
    fit: RateFit
    remainder_fit: RateFit | None

    def to_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        if config_hash:
            buf.write(f"# config_sha256={config_hash}\n")
        buf.write(f"# fitted_exponent={self.fit.fitted_exponent!r} r_squared={self.fit.r_squared!r}\n")
        if self.remainder_fit is not None:
            buf.write(f"# remainder_fitted_exponent={self.remainder_fit.fitted_exponent!r}\n")
        w = csv.writer(buf, lineterminator="\n")
        head = ["epsilon", "err_inf", "err_l2"] + (["remainder_inf"] if self.remainder_inf is not None else [])
        w.writerow(head)
        for i, e in enumerate(self.epsilons):
            row = [repr(float(e)), repr(float(self.err_inf[i])), repr(float(self.err_l2[i]))]
            if self.remainder_inf is not None:
                row.append(repr(float(self.remainder_inf[i])))
            w.writerow(row)
        return buf.getvalue()


def bump_force(center: Sequence[float], radius: float = 0.5, direction: Sequence[float] | None = None,
               amplitude: float = 1.0) -> ForceFn:
    """amplitude (1 - |x - c|^2 / r^2)^4 direction, supported in the ball B(c, r)."""
    c = np.asarray(center, dtype=float)
    e = np.ones(c.size) if direction is None else np.asarray(direction, dtype=float)

    def f(y):
        y = np.asarray(y, dtype=float)
        r2 = ((y - c.reshape((-1,) + (1,) * (y.ndim - 1))) ** 2).sum(axis=0) / radius ** 2
        prof = amplitude * np.where(r2 < 1, (1 - np.minimum(r2, 1)) ** 4, 0.0)
        return e.reshape((-1,) + (1,) * (y.ndim - 1)) * prof
    return f


def convergence_study(A: EllipticTensorField, g: BoundaryData | None, f: ForceFn | None,
                      eps_list: Sequence[float], include_bl: bool = True, tol: float = 1e-10,
                      threads: int = 1, **box_kw) -> ConvergenceStudy:
    """Fit of ||u_eps - u0||_inf against epsilon; with ``include_bl`` also of the expansion remainder."""
    eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
    if eps.size < 3:
        raise FitError("a convergence study needs at least 3 values of epsilon")
    cs = corrector_set(A)

    def run(e):
        hs = solve_heterogeneous(A, g, f, float(e), correctors=cs, tol=tol, **box_kw)
        r = build_expansion(hs, cs, True, tol).remainder_inf if include_bl else None
        return hs.error_inf(), hs.error_l2(), r

    out = parallel_map(run, list(eps), threads)
    einf = np.array([o[0] for o in out])
    el2 = np.array([o[1] for o in out])
    noise = 1e-11 * max(1.0, float(np.abs(einf).max()))
    fit = fit_power_law(eps, einf, 1.0, noise=noise)
    rem = rfit = None
    if include_bl:
        rem = np.array([o[2] for o in out])
        rfit = fit_power_law(eps, rem, 1.0, noise=noise)
    return ConvergenceStudy(eps, einf, el2, rem, fit, rfit)


# effective tensor from fine-scale simulation -------------------------------------------------
@dataclass
class DNSEffectiveTensor:
    """Entries A0[m, m, i, j] (i, j tangential to the wall x_m = 0) recovered from shear-flow loads."""

    epsilons: np.ndarray
    entries: dict[tuple[int, int, int, int], np.ndarray]
    cell_values: dict[tuple[int, int, int, int], float]

    def relative_errors(self) -> dict[tuple[int, int, int, int], np.ndarray]:
        out = {}
        scale = max(abs(v) for v in self.cell_values.values())
        for key, vals in self.entries.items():
            out[key] = np.abs(vals - self.cell_values[key]) / scale
        return out

    def max_relative_error(self) -> float:
        return float(max(v.max() for v in self.relative_errors().values()))

    def to_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        if config_hash:
            buf.write(f"# config_sha256={config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha", "beta", "i", "j", "epsilon", "dns", "cell", "relative_error"])
        rel = self.relative_errors()
        for key in sorted(self.entries):
            for e, v, r in zip(self.epsilons, self.entries[key], rel[key]):
                w.writerow(list(key) + [repr(float(e)), repr(float(v)), repr(self.cell_values[key]), repr(float(r))])
        return buf.getvalue()


def dns_effective_tensor(A: EllipticTensorField, eps_list: Sequence[float] = (1 / 8, 1 / 16),
                         normal_axes: Sequence[int] | None = None, width: float = 4.0, height: float = 4.0,
                         tol: float = 1e-10, correctors: CorrectorSet | None = None) -> DNSEffectiveTensor:
    """Uniform tangential force e_t, no-slip wall, traction-free top: the homogenized
    profile is quadratic and its top mean equals (H^2 / 2) M^{-1} e_t with
    M[i, j] = A0[m, m, i, j] over tangential i, j.  Inverting the fine-scale top means gives M.
    """
    d = A.dim
    cs = correctors or corrector_set(A)
    A0 = cs.A0.A0
    axes = range(d) if normal_axes is None else normal_axes
    entries: dict = {}
    cells: dict = {}
    eps_arr = np.asarray(eps_list, dtype=float)
    for m in axes:
        tang = [a for a in range(d) if a != m]
        for ti in tang:
            for tj in tang:
                entries[(m, m, ti, tj)] = np.zeros(eps_arr.size)
                cells[(m, m, ti, tj)] = float(A0[m, m, ti, tj])
        for n_e, eps in enumerate(eps_arr):
            box = make_box(A, float(eps), width, height, normal_axis=m)
            check_resolution(A, box, float(eps))
            solver = StripSolver(_scaled_coefficient(A, float(eps)), box.frame, box.lateral_shape, box.mesh)
            rhs = []
            for t in tang:
                e = np.zeros(d)
                e[t] = 1.0
                rhs.append(solver.rhs(None, _force_samples(solver, _constant_coefficient(e))))
            sols = solver.solve(rhs, tol)
            Wm = np.array([s.mean_at(np.array([height]))[0][tang] for s in sols]).T
            M = 0.5 * height ** 2 * np.linalg.inv(Wm)
            for a, ti in enumerate(tang):
                for b, tj in enumerate(tang):
                    entries[(m, m, ti, tj)][n_e] = M[a, b]
    return DNSEffectiveTensor(eps_arr, entries, cells)


# Green kernels ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Mollifier:
    """Bump (1 - |x|^2 / rho^2)^4 on the ball of radius rho; ``scale`` normalizes its discrete integral."""

    radius: float
    scale: float = 1.0

    def __call__(self, rel: np.ndarray) -> np.ndarray:
        r2 = (np.asarray(rel) ** 2).sum(axis=0) / self.radius ** 2
        return self.scale * np.where(r2 < 1, (1 - np.minimum(r2, 1)) ** 4, 0.0)

    def derivative(self, rel: np.ndarray, axis: int) -> np.ndarray:
        rel = np.asarray(rel)
        r2 = (rel ** 2).sum(axis=0) / self.radius ** 2
        core = -8.0 * rel[axis] / self.radius ** 2 * (1 - np.minimum(r2, 1)) ** 3
        return self.scale * np.where(r2 < 1, core, 0.0)


def green_mesh(height: float, fine_height: float, element: float, order: int = 6,
               growth: float = 1.5) -> SpectralElementMesh:
    """Uniform elements up to ``fine_height``, then geometric growth up to ``height``."""
    edges = list(uniform_mesh(min(fine_height, height), element))
    h = element
    while edges[-1] < height - 1e-12:
        h *= growth
        edges.append(min(height, edges[-1] + h))
    if len(edges) > 2 and edges[-1] - edges[-2] < 0.5 * (edges[-2] - edges[-3]):
        edges.pop(-2)
    return SpectralElementMesh(np.array(edges), order)


def green_box(dim: int, width: float, height: float, lateral_points: int, element: float, order: int = 6,
              normal_axis: int | None = None, fine_height: float | None = None) -> Box:
    """Box for Green kernels; above ``fine_height`` the elements grow geometrically so that a tall
    box keeps the far field close to that of the half-space at little cost."""
    m = dim - 1 if normal_axis is None else normal_axis
    mesh = green_mesh(height, height if fine_height is None else fine_height, element, order)
    return Box(dim, float(width), float(height), m, (int(lateral_points),) * (dim - 1), mesh)


@dataclass
class GreenSample:
    """Columns j of the mollified Green kernel: velocity G[k, j] and pressure Pi[j] for a source at ``source``."""

    source: np.ndarray
    rho: float
    epsilon: float | None
    box: Box
    solutions: list[StripSolution] = field(repr=False)
    mollifier: Mollifier = field(default=None)
    residuals: list[float] = field(default_factory=list)

    def evaluate(self, points: np.ndarray, gradient: bool = False):
        """G (k, j, n), Pi (j, n) and with ``gradient`` also dG (k, j, alpha, n)."""
        pts = np.asarray(points, dtype=float).reshape(self.box.dim, -1)
        outs = [s.evaluate(pts, gradient) for s in self.solutions]
        G = np.stack([o[0] for o in outs], axis=1)
        P = np.stack([o[1] for o in outs])
        if not gradient:
            return G, P
        return G, P, np.stack([o[2] for o in outs], axis=1)


def _green_solver(coeff: EllipticTensorField | np.ndarray, epsilon: float | None, box: Box) -> StripSolver:
    if isinstance(coeff, EllipticTensorField):
        fn = _scaled_coefficient(coeff, epsilon or 1.0)
    else:
        fn = _constant_coefficient(coeff)
    return StripSolver(fn, box.frame, box.lateral_shape, box.mesh)


def _check_source(source: np.ndarray, box: Box, rho: float) -> None:
    m = box.normal_axis
    dist = min(source[m], box.height - source[m])
    if rho > dist / 4:
        raise GeometryError(f"source at distance {dist:.4g} from the boundary needs rho <= {dist / 4:.4g}")
    lat = box.spacing()[0]
    t = box.mesh.nodes
    near = (t >= source[m] - 2 * rho) & (t <= source[m] + 2 * rho)
    nodes = float(np.diff(t[near]).max()) if near.sum() > 1 else float(np.diff(t).max())
    if rho < 2 * max(lat, nodes) - 1e-12:
        raise ResolutionError(f"mollifier radius {rho} is below two grid spacings ({max(lat, nodes):.4g})",
                              stage="green")


def _normalized_mollifier(solver: StripSolver, box: Box, source: np.ndarray, rho: float) -> tuple[Mollifier, np.ndarray]:
    pts = solver.sample_points()
    rel = pts - source.reshape((-1,) + (1,) * (pts.ndim - 1))
    raw = Mollifier(rho)(rel)
    mesh = box.mesh
    wJ = mesh.reference[1][None, :] * mesh.jacobians[:, None]
    integral = box.width ** (box.dim - 1) * float((raw * wJ).sum(axis=(-2, -1)).mean())
    if integral <= 0:
        raise ResolutionError("mollifier is not resolved by the grid", stage="green")
    return Mollifier(rho, 1.0 / integral), rel


def _lateral_filter(values: np.ndarray, nl: int, order: int = 4) -> np.ndarray:
    """Exponential filter exp(-36 (|k| / k_max)^order) on the leading ``nl`` lateral axes.

    A bump a few grid spacings wide has grid-scale Fourier content whose pressure
    response contaminates the slab around the source; the filter removes it and
    leaves the mean mode, hence the normalization, unchanged.
    """
    axes = tuple(range(nl))
    spec = np.fft.fftn(values, axes=axes)
    shape = values.shape[:nl]
    ks = np.meshgrid(*[np.abs(np.fft.fftfreq(n, 1.0 / n)) / (n // 2) for n in shape], indexing="ij")
    kn = np.sqrt(sum(k ** 2 for k in ks) / nl)
    sigma = np.exp(-36.0 * kn ** order)
    return np.fft.ifftn(spec * sigma.reshape(shape + (1,) * (values.ndim - nl)), axes=axes).real


def green_sample(coeff: EllipticTensorField | np.ndarray, source: Sequence[float], box: Box, rho: float,
                 tol: float = 1e-10, epsilon: float | None = None,
                 source_derivative: int | None = None) -> GreenSample:
    """d column solves with a normalized bump source; ``source_derivative`` = c differentiates in the source position."""
    source = np.asarray(source, dtype=float)
    _check_source(source, box, rho)
    solver = _green_solver(coeff, epsilon, box)
    moll, rel = _normalized_mollifier(solver, box, source, rho)
    prof = moll(rel) if source_derivative is None else -moll.derivative(rel, source_derivative)
    prof = _lateral_filter(prof, box.dim - 1)
    d = box.dim
    rhs = []
    for j in range(d):
        f = np.zeros((d,) + prof.shape)
        f[j] = prof
        rhs.append(solver.rhs(None, f))
    sols = solver.solve(rhs, tol)
    return GreenSample(source, float(rho), epsilon, box, sols, moll, [s.residual for s in sols])


def _lateral_directions(d: int, normal_axis: int, count: int = 8) -> np.ndarray:
    """Unit vectors parallel to the wall, (d, count)."""
    lat = [a for a in range(d) if a != normal_axis]
    out = np.zeros((d, count if d == 3 else 2))
    if d == 2:
        out[lat[0]] = [1.0, -1.0]
        return out
    ang = 2 * np.pi * np.arange(count) / count
    out[lat[0]] = np.cos(ang)
    out[lat[1]] = np.sin(ang)
    return out


def _sup_over_directions(sample: GreenSample, radii: np.ndarray, kind: str) -> np.ndarray:
    d, m = sample.box.dim, sample.box.normal_axis
    dirs = _lateral_directions(d, m)
    vals = []
    for r in radii:
        pts = sample.source[:, None] + r * dirs
        G, P, dG = sample.evaluate(pts, gradient=True)
        if kind == "G":
            v = np.sqrt((G ** 2).sum(axis=(0, 1)))
        elif kind == "gradG":
            v = np.sqrt((dG ** 2).sum(axis=(0, 1, 2)))
        else:
            v = np.abs(P).max(axis=0)
        vals.append(float(v.max()))
    return np.array(vals)


@dataclass
class GreenDecayFits:
    fits: dict[str, RateFit]
    expected: dict[str, float]
    tolerances: dict[str, float]

    def passes(self) -> dict[str, bool]:
        return {k: abs(f.fitted_exponent - self.expected[k]) <= self.tolerances[k] for k, f in self.fits.items()}

    def to_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        if config_hash:
            buf.write(f"# config_sha256={config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "separation", "value", "fitted_exponent", "expected", "r_squared"])
        for k, f in self.fits.items():
            for x, y in zip(f.abscissae, f.ordinates):
                w.writerow([k, repr(float(x)), repr(float(y)), repr(f.fitted_exponent), repr(self.expected[k]),
                            repr(f.r_squared)])
        return buf.getvalue()


def verify_green_decay(samples: Sequence[GreenSample], pair_schedule: Sequence[float] | None = None,
                       wall_heights: Sequence[float] | None = None, wall_offset: float = 1.0) -> GreenDecayFits:
    """Decay exponents of |G|, |grad G|, |Pi| against separation (targets parallel to the wall),
    the linear vanishing of |G| towards the wall, and, when source-derivative samples
    are supplied after the base sample, the mixed derivative."""
    base = samples[0]
    d, m = base.box.dim, base.box.normal_axis
    h0 = float(base.source[m])
    radii = np.asarray(pair_schedule if pair_schedule is not None else
                       np.geomspace(2.5 * base.rho, 10 * base.rho, 5), dtype=float)
    if radii.size < 3 or radii.max() / radii.min() < 4 - 1e-9:
        raise FitError("separations must number at least 3 and span a factor of 4")
    fits = {
        "G": fit_power_law(radii, _sup_over_directions(base, radii, "G"), -1.0),
        "gradG": fit_power_law(radii, _sup_over_directions(base, radii, "gradG"), -1.0),
        "pressure": fit_power_law(radii, _sup_over_directions(base, radii, "P"), -1.0),
    }
    expected = {"G": d - 2.0, "gradG": d - 1.0, "pressure": d - 1.0}
    tols = {"G": 0.3, "gradG": 0.3, "pressure": 0.4}
    heights = np.asarray(wall_heights if wall_heights is not None else np.geomspace(h0 / 80, h0 / 10, 4))
    lat = [a for a in range(d) if a != m]
    pts = np.repeat(base.source[:, None], heights.size, axis=1)
    pts[lat[0]] += wall_offset
    pts[m] = heights
    G, _ = base.evaluate(pts)
    fits["boundary"] = fit_power_law(heights, np.sqrt((G ** 2).sum(axis=(0, 1))), 1.0)
    expected["boundary"] = 1.0
    tols["boundary"] = 0.3
    if len(samples) > 1:
        dirs = _lateral_directions(d, m)
        vals = []
        for r in radii:
            p = base.source[:, None] + r * dirs
            mixed = np.stack([s.evaluate(p, gradient=True)[2] for s in samples[1:]])
            vals.append(float(np.sqrt((mixed ** 2).sum(axis=(0, 1, 2, 3))).max()))
        fits["mixed"] = fit_power_law(radii, np.array(vals), -1.0)
        expected["mixed"] = float(d)
        tols["mixed"] = 0.4
    return GreenDecayFits(fits, expected, tols)


@dataclass
class GreenHomogenization:
    fit: RateFit
    band: tuple[float, float]
    separations: np.ndarray

    @property
    def passed(self) -> bool:
        return self.fit.fitted_exponent >= self.band[0]

    def to_csv(self, config_hash: str = "") -> str:
        return self.fit.to_csv("epsilon", "sup_abs_G_eps_minus_G0", config_hash)


def homogenization_band(d: int) -> tuple[float, float]:
    return 1.0 / (d + 1.0 / d), 1.0 / (d - 1 + 2.0 / d)


def green_targets(source: np.ndarray, box: Box, separations: Sequence[float]) -> np.ndarray:
    """Targets at the given separations along wall-parallel directions and away from the wall."""
    d, m = box.dim, box.normal_axis
    dirs = [v for v in _lateral_directions(d, m, 4).T]
    up = np.zeros(d)
    up[m] = 1.0
    dirs.append(up)
    pts = []
    for r in separations:
        for v in dirs:
            p = source + r * v
            if 0 < p[m] < box.height:
                pts.append(p)
        if source[m] - r > 0.25:
            pts.append(source - r * up)
    return np.array(pts).T


def verify_green_homogenization(A: EllipticTensorField, eps_list: Sequence[float], source: Sequence[float],
                                rho: float, box_factory: Callable[[float], Box],
                                separations: Sequence[float] = (1 / 3, 2 / 3, 1.0, 4 / 3, 5 / 3),
                                tol: float = 1e-10, correctors: CorrectorSet | None = None
                                ) -> GreenHomogenization:
    """sup over targets with separation in [1/3, 5/3] of |G_eps - G0| as a function of epsilon."""
    seps = np.asarray(separations, dtype=float)
    if seps.min() < 1 / 3 - 1e-12 or seps.max() > 5 / 3 + 1e-12:
        raise DataError("separations must lie in [1/3, 5/3]")
    cs = correctors or corrector_set(A)
    A0 = cs.A0.A0
    src = np.asarray(source, dtype=float)
    sups = []
    for eps in eps_list:
        box = box_factory(float(eps))
        check_resolution(A, box, float(eps))
        targets = green_targets(src, box, seps)
        Ge = green_sample(A, src, box, rho, tol, epsilon=float(eps)).evaluate(targets)[0]
        G0 = green_sample(A0, src, box, rho, tol).evaluate(targets)[0]
        sups.append(float(np.sqrt(((Ge - G0) ** 2).sum(axis=(0, 1))).max()))
    eps_arr = np.asarray(eps_list, dtype=float)
    fit = fit_power_law(eps_arr, np.array(sups), 1.0, noise=1e-12)
    return GreenHomogenization(fit, homogenization_band(A.dim), seps)


# pressure bound ------------------------------------------------------------------------------
def _gauss_point_fields(sol: StripSolution, box: Box):
    """Physical points, weights, velocity gradient (j, alpha) and pressure at lateral grid x Gauss points."""
    mesh, modes, solver = sol.mesh, sol.modes, sol.solver
    xg, wg, xp, wp, D, Ig, Dg = mesh.reference
    d = box.dim
    Ul = mesh.gather(sol.U)                                         # (nm, d, E, q)
    Ug = np.einsum("gn,mjen->mjeg", Ig, Ul)
    Udt = np.einsum("egn,mjen->mjeg", mesh.scaled_pressure_derivative, Ul)
    Gf = np.empty(Ug.shape[:2] + (d,) + Ug.shape[2:], dtype=complex)
    for b in range(d - 1):
        Gf[:, :, b] = 1j * modes.kappa[:, b, None, None, None] * Ug
    Gf[:, :, d - 1] = Udt
    Gp = np.einsum("ba,mjbeg->mjaeg", solver.K, Gf)
    grad = modes.to_grid(np.moveaxis(Gp, 0, 2), axis=2)             # (j, alpha, *Nlat, E, g)
    pres = modes.to_grid(sol.P, axis=0)                              # (*Nlat, E, g)
    xi = modes.coordinates()
    nl = d - 1
    tg = mesh.pressure_nodes
    pts = sol.frame.to_physical(xi.reshape(xi.shape + (1, 1)), tg.reshape((1,) * nl + tg.shape))
    area = box.width ** nl / float(np.prod(box.lateral_shape))
    w = np.broadcast_to(area * wp[None, :] * mesh.jacobians[:, None], pres.shape)
    return pts, w, grad, pres


def bogovskii_ratio(sol: StripSolution, box: Box, center: Sequence[float], radius: float, q: float = 2.0) -> float:
    """||p - mean_D p||_{L^q(D)} / ||grad u||_{L^q(D)} on the half-ball D = B(center, radius) inside the box."""
    if q <= 1:
        raise DataError("q must exceed 1")
    c = np.asarray(center, dtype=float)
    pts, w, grad, pres = _gauss_point_fields(sol, box)
    inside = ((pts - c.reshape((-1,) + (1,) * (pts.ndim - 1))) ** 2).sum(axis=0) < radius ** 2
    inside &= pts[box.normal_axis] > 0
    if not inside.any():
        raise GeometryError("the half-ball contains no quadrature points")
    wi = np.where(inside, w, 0.0)
    pm = float((wi * pres).sum() / wi.sum())
    num = float((wi * np.abs(pres - pm) ** q).sum()) ** (1 / q)
    gnorm = np.sqrt((grad ** 2).sum(axis=(0, 1)))
    den = float((wi * gnorm ** q).sum()) ** (1 / q)
    scale = max(1.0, float(np.abs(pres).max()))
    if den <= 1e-14 * max(1.0, float(gnorm.max())):
        if num > 1e-10 * scale:
            raise ConsistencyError("vanishing velocity gradient with a nonconstant pressure", stage="bogovskii")
        return 0.0
    return num / den
