"""Closed-form boundary-layer tail from boundary ergodic means and hyperplane Green integrals.

Sign convention: ``nu = -n`` is the outward unit normal of {y . n > s}.  The tail is
  U_i = M(-nu_a g_j A[b,a,k,j]) IG[b,k,i] + M(nu_j g_j) IPi[i]
      + [-M(nu_a g_l A[c,a,k,l] d_c chi*[b,j,k]) + M(nu_r g_r pi*[b,j])] IG[b,j,i]
      + [-M(nu_a g_l A[c,a,k,l] d_c ubl*[b,j,k]) + M(nu_r g_r pbl*[b,j])] IG[b,j,i]
where IG[b,k,i] and IPi[i] integrate the derivative of the adjoint homogenized
half-space Green function and its pressure over the boundary, for a unit
source at distance one from the wall.  They satisfy
  -nu_a A0[b,a,k,j] IG[b,k,i] + IPi[i] nu_j = delta_ij.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .correctors import CorrectorSet, HomogenizedTensor, corrector_set
from .errors import ConsistencyError, DataError, SolverError
from .fields.geometry import HalfSpaceGeometry, RationalNormal
from .fields.periodic import BoundaryData, EllipticTensorField, PeriodicField
from .halfspace.layer import (BoundaryLayerSolution, extract_tail, solve_boundary_layer,
                              solve_boundary_layers, to_cylinder)


# ergodic means -------------------------------------------------------------------------
@dataclass
class ErgodicMeanEstimate:
    value: float
    windows: list[tuple[float, float]] = field(default_factory=list)
    converged: bool = True


def _plane_frame(geometry: HalfSpaceGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Origin s n and an orthonormal tangential basis (columns)."""
    return geometry.s * geometry.n, geometry.N


def _lattice_cell_points(geometry: HalfSpaceGeometry, points_per_unit: int) -> np.ndarray:
    cls = geometry.classification
    W = cls.basis.astype(float)
    shape = []
    for a in range(W.shape[1]):
        n = int(np.ceil(points_per_unit * max(1.0, float(np.abs(W[:, a]).max()))))
        shape.append(max(8, n + n % 2))
    axes = [np.arange(n) / n for n in shape]
    xi = np.stack(np.meshgrid(*axes, indexing="ij"))
    origin = geometry.s * geometry.n
    return origin.reshape((-1,) + (1,) * len(shape)) + np.tensordot(W, xi, axes=1)


def ergodic_mean(trace: Callable[[np.ndarray], np.ndarray] | PeriodicField, geometry: HalfSpaceGeometry,
                 window_schedule: Sequence[float] | None = None, tol: float = 1e-3,
                 points_per_unit: int = 32) -> ErgodicMeanEstimate:
    """Mean of a scalar trace over the boundary plane {y . n = s}.

    Rational n: trapezoid average over one tangential lattice cell (exact for
    trigonometric polynomials resolved by the cell grid).  Otherwise: averages over
    square windows [-R, R]^(d-1) in an orthonormal tangential frame; for a
    PeriodicField the window average of each Fourier mode is evaluated in closed form.
    """
    if isinstance(geometry.classification, RationalNormal):
        pts = _lattice_cell_points(geometry, points_per_unit)
        vals = trace.evaluate(pts) if isinstance(trace, PeriodicField) else trace(pts)
        return ErgodicMeanEstimate(float(np.mean(vals)), [], True)
    origin, N = _plane_frame(geometry)
    if isinstance(trace, PeriodicField):
        sched = window_schedule or [10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0]
        grid = trace.grid
        spec = trace.spectrum / grid.size
        if trace.lead_shape:
            raise DataError("ergodic_mean expects a scalar trace")
        ks = np.stack([k.ravel() for k in np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n) for n in grid.shape],
                                                      indexing="ij")])
        c = spec.ravel()
        nyq = np.zeros(c.size, dtype=bool)
        for a, n in enumerate(grid.shape):
            nyq |= np.abs(ks[a]) == n // 2
        c = np.where(nyq, 0.0, c)
        phase = np.exp(2j * np.pi * (ks.T @ origin))
        omega = N.T @ ks                                   # (d-1, modes)
        windows = []
        for R in sched:
            fac = np.prod(np.sinc(2.0 * omega * R), axis=0)
            windows.append((float(R), float(np.real(np.sum(c * phase * fac)))))
    else:
        sched = window_schedule or [4.0, 8.0, 16.0, 32.0]
        windows = []
        dl = geometry.dim - 1
        for R in sched:
            npts = int(np.ceil(16 * R))
            x, w = np.polynomial.legendre.leggauss(npts)
            x = x * R
            w = w / 2.0
            Z = np.stack(np.meshgrid(*([x] * dl), indexing="ij"))
            Wt = np.prod(np.stack(np.meshgrid(*([w] * dl), indexing="ij")), axis=0)
            pts = origin.reshape((-1,) + (1,) * dl) + np.tensordot(N, Z, axes=1)
            windows.append((float(R), float(np.sum(Wt * trace(pts)))))
    converged = len(windows) >= 2 and abs(windows[-1][1] - windows[-2][1]) < tol
    return ErgodicMeanEstimate(windows[-1][1], windows, converged)


# Green integrals ---------------------------------------------------------------------------
@dataclass
class GreenHyperplaneIntegrals:
    I_G: np.ndarray    # (d, d, d) indexed [beta, k, i]
    I_Pi: np.ndarray   # (d,)
    identity_error: float
    condition: float


def green_identity_error(A0: np.ndarray, n: np.ndarray, I_G: np.ndarray, I_Pi: np.ndarray) -> float:
    nu = -np.asarray(n, dtype=float)
    d = nu.size
    lhs = -np.einsum("a,bakj,bki->ji", nu, A0, I_G) + np.outer(nu, I_Pi)
    return float(np.abs(lhs - np.eye(d)).max())


def halfplane_green_integrals(A0: HomogenizedTensor | np.ndarray, geometry: HalfSpaceGeometry | np.ndarray
                              ) -> GreenHyperplaneIntegrals:
    """Boundary integrals of the adjoint homogenized Green kernel through its zero tangential mode.

    The boundary-plane average of the Green column i is a(i) t below the source and
    constant above it; continuity of traction across t = 1 gives
    M a - n pi0 = e_i, n . a = 0 with M[k, l] = A0[b, a, l, k] n_a n_b.
    """
    A0 = A0.A0 if isinstance(A0, HomogenizedTensor) else np.asarray(A0, dtype=float)
    n = geometry.n if isinstance(geometry, HalfSpaceGeometry) else np.asarray(geometry, dtype=float)
    n = n / np.linalg.norm(n)
    d = n.size
    M = np.einsum("balk,a,b->kl", A0, n, n)
    S = np.zeros((d + 1, d + 1))
    S[:d, :d] = M
    S[:d, d] = -n
    S[d, :d] = n
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond > 1e12:
        raise SolverError(f"normal-mode matrix is ill-conditioned (condition number {cond:.3e})",
                          stage="green-integrals")
    rhs = np.zeros((d + 1, d))
    rhs[:d] = np.eye(d)
    sol = np.linalg.solve(S, rhs)
    a, pi0 = sol[:d], sol[d]
    I_G = np.einsum("b,ki->bki", n, a)
    I_Pi = pi0.copy()
    err = green_identity_error(A0, n, I_G, I_Pi)
    if err > 1e-8:
        raise ConsistencyError(f"hyperplane Green integrals violate the unit-data identity by {err:.3e}",
                               stage="green-integrals")
    return GreenHyperplaneIntegrals(I_G, I_Pi, err, cond)


# boundary-layer corrector traces ---------------------------------------------------------
@dataclass
class BLCorrectorTraces:
    """Per (beta, j): velocity gradient traces [beta, j, k, gamma, *Nlat] and pressure [beta, j, *Nlat]."""

    gradient: np.ndarray
    pressure: np.ndarray
    boundary_points: np.ndarray
    dirichlet_error: float
    M2: np.ndarray
    solutions: list[BoundaryLayerSolution] = field(default_factory=list, repr=False)


def bl_corrector_traces(Astar: EllipticTensorField, chi_star: np.ndarray | PeriodicField,
                        geometry: HalfSpaceGeometry, T: float = 8.0, tol: float = 1e-10,
                        points_per_unit: int = 16, keep_solutions: bool = False) -> BLCorrectorTraces:
    """Solve the half-space problems with coefficient A* and Dirichlet data -chi*[beta, j]."""
    d = Astar.dim
    chi = chi_star if isinstance(chi_star, PeriodicField) else PeriodicField(Astar.grid, chi_star)
    zero = BoundaryData.constant(Astar.grid, np.zeros(d))
    cyl = to_cylinder(Astar, zero, geometry, T, points_per_unit=points_per_unit)
    pts = cyl.lateral_points()
    nl = len(cyl.lateral_shape)
    if chi.max_norm() == 0.0:
        shape = cyl.lateral_shape
        return BLCorrectorTraces(np.zeros((d, d, d, d) + shape), np.zeros((d, d) + shape), pts, 0.0,
                                 np.zeros((d, d)), [])
    chi_b = chi.evaluate(pts)                               # (beta, j, k, *Nlat)
    data = [-chi_b[b, j] for b in range(d) for j in range(d)]
    sols = solve_boundary_layers(cyl, data, tol)
    grads, press, errs, m2 = [], [], [], []
    for s, V0 in zip(sols, data):
        G, p = s.boundary_traces()
        grads.append(G)
        press.append(p)
        errs.append(float(np.abs(s.V[(slice(None),) + (slice(None),) * nl + (0,)] - V0).max()))
        m2.append(s.M_q(2.0))
    grad = np.stack(grads).reshape((d, d, d, d) + cyl.lateral_shape)
    pres = np.stack(press).reshape((d, d) + cyl.lateral_shape)
    return BLCorrectorTraces(grad, pres, pts, max(errs), np.array(m2).reshape(d, d),
                             sols if keep_solutions else [])


# the formula ------------------------------------------------------------------------------
@dataclass
class TailFormulaResult:
    U: np.ndarray
    term_breakdown: np.ndarray   # (4, d)
    cross_check: float | None
    U_extrapolation: np.ndarray | None = None
    extrapolation_error: float | None = None
    integrals: GreenHyperplaneIntegrals | None = None

    def report(self) -> str:
        lines = ["tail formula", "  U = " + " ".join(f"{x:.12g}" for x in self.U)]
        for k, row in enumerate(self.term_breakdown, 1):
            lines.append(f"  line {k}: " + " ".join(f"{x:.12g}" for x in row))
        if self.U_extrapolation is not None:
            lines.append("  U (extrapolated) = " + " ".join(f"{x:.12g}" for x in self.U_extrapolation))
            lines.append(f"  cross_check = {self.cross_check:.3e}")
        return "\n".join(lines) + "\n"

    def to_csv(self, config_hash: str = "") -> str:
        buf = io.StringIO()
        if config_hash:
            buf.write(f"# config_sha256={config_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["component", "U", "line1", "line2", "line3", "line4", "U_extrapolation", "cross_check"])
        for i, u in enumerate(self.U):
            ue = "" if self.U_extrapolation is None else repr(float(self.U_extrapolation[i]))
            cc = "" if self.cross_check is None else repr(float(self.cross_check))
            w.writerow([i + 1, repr(float(u))] + [repr(float(x)) for x in self.term_breakdown[:, i]] + [ue, cc])
        return buf.getvalue()


def compute_tail_formula(A: EllipticTensorField, g: BoundaryData, geometry: HalfSpaceGeometry,
                         correctors: CorrectorSet | None = None, tol: float = 1e-10, T: float = 8.0,
                         points_per_unit: int = 16, cross_check: bool = True) -> TailFormulaResult:
    d = A.dim
    if g.grid.dim != d or geometry.dim != d:
        raise DataError("coefficient, data and geometry dimensions differ")
    cs = correctors if correctors is not None else corrector_set(A, max(tol, 1e-12))
    adj = cs.adjoint
    A0 = cs.A0
    integrals = halfplane_green_integrals(A0, geometry)
    IG, IPi = integrals.I_G, integrals.I_Pi
    traces = bl_corrector_traces(adj.A, adj.first.chi, geometry, T, tol, points_per_unit)
    pts = traces.boundary_points
    nl = pts.ndim - 1
    cyl_geometry = geometry
    lat = tuple(range(-nl, 0))
    nu = -_cylinder_normal(geometry)
    gv = g.evaluate(pts)                                     # (j, *Nlat)
    Av = A.evaluate(pts)                                     # (a, b, i, j, *Nlat)
    chi_star = PeriodicField(adj.A.grid, adj.first.chi)
    grad_chi = chi_star.gradient().evaluate(pts)             # (beta, j, k, gamma, *Nlat)
    pi_star = PeriodicField(adj.A.grid, adj.first.pi).evaluate(pts)   # (beta, j, *Nlat)

    def mean(x):
        return x.mean(axis=lat)

    nu_g = np.einsum("r,r...->...", nu, gv)
    # line 1: M(-nu_a g_j A[b,a,k,j]) IG[b,k,i]
    m1 = -mean(np.einsum("a,j...,bakj...->bk...", nu, gv, Av))
    line1 = np.einsum("bk,bki->i", m1, IG)
    line2 = mean(nu_g) * IPi
    flux_g = np.einsum("a,l...,cakl...->ck...", nu, gv, Av)          # (gamma, k, *Nlat)
    m3 = -mean(np.einsum("ck...,bjkc...->bj...", flux_g, grad_chi)) + mean(nu_g * pi_star)
    line3 = np.einsum("bj,bji->i", m3, IG)
    m4 = -mean(np.einsum("ck...,bjkc...->bj...", flux_g, traces.gradient)) + mean(nu_g * traces.pressure)
    line4 = np.einsum("bj,bji->i", m4, IG)
    terms = np.stack([line1, line2, line3, line4])
    U = terms.sum(axis=0)
    res = TailFormulaResult(U, terms, None, integrals=integrals)
    if cross_check:
        sol = solve_boundary_layer(to_cylinder(A, g, cyl_geometry, T, points_per_unit=points_per_unit), tol)
        tv = extract_tail(sol)
        res.U_extrapolation = tv.U
        res.extrapolation_error = tv.error_estimate
        res.cross_check = float(np.abs(U - tv.U).max())
    return res


def _cylinder_normal(geometry: HalfSpaceGeometry) -> np.ndarray:
    cls = geometry.classification
    if isinstance(cls, RationalNormal):
        return geometry.n
    v = np.array(cls.approximant, dtype=float)
    return v / np.linalg.norm(v)
