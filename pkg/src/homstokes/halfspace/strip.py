"""Stokes solver on a laterally periodic strip {y0 + W xi + t n : xi in [0,1)^(d-1), 0 < t < T}.

Lateral direction: Fourier-Galerkin in xi.  Normal direction: continuous
spectral elements for velocity and discontinuous P_(p-2) pressure on Gauss
points.  The weak form is
    a(V, v) - (P, div v) = (f, v),   -(q, div V) = 0,
with Dirichlet velocity at t = 0 and the natural traction-free condition
(C dV - P n = 0) at t = T.  Velocity components are Cartesian.

For a laterally uniform coefficient each lateral mode decouples and is solved
directly.  Otherwise GMRES on all modes is preconditioned by exact per-mode
solves with the laterally averaged coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import DataError, GeometryError, SolverError
from .sem import SpectralElementMesh

CoefficientFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StripGeometry:
    """Affine frame y = origin + W xi + t normal; W columns span the lateral period cell."""

    origin: np.ndarray
    W: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        d = self.origin.size
        if self.W.shape != (d, d - 1) or self.normal.shape != (d,):
            raise GeometryError("inconsistent strip frame shapes")
        if abs(np.linalg.det(self.J)) < 1e-12:
            raise GeometryError("degenerate strip frame")

    @property
    def dim(self) -> int:
        return self.origin.size

    @cached_property
    def J(self) -> np.ndarray:
        return np.column_stack([self.W, self.normal])

    @cached_property
    def K(self) -> np.ndarray:
        return np.linalg.inv(self.J)

    def to_physical(self, xi: np.ndarray, t: np.ndarray) -> np.ndarray:
        """xi (d-1, ...), t broadcastable -> points (d, ...)."""
        xi = np.asarray(xi, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(xi.shape[1:], t.shape)
        out = np.broadcast_to(self.origin.reshape((-1,) + (1,) * len(shape)), (self.dim,) + shape).copy()
        out += np.tensordot(self.W, np.broadcast_to(xi, (xi.shape[0],) + shape), axes=1)
        out += self.normal.reshape((-1,) + (1,) * len(shape)) * np.broadcast_to(t, shape)
        return out

    def to_frame(self, y: np.ndarray) -> np.ndarray:
        """Points (d, ...) -> frame coordinates (xi_1 .. xi_{d-1}, t)."""
        y = np.asarray(y, dtype=float)
        rel = y - self.origin.reshape((-1,) + (1,) * (y.ndim - 1))
        return np.tensordot(self.K, rel, axes=1)

    @property
    def cell_volume(self) -> float:
        d = self.dim
        G = self.W.T @ self.W
        return float(np.sqrt(np.linalg.det(G))) if d > 1 else 1.0


class LateralModes:
    """Fourier modes on a lateral grid of shape ``shape``; mode 0 is always kept."""

    def __init__(self, shape: Sequence[int], dealias: bool):
        self.shape = tuple(int(n) for n in shape)
        ks = np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n) for n in self.shape], indexing="ij")
        keep = np.ones(self.shape, dtype=bool)
        for k, n in zip(ks, self.shape):
            keep &= (np.abs(k) <= n // 3) if dealias else (np.abs(k) < n / 2)
        self.flat_index = np.flatnonzero(keep.ravel())
        self.k = np.stack([k.ravel()[self.flat_index] for k in ks], axis=1)  # (nm, d-1)
        self.count = self.flat_index.size
        self.size = int(np.prod(self.shape))
        self.zero = int(np.flatnonzero((self.k == 0).all(axis=1))[0])
        self.dealias = dealias

    @property
    def kappa(self) -> np.ndarray:
        return 2 * np.pi * self.k

    def coordinates(self) -> np.ndarray:
        axes = [np.arange(n) / n for n in self.shape]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def to_grid(self, coeffs: np.ndarray, axis: int, real: bool = True) -> np.ndarray:
        """Mode axis ``axis`` -> lateral grid axes at the same position (real part when ``real``)."""
        coeffs = np.moveaxis(coeffs, axis, -1)
        full = np.zeros(coeffs.shape[:-1] + (self.size,), dtype=complex)
        full[..., self.flat_index] = coeffs
        full = full.reshape(coeffs.shape[:-1] + self.shape)
        nl = len(self.shape)
        vals = np.fft.ifftn(full, axes=tuple(range(full.ndim - nl, full.ndim)), norm="forward")
        if real:
            vals = vals.real
        return np.moveaxis(vals, tuple(range(vals.ndim - nl, vals.ndim)), tuple(range(axis, axis + nl)))

    def from_grid(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Lateral grid axes starting at ``axis`` -> mode axis at that position."""
        nl = len(self.shape)
        values = np.moveaxis(values, tuple(range(axis, axis + nl)), tuple(range(values.ndim - nl, values.ndim)))
        spec = np.fft.fftn(values, axes=tuple(range(values.ndim - nl, values.ndim)), norm="forward")
        spec = spec.reshape(spec.shape[:-nl] + (self.size,))[..., self.flat_index]
        return np.moveaxis(spec, -1, axis)

    def phases(self, xi: np.ndarray) -> np.ndarray:
        """exp(2 pi i k . xi) for xi (d-1, npts) -> (nm, npts)."""
        return np.exp(2j * np.pi * (self.k @ np.asarray(xi, dtype=float).reshape(len(self.shape), -1)))


class _ModeMatrices:
    """Per-mode sparse matrices S(kappa) = S0 + kappa_a S1[a] + kappa_a kappa_b S2[a, b]
    for a coefficient that depends on t only, stored on one shared CSC pattern."""

    def __init__(self, mesh: SpectralElementMesh, C: np.ndarray, K: np.ndarray):
        d = K.shape[0]
        dl = d - 1
        p, E, nt = mesh.order, mesh.n_elements, mesh.n_nodes
        xg, wg, xp, wp, D, Ig, Dg = mesh.reference
        Jac = mesh.jacobians
        Dsc = mesh.scaled_derivative            # (E, q, n)
        Dgs = mesh.scaled_pressure_derivative   # (E, g, n)
        np_ = p - 1
        self.size = d * nt + E * np_
        self.d, self.nt = d, nt
        gi = mesh.global_index                  # (E, p+1)
        t_ = dl
        wJ = wg[None, :] * Jac[:, None]         # (E, q)

        rows, cols, fam = [], [], []
        nfam = 1 + dl + dl * dl
        shape_vv = (E, d, p + 1, d, p + 1)
        ii = np.arange(d).reshape(1, d, 1, 1, 1)
        r_vv = np.broadcast_to(ii * nt + gi.reshape(E, 1, p + 1, 1, 1), shape_vv)
        c_vv = np.broadcast_to(ii.reshape(1, 1, 1, d, 1) * nt + gi.reshape(E, 1, 1, 1, p + 1), shape_vv)
        vv = np.zeros((nfam,) + shape_vv, dtype=complex)
        # t-t part
        vv[0] = np.einsum("ijeq,eq,eqm,eqn->eimjn", C[t_, t_], wJ, Dsc, Dsc)
        # mixed lateral/normal parts, linear in kappa_a
        for a in range(dl):
            lt = -1j * np.einsum("ijem,em,emn->eimjn", C[a, t_], wJ, Dsc)
            tl = 1j * np.einsum("ijen,en,enm->eimjn", C[t_, a], wJ, Dsc)
            vv[1 + a] = lt + tl
            for b in range(dl):
                diag = np.einsum("ijem,em->eimj", C[a, b], wJ)
                blk = np.zeros(shape_vv, dtype=complex)
                idx = np.arange(p + 1)
                blk[:, :, idx, :, idx] = np.moveaxis(diag, 2, 0)
                vv[1 + dl + a * dl + b] = blk
        rows.append(r_vv.ravel())
        cols.append(c_vv.ravel())
        fam.append(vv.reshape(nfam, -1))

        # pressure column in momentum rows: (E, j, m, g), and continuity rows: (E, g, j, n)
        wgJ = wp[None, :] * Jac[:, None]        # (E, g)
        shape_vp = (E, d, p + 1, np_)
        r_vp = np.broadcast_to(np.arange(d)[None, :, None, None] * nt + gi[:, None, :, None], shape_vp)
        c_vp = np.broadcast_to(d * nt + (np.arange(E)[:, None, None, None] * np_
                                         + np.arange(np_)[None, None, None, :]), shape_vp)
        vp = np.zeros((nfam,) + shape_vp, dtype=complex)
        vp[0] = -np.einsum("eg,j,egm->ejmg", wgJ, K[t_], Dgs)
        for a in range(dl):
            vp[1 + a] = 1j * np.einsum("eg,j,gm->ejmg", wgJ, K[a], Ig)
        rows.append(r_vp.ravel())
        cols.append(c_vp.ravel())
        fam.append(vp.reshape(nfam, -1))

        shape_pv = (E, np_, d, p + 1)
        r_pv = np.broadcast_to(d * nt + np.arange(E)[:, None, None, None] * np_
                               + np.arange(np_)[None, :, None, None], shape_pv)
        c_pv = np.broadcast_to(np.arange(d)[None, None, :, None] * nt + gi[:, None, None, :], shape_pv)
        pv = np.zeros((nfam,) + shape_pv, dtype=complex)
        pv[0] = -np.einsum("eg,j,egn->egjn", wgJ, K[t_], Dgs)
        for a in range(dl):
            pv[1 + a] = -1j * np.einsum("eg,j,gn->egjn", wgJ, K[a], Ig)
        rows.append(r_pv.ravel())
        cols.append(c_pv.ravel())
        fam.append(pv.reshape(nfam, -1))

        dir_rows = np.arange(d) * nt
        diag = np.zeros((nfam, d), dtype=complex)
        diag[0] = 1.0
        rows.append(dir_rows)
        cols.append(dir_rows)
        fam.append(diag)

        r = np.concatenate(rows)
        c = np.concatenate(cols)
        data = np.concatenate(fam, axis=1)
        dirichlet_row = np.isin(r, dir_rows) & ~((r == c) & np.isin(c, dir_rows) &
                                                 (np.arange(r.size) >= r.size - d))
        data[:, dirichlet_row] = 0.0
        key = c.astype(np.int64) * self.size + r
        uniq, inverse = np.unique(key, return_inverse=True)
        self.indices = (uniq % self.size).astype(np.int32)
        ucols = uniq // self.size
        self.indptr = np.searchsorted(ucols, np.arange(self.size + 1)).astype(np.int32)
        nu = uniq.size
        summed = np.empty((nfam, nu), dtype=complex)
        for f in range(nfam):
            summed[f] = (np.bincount(inverse, weights=data[f].real, minlength=nu)
                         + 1j * np.bincount(inverse, weights=data[f].imag, minlength=nu))
        self.families = summed
        self.dl = dl

    def matrix(self, kappa: np.ndarray) -> sp.csc_matrix:
        dl = self.dl
        data = self.families[0].copy()
        for a in range(dl):
            data += kappa[a] * self.families[1 + a]
            for b in range(dl):
                data += kappa[a] * kappa[b] * self.families[1 + dl + a * dl + b]
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.size, self.size))

    def factor(self, kappa: np.ndarray):
        return spla.splu(self.matrix(kappa), permc_spec="COLAMD")


class StripSolver:
    """Discretization of one coefficient on one strip; reusable for many right-hand sides."""

    def __init__(self, coefficient: CoefficientFn, frame: StripGeometry, lateral_shape: Sequence[int],
                 mesh: SpectralElementMesh, dealias: bool | None = None, uniform_tol: float = 1e-13):
        d = frame.dim
        if len(lateral_shape) != d - 1:
            raise DataError("lateral grid must have d - 1 axes")
        self.frame = frame
        self.mesh = mesh
        self.dim = d
        self.lateral_shape = tuple(int(n) for n in lateral_shape)
        K = frame.K
        nl = d - 1
        xi = LateralModes(self.lateral_shape, False).coordinates().reshape(nl, -1)   # (d-1, Nlat)
        t = mesh.element_nodes                                                        # (E, q)

        def frame_coefficient(cols: np.ndarray) -> np.ndarray:
            pts = frame.to_physical(xi[:, cols, None, None], t[None])                 # (d, n, E, q)
            A = np.asarray(coefficient(pts), dtype=float)
            if A.shape != (d,) * 4 + pts.shape[1:]:
                raise DataError(f"coefficient returned shape {A.shape}")
            if not np.all(np.isfinite(A)):
                raise DataError("coefficient has non-finite values in the strip")
            return np.einsum("ax,by,xyij...->abij...", K, K, A, optimize=True)

        # uniformity is decided chunk by chunk so that constant coefficients never
        # materialize the full (d, d, d, d, *Nlat, E, q) array
        nlat = xi.shape[1]
        chunk = max(1, int(4e6 // (d ** 4 * t.size)))
        ref = frame_coefficient(np.arange(1))[..., 0, :, :]
        scale = max(1.0, float(np.abs(ref).max()))
        total = np.zeros_like(ref)
        uniform = True
        for start in range(0, nlat, chunk):
            Cc = frame_coefficient(np.arange(start, min(nlat, start + chunk)))
            total += Cc.sum(axis=4)
            if uniform and np.abs(Cc - ref[..., None, :, :]).max() > uniform_tol * scale:
                uniform = False
                break
        self.uniform = uniform
        if uniform:
            Cbar, C = total / nlat, None
        else:
            C = frame_coefficient(np.arange(nlat)).reshape((d,) * 4 + self.lateral_shape + t.shape)
            Cbar = C.mean(axis=tuple(range(4, 4 + nl)))
        if dealias is None:
            dealias = not self.uniform
        self.modes = LateralModes(self.lateral_shape, dealias)
        self.C = C
        self.Cbar = Cbar
        self.K = K
        self._mats = _ModeMatrices(mesh, Cbar, K)
        self._lus: list | None = None

    # layout ----------------------------------------------------------------------
    @property
    def n_unknowns_per_mode(self) -> int:
        return self._mats.size

    def _split(self, x: np.ndarray):
        nm, d, nt = self.modes.count, self.dim, self.mesh.n_nodes
        x = x.reshape(nm, -1)
        return x[:, : d * nt].reshape(nm, d, nt), x[:, d * nt:].reshape(nm, self.mesh.n_elements, -1)

    # matrix-free operator -----------------------------------------------------------
    def apply(self, U: np.ndarray, P: np.ndarray) -> np.ndarray:
        """Full operator on (U (nm, d, nt), P (nm, E, p-1)); returns (nm, size)."""
        mesh, modes, d = self.mesh, self.modes, self.dim
        dl = d - 1
        xg, wg, xp, wp, D, Ig, Dg = mesh.reference
        Jac = mesh.jacobians
        kap = modes.kappa                                   # (nm, dl)
        Ul = mesh.gather(U)                                  # (nm, d, E, q)
        dt = np.einsum("eqn,mjen->mjeq", mesh.scaled_derivative, Ul)
        G = np.empty((d, d) + Ul.shape[:1] + Ul.shape[2:], dtype=complex)   # [j, b, m, E, q]
        for b in range(dl):
            G[:, b] = np.moveaxis(1j * kap[:, b, None, None, None] * Ul, 0, 1)
        G[:, dl] = np.moveaxis(dt, 0, 1)
        if self.uniform:
            S = np.einsum("abijeq,jbmeq->aimeq", self.Cbar, G, optimize=True)
        else:
            g = modes.to_grid(G, axis=2, real=False)
            sig = np.einsum("abij...,jb...->ai...", self.C, g, optimize=True)
            S = modes.from_grid(sig, axis=2)                 # (a, i, m, E, q)
        wJ = wg[None, :] * Jac[:, None]
        loc = np.einsum("imeq,eq,eqn->mien", S[dl], wJ, mesh.scaled_derivative)
        for a in range(dl):
            loc += np.moveaxis(-1j * kap[None, :, a, None, None] * S[a] * wJ, 0, 1)
        mom = mesh.scatter_add(loc)                          # (nm, i, nt)
        wgJ = wp[None, :] * Jac[:, None]
        K = self.K
        Dgs = mesh.scaled_pressure_derivative
        # pressure contribution: -(P, div v)
        pt = -np.einsum("meg,eg,egn->men", P, wgJ, Dgs)       # normal-derivative part per unit K[t, j]
        pl = np.einsum("meg,eg,gn->men", P, wgJ, Ig)          # lateral part
        contrib = np.einsum("j,men->mjen", K[dl], pt)
        for a in range(dl):
            contrib += 1j * kap[:, a, None, None, None] * np.einsum("j,men->mjen", K[a], pl)
        mom += mesh.scatter_add(contrib)
        mom[:, :, 0] = U[:, :, 0]
        # continuity: -(q, div V)
        Ug = np.einsum("gn,mjen->mjeg", Ig, Ul)
        Udg = np.einsum("egn,mjen->mjeg", Dgs, Ul)
        divV = np.einsum("j,mjeg->meg", K[dl], Udg)
        for a in range(dl):
            divV += 1j * kap[:, a, None, None] * np.einsum("j,mjeg->meg", K[a], Ug)
        cont = -wgJ[None] * divV
        nm = modes.count
        return np.concatenate([mom.reshape(nm, -1), cont.reshape(nm, -1)], axis=1)

    # right-hand sides ---------------------------------------------------------------
    def rhs(self, V0: np.ndarray | None = None, f: np.ndarray | None = None) -> np.ndarray:
        """V0: lateral grid values (d, *Nlat) at t = 0; f: body force (d, *Nlat, E, q)."""
        mesh, modes, d = self.mesh, self.modes, self.dim
        nm, nt = modes.count, mesh.n_nodes
        mom = np.zeros((nm, d, nt), dtype=complex)
        if f is not None:
            fh = modes.from_grid(np.asarray(f, dtype=float), axis=1)          # (d, nm, E, q)
            wJ = mesh.reference[1][None, :] * mesh.jacobians[:, None]
            mom += mesh.scatter_add(np.moveaxis(fh * wJ, 0, 1))
        if V0 is not None:
            mom[:, :, 0] = np.moveaxis(modes.from_grid(np.asarray(V0, dtype=float), axis=1), 0, 1)
        else:
            mom[:, :, 0] = 0.0
        cont = np.zeros((nm, mesh.n_pressure), dtype=complex)
        return np.concatenate([mom.reshape(nm, -1), cont], axis=1)

    def sample_points(self) -> np.ndarray:
        """Physical points (d, *Nlat, E, q) where coefficients and forces are sampled."""
        xi = self.modes.coordinates()
        nl = self.dim - 1
        t = self.mesh.element_nodes
        return self.frame.to_physical(xi.reshape(xi.shape + (1, 1)), t.reshape((1,) * nl + t.shape))

    # solves -------------------------------------------------------------------------
    def _factors(self):
        if self._lus is None:
            self._lus = [self._mats.factor(k) for k in self.modes.kappa]
        return self._lus

    def _precondition(self, R: np.ndarray) -> np.ndarray:
        out = np.empty_like(R)
        for m, lu in enumerate(self._factors()):
            out[m] = lu.solve(R[m])
        return out

    def solve(self, rhs_list: Sequence[np.ndarray], tol: float = 1e-10, max_iterations: int = 300,
              restart: int = 80) -> list["StripSolution"]:
        """Solve for several right-hand sides (each (nm, size)) sharing the operator."""
        rhs_list = [np.asarray(r, dtype=complex) for r in rhs_list]
        if self.uniform:
            return self._solve_modes(rhs_list)
        return [self._gmres(r, tol, max_iterations, restart) for r in rhs_list]

    def _solve_modes(self, rhs_list: list[np.ndarray]) -> list["StripSolution"]:
        """Direct per-mode solves; residuals come from the same per-mode matrices."""
        nr = len(rhs_list)
        X = [np.empty_like(r) for r in rhs_list]
        res2 = np.zeros(nr)
        for m, kap in enumerate(self.modes.kappa):
            M = self._mats.matrix(kap)
            B = np.stack([r[m] for r in rhs_list], axis=1)
            sol = spla.splu(M, permc_spec="COLAMD").solve(B)
            res2 += (np.abs(B - M @ sol) ** 2).sum(axis=0)
            for r in range(nr):
                X[r][m] = sol[:, r]
        out = []
        for r, x, e2 in zip(rhs_list, X, res2):
            nb = float(np.linalg.norm(r))
            out.append(StripSolution(self, *self._split(x), float(np.sqrt(e2)) / nb if nb > 0 else float(np.sqrt(e2)),
                                     0))
        return out

    def _relative_residual(self, x: np.ndarray, b: np.ndarray) -> float:
        U, P = self._split(x)
        r = b - self.apply(U, P)
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))

    def _gmres(self, b: np.ndarray, tol: float, max_iterations: int, restart: int) -> "StripSolution":
        nm, size = b.shape
        nb = np.linalg.norm(b)
        if nb == 0:
            return StripSolution(self, *self._split(np.zeros_like(b)), 0.0, 0)

        def matvec(z):
            y = self._precondition(z.reshape(nm, size))
            return self.apply(*self._split(y)).ravel()

        lin = spla.LinearOperator((nm * size,) * 2, matvec=matvec, dtype=complex)
        x = np.zeros_like(b)
        history: list[float] = []
        iterations = 0
        target = 0.3 * tol
        while True:
            r = b - self.apply(*self._split(x))
            rel = float(np.linalg.norm(r) / nb)
            history.append(rel)
            if rel <= tol:
                break
            if iterations >= max_iterations:
                raise SolverError(f"strip solve did not converge: relative residual {rel:.3e} "
                                  f"after {iterations} iterations", history, stage="strip")
            counter: list[float] = []
            z, _ = spla.gmres(lin, (r / nb).ravel(), rtol=0.0, atol=target, restart=restart,
                              maxiter=max(1, (max_iterations - iterations) // restart + 1),
                              callback=lambda v: counter.append(float(v)), callback_type="pr_norm")
            iterations += max(1, len(counter))
            history.extend(counter)
            x = x + nb * self._precondition(z.reshape(nm, size))
            target = max(target * 0.1, 1e-15)
        return StripSolution(self, *self._split(x), rel, iterations, history)


class StripSolution:
    """Modal velocity (nm, d, nt) and pressure (nm, E, p-1) on a strip."""

    def __init__(self, solver: StripSolver, U: np.ndarray, P: np.ndarray, residual: float, iterations: int,
                 history: list[float] | None = None):
        self.solver = solver
        self.U = U
        self.P = P
        self.residual = residual
        self.iterations = iterations
        self.history = history or [residual]

    @property
    def mesh(self) -> SpectralElementMesh:
        return self.solver.mesh

    @property
    def modes(self) -> LateralModes:
        return self.solver.modes

    @property
    def frame(self) -> StripGeometry:
        return self.solver.frame

    # grid values -------------------------------------------------------------------
    def velocity_grid(self) -> np.ndarray:
        """(d, *Nlat, nt) velocity at lateral grid points and velocity nodes."""
        return self.modes.to_grid(np.moveaxis(self.U, 0, 1), axis=1)

    def pressure_grid(self) -> np.ndarray:
        """(*Nlat, nt) pressure at velocity nodes; interface values average both sides."""
        mesh = self.mesh
        xg = mesh.reference[0]
        xp = mesh.reference[2]
        from .sem import interpolation_matrix
        Ip = interpolation_matrix(xp, xg)                     # (q, g)
        loc = np.einsum("qg,meg->meq", Ip, self.P)
        count = mesh.scatter_add(np.ones((1,) + loc.shape[1:]))[0]
        nodal = mesh.scatter_add(loc) / count
        return self.modes.to_grid(nodal, axis=0)

    def slice_means(self) -> np.ndarray:
        """(nt, d) lateral averages of velocity at each node height."""
        return self.U[self.modes.zero].real.T.copy()

    def mean_at(self, t: np.ndarray) -> np.ndarray:
        """(len(t), d) lateral averages at arbitrary heights."""
        e, Wt = self.mesh.velocity_interpolation(t)
        loc = self.mesh.gather(self.U[self.modes.zero])       # (d, E, q)
        return np.einsum("tq,jtq->tj", Wt, loc[:, e, :]).real

    def frame_gradient_modes(self) -> np.ndarray:
        """(nm, j, b, nt) modal frame-coordinate gradient at nodes, interfaces averaged."""
        mesh, modes = self.mesh, self.modes
        d = self.solver.dim
        Ul = mesh.gather(self.U)
        dt = np.einsum("eqn,mjen->mjeq", mesh.scaled_derivative, Ul)
        count = mesh.scatter_add(np.ones((1,) + dt.shape[2:]))[0]
        dtn = mesh.scatter_add(dt) / count
        G = np.empty(self.U.shape[:2] + (d,) + self.U.shape[2:], dtype=complex)
        for b in range(d - 1):
            G[:, :, b] = 1j * modes.kappa[:, b, None, None] * self.U
        G[:, :, d - 1] = dtn
        return G

    def physical_gradient_grid(self) -> np.ndarray:
        """(j, alpha, *Nlat, nt) physical gradient d u_j / d y_alpha."""
        G = self.frame_gradient_modes()
        Gp = np.einsum("ba,mjbn->mjan", self.solver.K, G)
        return self.modes.to_grid(np.moveaxis(Gp, 0, 2), axis=2)

    def boundary_gradient_modes(self) -> np.ndarray:
        """(nm, j, alpha) physical gradient trace at t = 0 (one-sided element derivative)."""
        mesh, d = self.mesh, self.solver.dim
        D0 = mesh.scaled_derivative[0, 0]                    # (p+1,)
        Ul0 = self.U[:, :, : mesh.order + 1]
        G = np.empty(self.U.shape[:2] + (d,), dtype=complex)
        for b in range(d - 1):
            G[:, :, b] = 1j * self.modes.kappa[:, b, None] * self.U[:, :, 0]
        G[:, :, d - 1] = Ul0 @ D0
        return np.einsum("ba,mjb->mja", self.solver.K, G)

    def boundary_pressure_modes(self) -> np.ndarray:
        """(nm,) pressure trace at t = 0 from the first element's polynomial."""
        from .sem import interpolation_matrix
        xp = self.mesh.reference[2]
        w = interpolation_matrix(xp, np.array([-1.0]))[0]
        return self.P[:, 0, :] @ w

    # point evaluation ---------------------------------------------------------------
    def evaluate(self, points: np.ndarray, gradient: bool = False):
        """Velocity (d, n) and pressure (n) at physical points (d, n); with gradient also (d, d, n)."""
        pts = np.asarray(points, dtype=float).reshape(self.solver.dim, -1)
        z = self.frame.to_frame(pts)
        d = self.solver.dim
        ph = self.modes.phases(z[: d - 1])                    # (nm, n)
        t = z[d - 1]
        mesh = self.mesh
        e, Wt = mesh.velocity_interpolation(t)
        Ul = mesh.gather(self.U)                              # (nm, d, E, q)
        loc = Ul[:, :, e, :]                                  # (nm, d, n, q)
        um = np.einsum("mjnq,nq->mjn", loc, Wt)
        u = np.einsum("mjn,mn->jn", um, ph).real
        ep, Wp = mesh.pressure_interpolation(t)
        pm = np.einsum("mng,ng->mn", self.P[:, ep, :], Wp)
        p = np.einsum("mn,mn->n", pm, ph).real
        if not gradient:
            return u, p
        _, Wd = mesh.velocity_derivative_interpolation(t)
        dtm = np.einsum("mjnq,nq->mjn", loc, Wd)
        G = np.empty((d, d, pts.shape[1]), dtype=complex)
        for b in range(d - 1):
            G[:, b] = np.einsum("mjn,mn->jn", 1j * self.modes.kappa[:, b, None, None] * um, ph)
        G[:, d - 1] = np.einsum("mjn,mn->jn", dtm, ph)
        grad = np.einsum("ba,jbn->jan", self.solver.K, G.real)
        return u, p, grad
