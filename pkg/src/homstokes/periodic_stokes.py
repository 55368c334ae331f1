"""Fourier-Galerkin solver for variable-coefficient Stokes systems on the torus.

The system is
    -d_alpha(A[alpha, beta, i, j] d_beta u_j) + d_i p = f_i + d_alpha F[alpha, i],
    d_j u_j = h,
with u and p of zero mean.  Unknowns are the Fourier modes with |k_a| <= N_a/3
(two-thirds rule); coefficient products are formed on the grid and projected
back onto the same modes, so aliasing never reaches the retained modes as long
as the coefficient is resolved on the grid.  Residuals are measured on the
retained modes.  Norms are root-mean-square over the cell (Parseval).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse.linalg as spla

from .errors import DataError, SolvabilityError, SolverError
from .fields.periodic import EllipticTensorField, GridSpec, PeriodicField

TWO_PI_I = 2j * np.pi


class SpectralStokesOperator:
    """Discrete Stokes operator of one coefficient field on its grid."""

    def __init__(self, A: EllipticTensorField):
        self.A = A
        self.grid: GridSpec = A.grid
        self.dim = A.dim
        grid = self.grid
        ks = np.meshgrid(*[np.fft.fftfreq(n, 1.0 / n) for n in grid.shape], indexing="ij")
        keep = np.ones(grid.shape, dtype=bool)
        for k, n in zip(ks, grid.shape):
            keep &= np.abs(k) <= n // 3
        keep[(0,) * grid.dim] = False
        self.mask = keep
        self.flat_index = np.flatnonzero(keep.ravel())
        self.k = np.stack([k.ravel()[self.flat_index] for k in ks])  # (d, m)
        self.nmodes = self.flat_index.size
        self._coef = np.ascontiguousarray(A.samples)

    # transforms ------------------------------------------------------------------
    def from_grid(self, values: np.ndarray) -> np.ndarray:
        """Retained Fourier coefficients (normalized so that samples = sum c e^{2 pi i k y})."""
        d = self.dim
        lead = values.shape[: values.ndim - d]
        spec = np.fft.fftn(values, axes=tuple(range(len(lead), values.ndim)), norm="forward")
        return spec.reshape(lead + (-1,))[..., self.flat_index]

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        lead = coeffs.shape[:-1]
        full = np.zeros(lead + (self.grid.size,), dtype=complex)
        full[..., self.flat_index] = coeffs
        full = full.reshape(lead + self.grid.shape)
        return np.fft.ifftn(full, axes=tuple(range(len(lead), full.ndim)), norm="forward").real

    def project(self, values: np.ndarray) -> np.ndarray:
        """Band-limit grid values to the retained modes (mean removed)."""
        return self.to_grid(self.from_grid(values))

    # operator --------------------------------------------------------------------
    def gradient_coeffs(self, c: np.ndarray) -> np.ndarray:
        """Coefficients of d_beta c, with beta appended after the lead axes."""
        return TWO_PI_I * c[..., None, :] * self.k

    def flux(self, u_hat: np.ndarray) -> np.ndarray:
        """Grid values of sigma[alpha, i] = A[alpha, beta, i, j] d_beta u_j."""
        G = self.to_grid(self.gradient_coeffs(u_hat))  # [j, beta]
        return np.einsum("abij...,jb...->ai...", self._coef, G, optimize=True)

    def apply(self, u_hat: np.ndarray, p_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        S = self.from_grid(self.flux(u_hat))  # [alpha, i, m]
        mom = -TWO_PI_I * np.einsum("am,aim->im", self.k, S) + TWO_PI_I * self.k * p_hat
        div = TWO_PI_I * np.einsum("jm,jm->m", self.k, u_hat)
        return mom, div

    def divergence_form_coeffs(self, F: np.ndarray) -> np.ndarray:
        """Coefficients of d_alpha F[alpha, i] from grid values F[alpha, i]."""
        return TWO_PI_I * np.einsum("am,aim->im", self.k, self.from_grid(F))

    @cached_property
    def _mean_symbol_inverse(self) -> np.ndarray:
        d, k = self.dim, self.k
        Abar = self.A.mean()
        S = np.zeros((self.nmodes, d + 1, d + 1), dtype=complex)
        S[:, :d, :d] = 4 * np.pi ** 2 * np.einsum("am,bm,abij->mij", k, k, Abar)
        S[:, :d, d] = TWO_PI_I * k.T
        S[:, d, :d] = TWO_PI_I * k.T
        return np.linalg.inv(S)

    def precondition(self, mom: np.ndarray, div: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r = np.concatenate([mom, div[None]], axis=0)
        x = np.einsum("mab,bm->am", self._mean_symbol_inverse, r)
        return x[: self.dim], x[self.dim]


@dataclass
class PeriodicStokesProblem:
    """Right-hand side data for one torus Stokes solve; omitted fields are zero."""

    A: EllipticTensorField
    f: PeriodicField | None = None
    F: PeriodicField | None = None
    h: PeriodicField | None = None

    def __post_init__(self):
        d = self.A.dim
        for name, fld, lead in (("f", self.f, (d,)), ("F", self.F, (d, d)), ("h", self.h, ())):
            if fld is None:
                continue
            if fld.grid != self.A.grid:
                raise DataError(f"{name} is sampled on a different grid than A")
            if fld.lead_shape != lead:
                raise DataError(f"{name} must have lead shape {lead}, got {fld.lead_shape}")
            if not np.all(np.isfinite(fld.samples)):
                raise DataError(f"{name} has non-finite samples")

    @property
    def grid(self) -> GridSpec:
        return self.A.grid


@dataclass
class PeriodicStokesSolution:
    u: PeriodicField
    p: PeriodicField
    residual_norms: tuple[float, float]
    iterations: int
    residual_history: list[float] = field(default_factory=list, repr=False)


def _rms(c: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(c) ** 2)))


_OPERATORS: dict[tuple[str, tuple], SpectralStokesOperator] = {}


def stokes_operator(A: EllipticTensorField) -> SpectralStokesOperator:
    key = (A.key, A.grid.shape)
    op = _OPERATORS.get(key)
    if op is None:
        if len(_OPERATORS) > 8:
            _OPERATORS.clear()
        op = _OPERATORS[key] = SpectralStokesOperator(A)
    return op


def _rhs(op: SpectralStokesOperator, prob: PeriodicStokesProblem) -> tuple[np.ndarray, np.ndarray]:
    d = op.dim
    mom = np.zeros((d, op.nmodes), dtype=complex)
    div = np.zeros(op.nmodes, dtype=complex)
    if prob.f is not None:
        mom += op.from_grid(prob.f.samples)
    if prob.F is not None:
        mom += op.divergence_form_coeffs(prob.F.samples)
    if prob.h is not None:
        div += op.from_grid(prob.h.samples)
    return mom, div


def _check_solvability(prob: PeriodicStokesProblem) -> None:
    if prob.h is not None:
        h = prob.h.samples
        m = float(h.mean())
        if abs(m) > 1e-12 * max(1.0, float(np.abs(h).max())):
            raise SolvabilityError(f"prescribed divergence has mean {m:.3e}; it must vanish on the torus")
    if prob.f is not None:
        f = prob.f.samples
        m = np.abs(prob.f.mean()).max()
        if m > 1e-12 * max(1.0, float(np.abs(f).max())):
            raise SolvabilityError(f"body force has mean {m:.3e}; it must vanish on the torus")


def solve_periodic_stokes(prob: PeriodicStokesProblem, tol: float = 1e-10, max_iterations: int = 400,
                          restart: int = 60) -> PeriodicStokesSolution:
    """Preconditioned GMRES on the retained Fourier modes.

    Stops when the momentum residual is <= tol * (norm of the momentum data, or of h
    when that is larger) and the divergence residual is <= tol.
    """
    if not 1e-12 <= tol <= 1e-4:
        raise DataError(f"tol must lie in [1e-12, 1e-4], got {tol}")
    _check_solvability(prob)
    op = stokes_operator(prob.A)
    d, m = op.dim, op.nmodes
    b_mom, b_div = _rhs(op, prob)
    mom_scale = max(_rms(b_mom), _rms(b_div))
    grid = prob.grid
    if mom_scale == 0.0:
        z = PeriodicField(grid, np.zeros((d,) + grid.shape))
        return PeriodicStokesSolution(z, PeriodicField(grid, np.zeros(grid.shape)), (0.0, 0.0), 0, [0.0])

    def split(x):
        x = x.reshape(d + 1, m)
        return x[:d], x[d]

    def scaled_residual_vector(mom, div):
        return np.concatenate([(mom / mom_scale).ravel(), div.ravel()])

    def precond_only(z):
        mom, div = split(z)
        return op.precondition(mom * mom_scale, div)

    def matvec(z):
        return scaled_residual_vector(*op.apply(*precond_only(z)))

    lin = spla.LinearOperator(((d + 1) * m,) * 2, matvec=matvec, dtype=complex)
    u_hat = np.zeros((d, m), dtype=complex)
    p_hat = np.zeros(m, dtype=complex)
    history: list[float] = []
    iterations = 0
    target = 0.3 * tol
    while True:
        mom, div = op.apply(u_hat, p_hat)
        r_mom, r_div = b_mom - mom, b_div - div
        mom_norm, div_norm = _rms(r_mom), _rms(r_div)
        history.append(float(np.hypot(mom_norm / mom_scale, div_norm)))
        if mom_norm <= tol * mom_scale and div_norm <= tol:
            break
        if iterations >= max_iterations:
            raise SolverError(f"periodic Stokes solve did not converge in {iterations} iterations "
                              f"(momentum {mom_norm / mom_scale:.3e}, divergence {div_norm:.3e})",
                              history, stage="periodic-stokes")
        rhs = scaled_residual_vector(r_mom, r_div)
        counter = []
        z, _ = spla.gmres(lin, rhs, rtol=0.0, atol=target, restart=min(restart, lin.shape[0]),
                          maxiter=max(1, (max_iterations - iterations) // restart + 1),
                          callback=lambda r: counter.append(float(r)), callback_type="pr_norm")
        if not counter:
            counter.append(0.0)
        iterations += len(counter)
        history.extend(counter)
        du, dp = precond_only(z)
        u_hat += du
        p_hat += dp
        target = max(target * 0.1, 1e-16)

    u = PeriodicField(grid, op.to_grid(u_hat))
    p = PeriodicField(grid, op.to_grid(p_hat))
    return PeriodicStokesSolution(u, p, (mom_norm, div_norm), iterations, history)


def stokes_residual(prob: PeriodicStokesProblem, sol: PeriodicStokesSolution) -> tuple[float, float]:
    """(momentum, divergence) residual norms on the retained modes."""
    if sol.u.grid != prob.grid or sol.p.grid != prob.grid:
        raise DataError("solution and problem live on different grids")
    op = stokes_operator(prob.A)
    b_mom, b_div = _rhs(op, prob)
    mom, div = op.apply(op.from_grid(sol.u.samples), op.from_grid(sol.p.samples))
    return _rms(b_mom - mom), _rms(b_div - div)
