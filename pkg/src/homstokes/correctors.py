"""Cell problems: first- and second-order correctors, homogenized tensor, flux potentials.

Index conventions (all families carry the grid axes last):
  chi[beta, j, k]          k-th component of the first-order corrector for P(y) = y_beta e_j
  pi[beta, j]
  Gamma[alpha, beta, j, k] k-th component of the second-order corrector
  Q[alpha, beta, j]
  b[alpha, beta, i, j], q[alpha, beta, j], phi[gamma, alpha, beta, i, j]
The cell forcing of chi[beta, j] is d_alpha A[alpha, beta, i, j], which is the
divergence of the flux of the affine field y_beta e_j.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable

import numpy as np

from .errors import ConsistencyError, DataError, SolverError
from .fields.periodic import EllipticTensorField, PeriodicField
from .periodic_stokes import PeriodicStokesProblem, solve_periodic_stokes, stokes_operator


def parallel_map(fn: Callable, items: Iterable, threads: int = 1) -> list:
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _solve(prob: PeriodicStokesProblem, tol: float, label: str, max_iterations: int = 400):
    try:
        return solve_periodic_stokes(prob, tol, max_iterations)
    except SolverError as exc:
        raise SolverError(f"{label}: {exc}", exc.residual_history, stage="correctors") from exc


@dataclass(frozen=True)
class FirstOrderCorrectors:
    chi: np.ndarray   # (d, d, d, *grid)
    pi: np.ndarray    # (d, d, *grid)
    residuals: np.ndarray  # (d, d, 2) momentum/divergence residual norms

    def chi_field(self, grid) -> PeriodicField:
        return PeriodicField(grid, self.chi)

    def pi_field(self, grid) -> PeriodicField:
        return PeriodicField(grid, self.pi)


@dataclass(frozen=True)
class HomogenizedTensor:
    A0: np.ndarray  # (d, d, d, d) indexed [alpha, beta, i, j]

    @property
    def dim(self) -> int:
        return self.A0.shape[0]

    def adjoint(self) -> "HomogenizedTensor":
        return HomogenizedTensor(np.transpose(self.A0, (1, 0, 3, 2)).copy())

    def quadratic_form_bounds(self) -> tuple[float, float]:
        """Extreme eigenvalues of the symmetric part of w -> A0 w : w on d x d matrices."""
        d = self.dim
        mat = np.transpose(self.A0, (0, 2, 1, 3)).reshape(d * d, d * d)
        eig = np.linalg.eigvalsh(0.5 * (mat + mat.T))
        return float(eig[0]), float(eig[-1])

    def as_field(self, grid) -> EllipticTensorField:
        return EllipticTensorField.from_constant(grid, self.A0)


@dataclass(frozen=True)
class SecondOrderCorrectors:
    Gamma: np.ndarray  # (d, d, d, d, *grid)
    Q: np.ndarray      # (d, d, d, *grid)
    residuals: np.ndarray


@dataclass(frozen=True)
class FluxPotentials:
    phi: np.ndarray  # (d, d, d, d, d, *grid)
    q: np.ndarray    # (d, d, d, *grid)
    b: np.ndarray    # (d, d, d, d, *grid)


def first_order_correctors(A: EllipticTensorField, tol: float = 1e-12, threads: int = 1,
                           max_iterations: int = 400) -> FirstOrderCorrectors:
    """Solve -div A grad(chi + y_beta e_j) + grad pi = 0, div chi = 0, mean zero, for all (beta, j)."""
    d, grid = A.dim, A.grid
    pairs = [(b, j) for b in range(d) for j in range(d)]

    def one(pair):
        b, j = pair
        F = PeriodicField(grid, A.samples[:, b, :, j])
        return _solve(PeriodicStokesProblem(A, F=F), tol, f"first-order corrector (beta={b + 1}, j={j + 1})",
                      max_iterations)

    sols = parallel_map(one, pairs, threads)
    chi = np.stack([s.u.samples for s in sols]).reshape((d, d, d) + grid.shape)
    pi = np.stack([s.p.samples for s in sols]).reshape((d, d) + grid.shape)
    res = np.array([s.residual_norms for s in sols]).reshape(d, d, 2)
    return FirstOrderCorrectors(chi, pi, res)


def _grad_chi(A: EllipticTensorField, chi: np.ndarray) -> np.ndarray:
    """d_gamma chi[beta, j, k] with gamma appended: shape (d, d, d, d, *grid) as [beta, j, k, gamma]."""
    op = stokes_operator(A)
    return op.to_grid(op.gradient_coeffs(op.from_grid(chi)))


def _flux_density(A: EllipticTensorField, chi: np.ndarray) -> np.ndarray:
    """A[alpha, beta, i, j] + A[alpha, gamma, i, k] d_gamma chi[beta, j, k] on the grid."""
    G = _grad_chi(A, chi)
    return A.samples + np.einsum("agik...,bjkg...->abij...", A.samples, G, optimize=True)


def homogenized_tensor(A: EllipticTensorField, first: FirstOrderCorrectors | np.ndarray) -> HomogenizedTensor:
    chi = first.chi if isinstance(first, FirstOrderCorrectors) else np.asarray(first)
    d = A.dim
    if chi.shape != (d, d, d) + A.grid.shape:
        raise DataError(f"corrector family shape {chi.shape} does not match the coefficient grid")
    flat = _flux_density(A, chi).reshape((d ** 4, -1))
    # correctly rounded mean about the first sample: constant fluxes average to themselves exactly
    mean = np.array([row[0] + math.fsum(row - row[0]) / row.size for row in flat])
    return HomogenizedTensor(mean.reshape((d,) * 4))


def second_order_correctors(A: EllipticTensorField, first: FirstOrderCorrectors, A0: HomogenizedTensor,
                            tol: float = 1e-12, threads: int = 1, max_iterations: int = 400
                            ) -> SecondOrderCorrectors:
    """Solve for (Gamma[alpha, beta, j], Q[alpha, beta, j]) with divergence -chi[beta, j, alpha]."""
    d, grid = A.dim, A.grid
    chi, pi = first.chi, first.pi
    if chi.shape != (d, d, d) + grid.shape:
        raise DataError("corrector family does not match the coefficient grid")
    flux = _flux_density(A, chi)
    nd = grid.dim
    flux_mean = flux.mean(axis=tuple(range(4, 4 + nd)), keepdims=True)
    eye = np.eye(d)
    triples = [(a, b, j) for a in range(d) for b in range(d) for j in range(d)]
    for a, b, j in triples:
        m = float(chi[b, j, a].mean())
        if abs(m) > 1e-10:
            raise ConsistencyError(f"prescribed divergence -chi (beta={b + 1}, j={j + 1}, k={a + 1}) "
                                   f"has mean {m:.3e}", stage="correctors")

    def one(t):
        a, b, j = t
        f = flux[a, b, :, j] - flux_mean[a, b, :, j] - eye[:, a].reshape((d,) + (1,) * nd) * pi[b, j]
        F = np.einsum("gik...,k...->gi...", A.samples[:, a], chi[b, j])
        h = -chi[b, j, a] + chi[b, j, a].mean()
        prob = PeriodicStokesProblem(A, f=PeriodicField(grid, f), F=PeriodicField(grid, F),
                                     h=PeriodicField(grid, h))
        return _solve(prob, tol, f"second-order corrector (alpha={a + 1}, beta={b + 1}, j={j + 1})",
                      max_iterations)

    sols = parallel_map(one, triples, threads)
    Gamma = np.stack([s.u.samples for s in sols]).reshape((d, d, d, d) + grid.shape)
    Q = np.stack([s.p.samples for s in sols]).reshape((d, d, d) + grid.shape)
    res = np.array([s.residual_norms for s in sols]).reshape(d, d, d, 2)
    return SecondOrderCorrectors(Gamma, Q, res)


def second_order_problem(A: EllipticTensorField, first: FirstOrderCorrectors, alpha: int, beta: int, j: int
                         ) -> PeriodicStokesProblem:
    """The right-hand side data of one second-order cell problem (0-based indices)."""
    d, grid = A.dim, A.grid
    nd = grid.dim
    flux = _flux_density(A, first.chi)
    f = (flux[alpha, beta, :, j] - flux[alpha, beta, :, j].mean(axis=tuple(range(1, 1 + nd)), keepdims=True)
         - np.eye(d)[:, alpha].reshape((d,) + (1,) * nd) * first.pi[beta, j])
    F = np.einsum("gik...,k...->gi...", A.samples[:, alpha], first.chi[beta, j])
    return PeriodicStokesProblem(A, f=PeriodicField(grid, f), F=PeriodicField(grid, F),
                                 h=PeriodicField(grid, -first.chi[beta, j, alpha]))


def flux_potentials(A: EllipticTensorField, first: FirstOrderCorrectors, A0: HomogenizedTensor,
                    tol: float = 1e-12) -> FluxPotentials:
    """Potentials with b = d_gamma phi[gamma] + d_i q and pi = d_alpha q.

    With theta = Laplacian^{-1} pi and T = Laplacian^{-1} b (mean-zero inverses),
    q[alpha] = d_alpha theta and phi[gamma, alpha] = d_gamma T[alpha] - d_alpha T[gamma];
    phi is antisymmetric in (gamma, alpha) and of minimal norm among valid choices.
    """
    d, grid = A.dim, A.grid
    op = stokes_operator(A)
    flux = _flux_density(A, first.chi)
    b = flux - A0.A0.reshape(A0.A0.shape + (1,) * grid.dim)
    scale = max(1.0, float(np.abs(A.samples).max()))
    bmean = np.abs(b.reshape((d,) * 4 + (-1,)).mean(axis=-1)).max()
    if bmean > 1e-10 * scale:
        raise ConsistencyError(f"flux discrepancy b has nonzero mean {bmean:.3e}; A0 is inconsistent with chi",
                               stage="flux-potentials")
    k = op.k
    lap = -4 * np.pi ** 2 * (k ** 2).sum(axis=0)
    b_hat = op.from_grid(b)                      # [alpha, beta, i, j, m]
    T_hat = b_hat / lap
    theta_hat = op.from_grid(first.pi) / lap     # [beta, j, m]
    two_pi_i = 2j * np.pi
    q_hat = two_pi_i * k[:, None, None, :] * theta_hat[None]          # [alpha, beta, j, m]
    dT = two_pi_i * k[:, None, None, None, None, :] * T_hat[None]     # [gamma, alpha, beta, i, j, m]
    phi_hat = dT - np.swapaxes(dT, 0, 1)
    return FluxPotentials(op.to_grid(phi_hat), op.to_grid(q_hat), op.to_grid(b_hat))


def flux_identity_errors(A: EllipticTensorField, pots: FluxPotentials, pi: np.ndarray) -> tuple[float, float]:
    """Max pointwise errors of b = d_gamma phi + d_i q and pi = d_alpha q, by spectral differentiation."""
    op = stokes_operator(A)
    d = A.dim
    phi_hat = op.from_grid(pots.phi)
    q_hat = op.from_grid(pots.q)
    two_pi_i = 2j * np.pi
    k = op.k
    div_phi = two_pi_i * np.einsum("gm,gabijm->abijm", k, phi_hat)
    grad_q = two_pi_i * np.einsum("im,abjm->abijm", k, q_hat)
    recon = op.to_grid(div_phi + grad_q)
    pi_recon = op.to_grid(two_pi_i * np.einsum("am,abjm->bjm", k, q_hat))
    e1 = float(np.abs(recon - pots.b).max())
    e2 = float(np.abs(pi_recon - pi).max())
    assert recon.shape[:4] == (d,) * 4
    return e1, e2


class CorrectorSet:
    """Lazily solved correctors of A and of its adjoint, with the homogenized tensor."""

    def __init__(self, A: EllipticTensorField, tol: float = 1e-12, threads: int = 1, max_iterations: int = 400):
        self.A = A
        self.tol = tol
        self.threads = threads
        self.max_iterations = max_iterations
        self._lock = threading.RLock()

    @cached_property
    def first(self) -> FirstOrderCorrectors:
        with self._lock:
            return first_order_correctors(self.A, self.tol, self.threads, self.max_iterations)

    @cached_property
    def A0(self) -> HomogenizedTensor:
        with self._lock:
            return homogenized_tensor(self.A, self.first)

    @cached_property
    def second(self) -> SecondOrderCorrectors:
        with self._lock:
            return second_order_correctors(self.A, self.first, self.A0, self.tol, self.threads,
                                           self.max_iterations)

    @cached_property
    def flux(self) -> FluxPotentials:
        with self._lock:
            return flux_potentials(self.A, self.first, self.A0, self.tol)

    @cached_property
    def adjoint(self) -> "CorrectorSet":
        with self._lock:
            return corrector_set(self.A.adjoint(), self.tol, self.threads, self.max_iterations)

    @property
    def chi(self) -> np.ndarray:
        return self.first.chi

    @property
    def pi(self) -> np.ndarray:
        return self.first.pi

    def chi_field(self) -> PeriodicField:
        return PeriodicField(self.A.grid, self.first.chi)

    def pi_field(self) -> PeriodicField:
        return PeriodicField(self.A.grid, self.first.pi)

    def max_norms(self) -> dict[str, float]:
        return {
            "chi": float(np.abs(self.first.chi).max()),
            "pi": float(np.abs(self.first.pi).max()),
            "Gamma": float(np.abs(self.second.Gamma).max()),
            "Q": float(np.abs(self.second.Q).max()),
            "phi": float(np.abs(self.flux.phi).max()),
            "q": float(np.abs(self.flux.q).max()),
        }


_CACHE: dict[tuple, CorrectorSet] = {}
_CACHE_LOCK = threading.Lock()


def corrector_set(A: EllipticTensorField, tol: float = 1e-12, threads: int = 1,
                  max_iterations: int = 400) -> CorrectorSet:
    """Cached CorrectorSet keyed by (coefficient hash, grid, tol, iteration cap)."""
    key = (A.key, A.grid.shape, float(tol), int(max_iterations))
    with _CACHE_LOCK:
        cs = _CACHE.get(key)
        if cs is None:
            if len(_CACHE) > 16:
                _CACHE.clear()
            cs = _CACHE[key] = CorrectorSet(A, tol, threads, max_iterations)
        return cs
