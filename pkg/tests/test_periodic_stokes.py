import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from homstokes.errors import DataError, SolvabilityError, SolverError
from homstokes.fields.periodic import EllipticTensorField, GridSpec, PeriodicField
from homstokes.periodic_stokes import PeriodicStokesProblem, solve_periodic_stokes, stokes_residual

GRID = GridSpec(2, 32)


def _manufactured(coef_sym, u_sym, p_sym, grid):
    """Body force of -div(A grad u) + grad p computed symbolically; A[a,b,i,j] given as sympy entries."""
    y = sp.symbols("y1 y2")
    d = 2
    f = []
    for i in range(d):
        expr = sp.diff(p_sym, y[i])
        for a in range(d):
            flux = sum(coef_sym[a][b][i][j] * sp.diff(u_sym[j], y[b]) for b in range(d) for j in range(d))
            expr -= sp.diff(flux, y[a])
        f.append(sp.lambdify(y, sp.simplify(expr), "numpy"))
    pts = grid.coordinates()
    fv = np.stack([np.broadcast_to(fn(*pts), grid.shape) for fn in f])
    uv = np.stack([np.broadcast_to(sp.lambdify(y, c, "numpy")(*pts), grid.shape) for c in u_sym])
    pv = np.broadcast_to(sp.lambdify(y, p_sym, "numpy")(*pts), grid.shape)
    return fv, uv, pv


def test_zero_data_gives_zero():
    sol = solve_periodic_stokes(PeriodicStokesProblem(EllipticTensorField.identity(GRID)), 1e-10)
    assert sol.u.max_norm() == 0 and sol.p.max_norm() == 0


def test_constant_coefficient_fourier_symbol():
    y = GRID.coordinates()
    f = np.stack([np.zeros(GRID.shape), np.sin(2 * np.pi * y[0])])
    sol = solve_periodic_stokes(PeriodicStokesProblem(EllipticTensorField.identity(GRID), f=PeriodicField(GRID, f)),
                                1e-12)
    # divergence-free forcing: p = 0 and u = f / |2 pi k|^2
    assert np.abs(sol.u.samples - f / (4 * np.pi ** 2)).max() <= 1e-10
    assert sol.p.max_norm() <= 1e-10


def test_manufactured_scalar_coefficient():
    y1, y2 = sp.symbols("y1 y2")
    a = 2 + sp.cos(2 * sp.pi * y1)
    psi = sp.sin(2 * sp.pi * y1) * sp.sin(2 * sp.pi * y2)
    u = [sp.diff(psi, y2), -sp.diff(psi, y1)]
    p = sp.sin(2 * sp.pi * y1) * sp.cos(2 * sp.pi * y2)
    delta = lambda i, j: 1 if i == j else 0
    coef = [[[[a * delta(al, be) * delta(i, j) for j in range(2)] for i in range(2)] for be in range(2)]
            for al in range(2)]
    fv, uv, pv = _manufactured(coef, u, p, GRID)
    A = EllipticTensorField.from_scalar(GRID, "2 + cos(2*pi*y1)")
    sol = solve_periodic_stokes(PeriodicStokesProblem(A, f=PeriodicField(GRID, fv)), 1e-12)
    assert np.abs(sol.u.samples - uv).max() <= 1e-9
    assert np.abs(sol.p.samples - pv).max() <= 1e-9


def test_manufactured_anisotropic_tensor_divergence_form():
    y1, y2 = sp.symbols("y1 y2")
    rng = np.random.default_rng(7)
    C = 0.2 * rng.standard_normal((2, 2, 2, 2))
    C = 0.5 * (C + np.transpose(C, (1, 0, 3, 2)))
    a = 3 + sp.sin(2 * sp.pi * (y1 + y2))
    delta = lambda i, j: 1 if i == j else 0
    coef = [[[[a * delta(al, be) * delta(i, j) + float(C[al, be, i, j]) for j in range(2)] for i in range(2)]
             for be in range(2)] for al in range(2)]
    psi = sp.cos(2 * sp.pi * (y1 - y2)) + sp.sin(2 * sp.pi * y2)
    u = [sp.diff(psi, y2), -sp.diff(psi, y1)]
    p = sp.cos(2 * sp.pi * y1)
    fv, uv, pv = _manufactured(coef, u, p, GRID)

    def fn(yv):
        eye = np.einsum("ab,ij->abij", np.eye(2), np.eye(2))
        s = 3 + np.sin(2 * np.pi * (yv[0] + yv[1]))
        return eye[..., None, None] * s + C[..., None, None]
    A = EllipticTensorField.from_callable(GRID, fn)
    # half as a body force, half in divergence form F[alpha, i] with d_alpha F = f/2
    half = PeriodicField(GRID, 0.5 * fv)
    spec = np.fft.fftn(0.5 * fv, axes=(1, 2))
    k = GRID.wavenumbers()
    k2 = (2 * np.pi) ** 2 * (k[0] ** 2 + k[1] ** 2)
    k2[0, 0] = 1.0
    F = np.zeros((2, 2) + GRID.shape)
    for a in range(2):
        F[a] = np.fft.ifftn(-2j * np.pi * k[a] * spec / k2, axes=(1, 2)).real
    sol = solve_periodic_stokes(PeriodicStokesProblem(A, f=half, F=PeriodicField(GRID, F)), 1e-12)
    assert np.abs(sol.u.samples - uv).max() <= 1e-8
    assert np.abs(sol.p.samples - pv).max() <= 1e-8


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000))
def test_residual_and_mean_invariants(seed):
    rng = np.random.default_rng(seed)
    grid = GridSpec(2, 16)
    A = EllipticTensorField.from_scalar(grid, "2 + 0.5*sin(2*pi*y1)*cos(2*pi*y2)")
    f = rng.standard_normal((2,) + grid.shape)
    f -= f.mean(axis=(1, 2), keepdims=True)
    h = rng.standard_normal(grid.shape)
    h -= h.mean()
    prob = PeriodicStokesProblem(A, f=PeriodicField(grid, f), h=PeriodicField(grid, h))
    tol = 1e-9
    sol = solve_periodic_stokes(prob, tol)
    assert np.abs(sol.u.mean()).max() <= 1e-10 and abs(float(sol.p.mean())) <= 1e-10
    mom, div = stokes_residual(prob, sol)
    assert div <= tol
    assert mom <= tol * max(1.0, float(np.sqrt((f ** 2).mean())))


def test_solvability_and_tolerance_errors():
    A = EllipticTensorField.identity(GRID)
    with pytest.raises(SolvabilityError):
        solve_periodic_stokes(PeriodicStokesProblem(A, h=PeriodicField(GRID, np.ones(GRID.shape))))
    with pytest.raises(SolvabilityError):
        solve_periodic_stokes(PeriodicStokesProblem(A, f=PeriodicField(GRID, np.ones((2,) + GRID.shape))))
    with pytest.raises(DataError):
        solve_periodic_stokes(PeriodicStokesProblem(A), tol=1e-2)


def test_iteration_cap_raises_with_history():
    A = EllipticTensorField.from_scalar(GRID, "2 + 1.9*sin(2*pi*y1)*sin(2*pi*y2)")
    F = PeriodicField(GRID, A.samples[:, 0, :, 1])
    with pytest.raises(SolverError) as info:
        solve_periodic_stokes(PeriodicStokesProblem(A, F=F), 1e-12, max_iterations=1, restart=1)
    assert info.value.residual_history and info.value.stage == "periodic-stokes"
