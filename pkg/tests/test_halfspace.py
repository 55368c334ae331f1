import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homstokes.errors import DataError, GeometryError
from homstokes.fields.geometry import HalfSpaceGeometry
from homstokes.fields.periodic import BoundaryData, EllipticTensorField, GridSpec
from homstokes.halfspace.layer import (compare_tails, extract_tail, gradient_decay_check, profile_csv,
                                       solve_boundary_layer, to_cylinder)
from homstokes.halfspace.sem import SpectralElementMesh, differentiation_matrix, gll_nodes, graded_mesh

GRID = GridSpec(2, 32)
FIXTURE_A = "2 + sin(2*pi*(y1 + y2))"
FIXTURE_G = "cos(2*pi*y1)*sin(2*pi*y2), 1 + sin(2*pi*y1)"


@pytest.fixture(scope="module")
def fixture_solution():
    A = EllipticTensorField.from_scalar(GRID, FIXTURE_A)
    g = BoundaryData.from_expressions(GRID, FIXTURE_G)
    geo = HalfSpaceGeometry.from_normal([0, 1])
    return A, g, geo, solve_boundary_layer(to_cylinder(A, g, geo, 8.0), 1e-10)


# spectral elements ---------------------------------------------------------------------------
@pytest.mark.parametrize("p", [2, 4, 8])
def test_gll_quadrature_exactness(p):
    x, w = gll_nodes(p)
    for k in range(2 * p):
        exact = (1 - (-1) ** (k + 1)) / (k + 1)
        assert float(w @ x ** k) == pytest.approx(exact, abs=1e-13)


def test_differentiation_matrix_on_polynomials():
    x, _ = gll_nodes(6)
    D = differentiation_matrix(x)
    assert np.allclose(D @ x ** 5, 5 * x ** 4, atol=1e-11)


def test_graded_mesh_covers_interval():
    e = graded_mesh(8.0, 0.05, 0.5)
    assert e[0] == 0 and e[-1] == pytest.approx(8.0)
    assert np.diff(e).min() == pytest.approx(0.05) and np.diff(e).max() <= 0.5 + 1e-12


# boundary layers against closed forms --------------------------------------------------------
def test_half_plane_closed_form():
    """A = identity, n = e2: data (c1 + sin kx, c2) gives u1 = c1 + (1 - kt) e^{-kt} sin kx, u2 = c2 - kt e^{-kt} cos kx."""
    c1, c2 = 0.3, -0.7
    k = 2 * np.pi
    g = BoundaryData.from_expressions(GRID, f"{c1} + sin(2*pi*y1), {c2}")
    prob = to_cylinder(EllipticTensorField.identity(GRID), g, HalfSpaceGeometry.from_normal([0, 1]), 8.0)
    sol = solve_boundary_layer(prob, 1e-12)
    x = prob.lateral_points()[0][:, None]
    t = sol.heights[None, :]
    u1 = c1 + (1 - k * t) * np.exp(-k * t) * np.sin(k * x)
    u2 = c2 - k * t * np.exp(-k * t) * np.cos(k * x)
    # order-8 elements resolve the exponential profiles to about 1e-8
    assert np.abs(sol.V[0] - u1).max() <= 5e-8
    assert np.abs(sol.V[1] - u2).max() <= 5e-8


def test_constant_coefficient_tail_is_plane_mean():
    s = 0.1
    g = BoundaryData.from_expressions(GRID, "cos(2*pi*(y1 + y2)), sin(2*pi*y1)")
    geo = HalfSpaceGeometry.from_normal([1, 1], s)
    tv = extract_tail(solve_boundary_layer(to_cylinder(EllipticTensorField.identity(GRID), g, geo, 8.0), 1e-12))
    # y1 + y2 = s sqrt(2) on the plane, and sin(2 pi y1) averages to zero along it
    assert np.allclose(tv.U, [math.cos(2 * math.pi * s * math.sqrt(2)), 0.0], atol=1e-9)


@settings(max_examples=5, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.sampled_from([(0, 1), (1, 2), (1, -1)]))
def test_constant_data_gives_constant_tail(c, n):
    A = EllipticTensorField.from_scalar(GRID, FIXTURE_A)
    g = BoundaryData.constant(GRID, c)
    tv = extract_tail(solve_boundary_layer(to_cylinder(A, g, HalfSpaceGeometry.from_normal(n), 8.0), 1e-10))
    assert np.abs(tv.U - np.array(c)).max() <= 1e-8


def test_class_condition_and_profile(fixture_solution):
    *_, sol = fixture_solution
    prof, ok = gradient_decay_check(sol)
    assert ok and prof.shape == (sol.heights.size, 2)
    text = profile_csv(sol, "abc")
    assert text.startswith("# config_sha256=abc\nt,m1,m2,sup_t_gradV\n")


def test_truncation_monotonicity(fixture_solution):
    A, g, geo, sol = fixture_solution
    e8 = extract_tail(sol).error_estimate
    e16 = extract_tail(solve_boundary_layer(to_cylinder(A, g, geo, 16.0), 1e-10)).error_estimate
    assert e16 <= e8


def test_dirichlet_trace(fixture_solution):
    *_, sol = fixture_solution
    assert np.abs(sol.V[..., 0] - sol.problem.V0).max() <= 1e-10


def test_integer_shifts_normal_to_axis(fixture_solution):
    A, g, geo, _ = fixture_solution
    cmp = compare_tails(A, g, geo, [0.0, 1.0, 2.0], 8.0, 1e-10)
    assert cmp.differences.max() <= 1e-10


def test_lattice_shifts_oblique_normal():
    A = EllipticTensorField.from_scalar(GRID, FIXTURE_A)
    g = BoundaryData.from_expressions(GRID, FIXTURE_G)
    geo = HalfSpaceGeometry.from_normal([1, 2])
    cmp = compare_tails(A, g, geo, geo.lattice_offsets(3), 8.0, 1e-10)
    assert cmp.differences.max() <= 1e-8


def test_irrational_approximant_stability():
    A = EllipticTensorField.from_scalar(GRID, FIXTURE_A)
    g = BoundaryData.from_expressions(GRID, FIXTURE_G)
    tails = []
    for H in (10, 20, 40):
        geo = HalfSpaceGeometry.from_normal([1, math.sqrt(2)], H=H)
        assert not geo.is_rational
        prob = to_cylinder(A, g, geo, 8.0)
        assert prob.approximant == geo.classification.approximant
        tails.append(extract_tail(solve_boundary_layer(prob, 1e-10)).U)
    tails = np.array(tails)
    assert np.ptp(tails, axis=0).max() <= 5e-3


def test_input_validation(fixture_solution):
    A, g, geo, sol = fixture_solution
    with pytest.raises(GeometryError):
        to_cylinder(A, g, geo, 2.0)
    with pytest.raises(DataError):
        extract_tail(sol, [1.0, 2.0])
    assert SpectralElementMesh(graded_mesh(4.0, 0.1, 0.5), 6).n_nodes > 0
