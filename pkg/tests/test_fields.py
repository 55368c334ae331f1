import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from homstokes.errors import ConfigError, DataError, GeometryError
from homstokes.fields.expressions import parse_expression, parse_vector_expression
from homstokes.fields.geometry import (HalfSpaceGeometry, classify_normal, diophantine_estimate, rotation_matrix,
                                       tangential_lattice_basis)
from homstokes.fields.gridio import format_grid_field, read_grid_field, write_grid_field
from homstokes.fields.periodic import (BoundaryData, EllipticTensorField, GridSpec, PeriodicField,
                                       check_ellipticity)


# expressions ---------------------------------------------------------------------------------
def test_expression_matches_numpy():
    e = parse_expression("2 + sin(2*pi*y1) * cos(2*pi*(y1 - 2*y2) + 0.3)", 2)
    y = np.random.default_rng(0).random((2, 50))
    ref = 2 + np.sin(2 * np.pi * y[0]) * np.cos(2 * np.pi * (y[0] - 2 * y[1]) + 0.3)
    assert np.allclose(e(y), ref, atol=1e-14)


@pytest.mark.parametrize("text", ["y1", "sin(y1)", "sin(2*pi*0.5*y1)", "exp(y1)", "sin(2*pi*y1*y2)", "2 +"])
def test_expression_rejects_nonperiodic_or_malformed(text):
    with pytest.raises(ConfigError):
        parse_expression(text, 2)


def test_vector_expression_component_count():
    assert len(parse_vector_expression("1, sin(2*pi*y2)", 2)) == 2
    with pytest.raises(ConfigError):
        parse_vector_expression("1, 2, 3", 2)


@settings(max_examples=30, deadline=None)
@given(k1=st.integers(-4, 4), k2=st.integers(-4, 4), shift=st.integers(-3, 3))
def test_expression_periodicity(k1, k2, shift):
    e = parse_expression(f"cos(2*pi*({k1}*y1 + {k2}*y2) + 0.7)", 2)
    y = np.random.default_rng(1).random((2, 20))
    y2 = y + np.array([[shift], [-shift]])
    assert np.allclose(e(y), e(y2), atol=1e-10)


# grids and periodic fields -------------------------------------------------------------------
def test_grid_validation():
    with pytest.raises(DataError):
        GridSpec(2, 7)
    with pytest.raises(DataError):
        GridSpec(4, 8)
    assert GridSpec(3, 8).shape == (8, 8, 8)


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.float64, (2, 8, 10), elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_fourier_roundtrip(samples):
    f = PeriodicField(GridSpec(2, (8, 10)), samples)
    assert f.roundtrip_error() <= 1e-12


def test_interpolation_is_exact_for_trig_polynomials():
    grid = GridSpec(2, 16)
    fn = lambda y: np.sin(2 * np.pi * y[0]) * np.cos(4 * np.pi * y[1]) + 0.5
    f = PeriodicField.from_function(grid, fn)
    pts = np.random.default_rng(2).random((2, 30))
    assert np.allclose(f.evaluate(pts), fn(pts), atol=1e-12)
    axes = [np.linspace(0, 1, 5), np.linspace(0, 0.7, 3)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"))
    assert np.allclose(f.evaluate_tensor_grid(axes), fn(mesh), atol=1e-12)


def test_spectral_gradient():
    grid = GridSpec(2, 16)
    f = PeriodicField.from_function(grid, lambda y: np.sin(2 * np.pi * (y[0] + 2 * y[1])))
    y = grid.coordinates()
    c = 2 * np.pi * np.cos(2 * np.pi * (y[0] + 2 * y[1]))
    g = f.gradient().samples
    assert np.allclose(g[0], c, atol=1e-11) and np.allclose(g[1], 2 * c, atol=1e-11)


def test_grid_file_roundtrip(tmp_path):
    grid = GridSpec(2, (8, 12))
    f = PeriodicField(grid, np.random.default_rng(3).standard_normal((2, 8, 12)))
    p = tmp_path / "f.grid"
    write_grid_field(p, f, "note")
    g = read_grid_field(p)
    assert g.grid == grid and np.array_equal(g.samples, f.samples)
    text = format_grid_field(f)
    assert "dim 2" in text and "rank vector" in text and "points_per_axis 8 12" in text


# coefficients --------------------------------------------------------------------------------
def test_ellipticity_report_scalar_coefficient():
    A = EllipticTensorField.from_scalar(GridSpec(2, 16), "2 + sin(2*pi*y1)")
    rep = check_ellipticity(A)
    assert rep.passed
    assert rep.mu_lower == pytest.approx(1.0, abs=0.02) and rep.mu_upper == pytest.approx(3.0, abs=0.02)
    assert rep.mu_lower <= rep.trial_min + 1e-12 and rep.trial_max <= rep.mu_upper + 1e-12


def test_ellipticity_detects_indefinite():
    d = 2
    C = -np.einsum("ab,ij->abij", np.eye(d), np.eye(d))
    assert not check_ellipticity(EllipticTensorField.from_constant(GridSpec(2, 8), C)).passed


def test_adjoint_swaps_indices():
    grid = GridSpec(2, 8)
    C = np.random.default_rng(4).standard_normal((2, 2, 2, 2))
    A = EllipticTensorField.from_constant(grid, C)
    assert np.allclose(A.adjoint().mean(), np.transpose(C, (1, 0, 3, 2)))


def test_boundary_data_constant_and_shift():
    grid = GridSpec(2, 8)
    g = BoundaryData.constant(grid, [1.0, -2.0])
    assert np.allclose(g.evaluate(np.random.default_rng(5).random((2, 4))), [[1.0] * 4, [-2.0] * 4])
    h = BoundaryData.from_expressions(grid, "sin(2*pi*y1), 0")
    s = h.shifted(np.array([0.25, 0.0]))
    assert np.allclose(s.evaluate(np.zeros((2, 1)))[0], 1.0)


# geometry ------------------------------------------------------------------------------------
@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 0.1))
def test_rotation_is_proper_and_deterministic(v):
    n = v / np.linalg.norm(v)
    M, N = rotation_matrix(n)
    assert np.allclose(M.T @ M, np.eye(3), atol=1e-12)
    assert np.linalg.det(M) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(M[:, -1], n, atol=1e-12)
    assert np.array_equal(M, rotation_matrix(n.copy())[0])
    assert np.array_equal(N, M[:, :2])


def test_classify_examples():
    c = classify_normal([0, 0, 1])
    assert c.kind == "rational" and c.v == (0, 0, 1)
    B = c.basis
    assert abs(round(abs(np.linalg.det(B[:2, :2])))) == 1
    c = classify_normal(np.array([1, 2, 2]) / 3)
    assert c.kind == "rational" and c.v == (1, 2, 2)
    c = classify_normal([1, math.sqrt(2), math.sqrt(3)], H=12)
    assert c.kind == "irrational" and c.A_n > 0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=3, max_size=3).filter(lambda v: any(v)))
def test_rational_never_reported_irrational(v):
    v = np.array(v)
    n = v / np.linalg.norm(v)
    c = classify_normal(n, H=10)
    assert c.kind == "rational"
    g = math.gcd(*[abs(int(x)) for x in v])
    assert c.v == tuple(int(x) for x in v // g)


@pytest.mark.parametrize("v", [(1, 2), (0, 1), (3, -1), (1, 2, 2), (2, 1, 0), (1, 1, 1)])
def test_tangential_basis(v):
    B = tangential_lattice_basis(v)
    v = np.array(v)
    assert np.all(B.T @ v == 0)
    assert np.linalg.det(np.column_stack([B, v]).astype(float)) > 0
    if v.size == 3:
        assert np.allclose(np.linalg.norm(np.cross(B[:, 0], B[:, 1])), np.linalg.norm(v))


def test_diophantine_monotone_in_scan_radius():
    n = np.array([1, math.sqrt(2), math.sqrt(3)])
    n /= np.linalg.norm(n)
    vals = [diophantine_estimate(n, H).A_n for H in (10, 12, 14, 16)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_geometry_validation():
    with pytest.raises(GeometryError):
        HalfSpaceGeometry.from_normal([0, 0])
    with pytest.raises(GeometryError):
        HalfSpaceGeometry.from_normal([1, 0, 0, 0])
    g = HalfSpaceGeometry.from_normal([1, 2], 0.3)
    assert g.is_rational and g.lattice_offsets(3)[1] == pytest.approx(1 / math.sqrt(5))
