import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from homstokes.correctors import corrector_set
from homstokes.errors import SolverError
from homstokes.fields.geometry import HalfSpaceGeometry
from homstokes.fields.periodic import BoundaryData, EllipticTensorField, GridSpec, PeriodicField
from homstokes.tail_formula import (bl_corrector_traces, compute_tail_formula, ergodic_mean, green_identity_error,
                                    halfplane_green_integrals)

GRID = GridSpec(2, 32)
FIXTURE_A = "2 + sin(2*pi*(y1 + y2))"
FIXTURE_G = "cos(2*pi*y1)*sin(2*pi*y2), 1 + sin(2*pi*y1)"


def _eye(d):
    return np.einsum("ab,ij->abij", np.eye(d), np.eye(d))


# ergodic means -------------------------------------------------------------------------------
def test_rational_plane_mean():
    s = 0.23
    geo = HalfSpaceGeometry.from_normal([1, 1], s)
    est = ergodic_mean(lambda y: np.cos(2 * np.pi * (y[0] + y[1])) + np.sin(2 * np.pi * y[0]), geo)
    assert est.value == pytest.approx(math.cos(2 * math.pi * s * math.sqrt(2)), abs=1e-12)


def test_irrational_plane_mean_of_field_and_callable():
    geo = HalfSpaceGeometry.from_normal([1, math.sqrt(2), math.sqrt(3)], 0.1, H=12)
    assert not geo.is_rational
    grid = GridSpec(3, 8)
    fn = lambda y: 0.5 + np.cos(2 * np.pi * (y[0] + 2 * y[1])) * np.sin(2 * np.pi * y[2])
    est = ergodic_mean(PeriodicField.from_function(grid, fn), geo)
    assert est.converged and est.value == pytest.approx(0.5, abs=1e-3)
    est2 = ergodic_mean(fn, geo)
    assert est2.value == pytest.approx(0.5, abs=2e-2)


# hyperplane Green integrals ------------------------------------------------------------------
@pytest.mark.parametrize("n", [(0, 1), (1, 2), (3, -1), (0, 0, 1), (1, 2, 2), (1, 1, 1)])
def test_isotropic_closed_form(n):
    n = np.array(n, dtype=float)
    n /= np.linalg.norm(n)
    d = n.size
    res = halfplane_green_integrals(_eye(d), n)
    # identity A0: a = e_i - n n_i and pi0 = -n_i
    assert np.allclose(res.I_G, np.einsum("b,ki->bki", n, np.eye(d) - np.outer(n, n)), atol=1e-14)
    assert np.allclose(res.I_Pi, -n, atol=1e-14)


def _random_elliptic(d, seed):
    rng = np.random.default_rng(seed)
    C = 0.3 * rng.standard_normal((d, d, d, d))
    return 2 * _eye(d) + C


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2, 3]),
       hnp.arrays(np.float64, 3, elements=st.floats(-1, 1)).filter(lambda v: np.linalg.norm(v) > 0.2))
def test_unit_data_identity_property(seed, d, v):
    n = v[:d] if np.linalg.norm(v[:d]) > 0.1 else np.eye(d)[-1]
    A0 = _random_elliptic(d, seed)
    res = halfplane_green_integrals(A0, n)
    assert res.identity_error <= 1e-8
    assert green_identity_error(A0, n / np.linalg.norm(n), res.I_G, res.I_Pi) == res.identity_error


def test_degenerate_tensor_is_rejected():
    with pytest.raises(SolverError) as info:
        halfplane_green_integrals(np.zeros((2, 2, 2, 2)), np.array([0.0, 1.0]))
    assert info.value.stage == "green-integrals"


# the formula ---------------------------------------------------------------------------------
def test_constant_data_gives_constant_tail():
    A = EllipticTensorField.from_scalar(GRID, FIXTURE_A)
    c = np.array([0.4, -1.3])
    res = compute_tail_formula(A, BoundaryData.constant(GRID, c), HalfSpaceGeometry.from_normal([1, 2]))
    assert np.abs(res.U - c).max() <= 1e-8
    assert res.cross_check <= 1e-8


def test_constant_coefficient_reduces_to_plane_mean():
    C = _random_elliptic(2, 5)
    A = EllipticTensorField.from_constant(GRID, C)
    g = BoundaryData.from_expressions(GRID, FIXTURE_G)
    geo = HalfSpaceGeometry.from_normal([0, 1], 0.125)
    res = compute_tail_formula(A, g, geo, cross_check=False)
    # on y2 = 1/8: g = (cos(2 pi y1), 1 + sin(2 pi y1)), with mean (0, 1)
    assert np.allclose(res.U, [0.0, 1.0], atol=1e-10)
    assert np.allclose(res.term_breakdown[2:], 0.0)


@pytest.mark.parametrize("n", [(0, 1), (1, 2)])
def test_formula_matches_extrapolation(n):
    A = EllipticTensorField.from_scalar(GRID, FIXTURE_A)
    g = BoundaryData.from_expressions(GRID, FIXTURE_G)
    res = compute_tail_formula(A, g, HalfSpaceGeometry.from_normal(n))
    assert res.cross_check <= max(1e-3, 10 * res.extrapolation_error)
    assert res.cross_check <= 1e-5
    assert res.term_breakdown.shape == (4, 2)
    assert np.allclose(res.term_breakdown.sum(axis=0), res.U)
    text = res.to_csv("h")
    assert text.splitlines()[0] == "# config_sha256=h"
    assert text.splitlines()[1].startswith("component,U,line1")
    assert "cross_check" in res.report()


def test_traces_vanish_for_constant_coefficient():
    A = EllipticTensorField.identity(GRID)
    cs = corrector_set(A)
    tr = bl_corrector_traces(A, cs.chi, HalfSpaceGeometry.from_normal([1, 2]))
    assert np.abs(tr.gradient).max() == 0 and np.abs(tr.pressure).max() == 0
