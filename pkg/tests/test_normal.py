from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import plackett_orthant
from srasym.normal import (
    MdcQuery,
    RegionQuery,
    bivariate_psi,
    gaussian_approximation,
    l1_on_boundary,
    mdc_constant,
    q_func,
    q_inv,
    second_order_region,
)

BINARY_V = 0.2 * 0.8 * np.log(4.0) ** 2


def rep_of(C, lam=0.0):
    C = np.asarray(C, float)
    return SimpleNamespace(v_d1=C[0, 0], v_joint=C[1, 1], matrix=C, lam=lam)


def test_q_examples():
    assert q_func(0.0) == 0.5
    assert q_inv(0.5) == pytest.approx(0.0, abs=1e-12)
    assert q_inv(0.05) == pytest.approx(1.644854, abs=1e-6)
    for p in (0.0, 1.0):
        with pytest.raises(ValueError):
            q_inv(p)


def test_q_inverse_round_trip():
    # below about x = -5.5, Q(x) rounds to a double within a few ulps of 1 and the
    # identity cannot hold to 1e-10 in float64; the range is kept as stated
    for x in np.linspace(-8, 8, 161):
        assert q_inv(q_func(x)) == pytest.approx(x, abs=1e-10)


def test_psi_examples():
    assert bivariate_psi(0, 0, np.eye(2)) == pytest.approx(0.25, abs=1e-10)
    assert bivariate_psi(0, 0, [[1, 0.5], [0.5, 1]]) == pytest.approx(0.25 + np.arcsin(0.5) / (2 * np.pi), abs=1e-9)
    assert bivariate_psi(40, 40, [[2, 0.3], [0.3, 1]]) == pytest.approx(1.0, abs=1e-8)


def test_psi_against_plackett():
    rng = np.random.default_rng(7)
    for _ in range(10):
        rho = rng.uniform(-0.95, 0.95)
        h, k = rng.uniform(-2.5, 2.5, 2)
        assert bivariate_psi(h, k, [[1, rho], [rho, 1]]) == pytest.approx(plackett_orthant(h, k, rho), abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.floats(-0.9, 0.9))
def test_psi_monotone_and_bounded(x, y, dx, rho):
    C = [[1.0, rho], [rho, 1.3]]
    base = bivariate_psi(x, y, C)
    assert 0.0 <= base <= 1.0
    assert bivariate_psi(x + dx, y, C) >= base - 1e-9
    assert bivariate_psi(x, y + dx, C) >= base - 1e-9


@pytest.mark.parametrize("delta, tol", [(1e-3, 1e-2), (1e-4, 1e-3)])
def test_rank_one_limit(delta, tol):
    C = np.array([[0.3, 0.45], [0.45, 0.675]])  # rank 1
    near = C.copy()
    near[0, 1] = near[1, 0] = (1 - delta) * C[0, 1]
    for x, y in [(0.2, 0.5), (-0.4, 0.1), (1.0, -0.3)]:
        assert abs(bivariate_psi(x, y, C) - bivariate_psi(x, y, near)) <= tol


def test_degenerate_and_negative_rank_one():
    with pytest.raises(ValueError, match="degenerate dispersion matrix"):
        bivariate_psi(0, 0, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        bivariate_psi(0, 0, [[1, -1], [-1, 1]])


def test_case_one_half_plane():
    b = second_order_region(RegionQuery("i", 0.05, rep_of(np.full((2, 2), 0.5))))
    assert np.allclose(b.points[:, 1], 1.163085, atol=1e-5)


def test_binary_rectangle_corner():
    b = second_order_region(RegionQuery("iii", 0.05, rep_of(np.full((2, 2), BINARY_V))))
    assert b.corner[0] == pytest.approx(np.sqrt(BINARY_V) * 1.644854, abs=1e-5)
    assert b.corner[0] == pytest.approx(0.912, abs=1e-3)
    assert b.corner[0] == pytest.approx(b.corner[1])


def test_generic_path_matches_rectangle():
    q = RegionQuery("iii", 0.05, rep_of(np.full((2, 2), BINARY_V)))
    a = np.sqrt(BINARY_V) * q_inv(0.05)
    grid = np.linspace(a + 0.01, a + 3, 25)
    closed = second_order_region(q, grid)
    generic = second_order_region(q, grid, closed_form=False)
    assert closed.corner is not None
    # every generic point lies on the rectangle boundary min(L1 - a, L2 - a) = 0
    gap = np.minimum(generic.points[:, 0] - a, generic.points[:, 1] - a)
    assert np.max(np.abs(gap)) < 1e-6
    assert generic.points[-1, 0] == pytest.approx(grid[-1])


def test_quaternary_like_smooth_boundary_asymptote():
    C = np.array([[0.05, 0.03], [0.03, 0.06]])
    q = RegionQuery("iii", 0.005, rep_of(C))
    L1_far = l1_on_boundary(q, 10.0)
    assert L1_far == pytest.approx(np.sqrt(C[0, 0]) * q_inv(0.005), abs=1e-6)
    b = second_order_region(q)
    assert b.corner is None
    d = np.diff(b.points, axis=0)
    assert np.all(d[:, 0] >= 0) and np.all(d[:, 1] <= 0)
    # consecutive segments never turn clockwise, so the curve is convex
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    assert np.all(cross > -1e-8)


def test_mdc_examples():
    rep = rep_of(np.full((2, 2), BINARY_V))
    assert mdc_constant(MdcQuery(1, 1, rep), "iii") == pytest.approx(1.626070, abs=1e-6)
    half = rep_of(np.full((2, 2), 0.5))
    assert mdc_constant(MdcQuery(1, 2, half), "iii") == pytest.approx(1.0)
    assert mdc_constant(MdcQuery(2, 1, rep), "ii") == pytest.approx(4 * mdc_constant(MdcQuery(1, 1, rep), "ii"))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0, 2))
def test_mdc_case_three_is_min(t1, t2, lam):
    rep = rep_of([[0.3, 0.1], [0.1, 0.4]])
    q = MdcQuery(t1, t2, rep, lam)
    assert mdc_constant(q, "iii") == min(mdc_constant(q, "i"), mdc_constant(q, "ii"))


def test_gaussian_approximation_cases():
    rep = rep_of(np.full((2, 2), 0.5))
    assert gaussian_approximation(0, 0, rep) == pytest.approx(0.5)
    assert gaussian_approximation(1.163085, 5, rep, case_tag="ii") == pytest.approx(0.05, abs=1e-6)
