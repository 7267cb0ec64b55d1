import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetflow.bvfunc import BVFunction
from facetflow.energy import bi_tv, regularize, tv
from facetflow.obstacle import (
    CurvatureError,
    FacetData,
    ObstacleNotConverged,
    ObstacleProblem,
    curvature,
    facet_at,
    lambda_affine,
    solve_obstacle_discrete,
    write_csv,
)

chis = st.sampled_from([-1, 1])


@pytest.mark.parametrize("a", [0.25, 0.5, 0.75])
def test_example_speeds(a):
    assert lambda_affine(FacetData(0.0, a, -1, -1, 2.0)) == pytest.approx(-2 / a)
    assert lambda_affine(FacetData(a, 1.0, 1, 1, 2.0)) == pytest.approx(2 / (1 - a))
    assert lambda_affine(FacetData(0.1, 0.1 + a, 1, -1, 2.0)) == 0.0


def test_rejects_degenerate():
    with pytest.raises(CurvatureError):
        FacetData(0.5, 0.5, 1, 1, 2.0)
    with pytest.raises(CurvatureError):
        FacetData(0.0, 1.0, 0, 1, 2.0)
    with pytest.raises(CurvatureError):
        FacetData(0.0, 1.0, 1, 1, -1.0)


@settings(max_examples=200)
@given(chis, chis, st.floats(0.01, 10), st.floats(0.01, 0.99), st.floats(0.0, 0.5))
def test_closed_form_symmetries(chi_l, chi_r, delta, length, start):
    base = lambda_affine(FacetData(start, start + length, chi_l, chi_r, delta))
    assert lambda_affine(FacetData(start, start + length, chi_r, chi_l, delta)) == base
    assert lambda_affine(FacetData(-start - length, -start, chi_r, chi_l, delta)) == base
    assert lambda_affine(FacetData(0.0, 2 * length, chi_l, chi_r, delta)) == pytest.approx(base / 2)
    bigger = lambda_affine(FacetData(start, start + length, chi_l, chi_r, 2 * delta))
    assert abs(bigger) >= abs(base)


def test_discrete_matches_closed_form_line():
    sol = solve_obstacle_discrete(ObstacleProblem(0.0, 1.0, 2.0, 1, 1), n=256)
    assert np.allclose(sol.dxi, lambda_affine(FacetData(0.0, 1.0, 1, 1, 2.0)), atol=1e-8)
    assert sol.residual < 1e-10


def test_discrete_opposite_transitions_constant():
    sol = solve_obstacle_discrete(ObstacleProblem(0.0, 1.0, 2.0, 1, -1), n=256)
    assert np.allclose(sol.xi, -1.0, atol=1e-9)


def test_discrete_hat_obstacle_feasible():
    hat = lambda x: 0.8 * np.minimum(x, 1 - x)
    prob = ObstacleProblem(0.0, 1.0, 0.5, 1, -1, hat)
    sol = solve_obstacle_discrete(prob, n=512)
    z = hat(sol.x) - hat(sol.x[0])
    assert np.all(np.abs(sol.xi - z) <= 0.25 + 1e-12)
    # the band binds somewhere: the unconstrained minimizer would be flat
    assert np.max(np.abs(sol.xi - z)) == pytest.approx(0.25, abs=1e-12)


def test_discrete_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_obstacle_discrete(ObstacleProblem(0.0, 1.0, 2.0, 1, 1), n=8)
    with pytest.raises(ObstacleNotConverged):
        solve_obstacle_discrete(ObstacleProblem(0.0, 1.0, 2.0, 1, 1, lambda x: np.sin(40 * x)), n=256, max_sweeps=3)


def test_discrete_csv_dump(tmp_path):
    sol = solve_obstacle_discrete(ObstacleProblem(0.2, 0.7, 1.0, -1, -1), n=64)
    path = tmp_path / "xi.csv"
    write_csv(sol, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x", "xi", "dxi"]
    assert len(rows) == 66


def test_facet_detection_on_step():
    a = 0.3
    u = BVFunction.step(a)
    top, bottom = facet_at(u, tv(), 0.1), facet_at(u, tv(), 0.6)
    assert (top.c_l, top.c_r, top.chi_l, top.chi_r) == (0.0, a, -1, -1)
    assert (bottom.c_l, bottom.c_r, bottom.chi_l, bottom.chi_r) == (a, 1.0, 1, 1)


@pytest.mark.parametrize("a", [0.25, 0.5])
def test_curvature_on_example(a):
    u = BVFunction.step(a)
    assert curvature(tv(), u, a / 2) == pytest.approx(-2 / a)
    assert curvature(tv(), u, (1 + a) / 2) == pytest.approx(2 / (1 - a))


def test_curvature_from_neighbour_slopes():
    # tent with a flat top on [0.4, 0.6]: neighbours below the facet on both sides
    f = BVFunction.from_points([0.0, 0.4, 0.6], [0.0, 1.0, 1.0])
    assert curvature(tv(), f, 0.5) == pytest.approx(-2 / 0.2)
    # bi-tv facet at slope +1 between slopes 0 and 2: convex corner on both ends
    g = BVFunction.from_points([0.0, 0.25, 0.5, 0.625], [0.0, 0.0, 0.25, 0.5])
    assert curvature(bi_tv(), g, 0.3) == pytest.approx(2 / 0.25)
    # slopes 0 and -1.5 around it: opposite transitions, no motion
    h = BVFunction.from_points([0.0, 0.2, 0.5, 0.7], [0.0, 0.0, 0.3, 0.0])
    assert curvature(bi_tv(), h, 0.35) == 0.0


def test_curvature_off_P_is_zero():
    f = BVFunction(np.array([0.0, 0.5]), np.array([0.0, 1.5]), np.array([3.0, -3.0]))
    assert curvature(tv(), f, 0.25) == 0.0


def test_curvature_rejects_unfaceted_crossing():
    with pytest.raises(CurvatureError):
        curvature(tv(), BVFunction.from_points([0.0, 0.5], [0.0, 1.0]), 0.5)


def test_curvature_smooth_energy_matches_finite_difference():
    r = regularize(tv(), 0.05)
    f = lambda x: 0.3 * (np.asarray(x) - 0.5) ** 2
    for x0 in (0.45, 0.5, 0.52, 0.8):
        expected = float(r.d2W(0.6 * (x0 - 0.5))) * 0.6
        assert curvature(r, f, x0) == pytest.approx(expected, abs=1e-6)
