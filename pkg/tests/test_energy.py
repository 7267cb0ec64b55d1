import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facetflow.energy import (
    AlphaBetaForm,
    EnergyError,
    PLEnergy,
    bi_tv,
    eval_W,
    from_alpha_beta,
    growth_constants,
    jump_at,
    parse_energy,
    regularize,
    subdifferential,
    to_alpha_beta,
    tv,
)


@st.composite
def energies(draw):
    n = draw(st.integers(1, 5))
    bps = sorted(draw(st.lists(st.floats(-3, 3), min_size=n, max_size=n, unique=True)))
    if np.any(np.diff(bps) < 1e-3):
        bps = list(np.linspace(-2, 2, n))
    incr = draw(st.lists(st.floats(0.05, 3), min_size=n, max_size=n))
    first = -draw(st.floats(0.05, 3))
    slopes = np.concatenate([[first], first + np.cumsum(incr)])
    if slopes[-1] <= 0:
        slopes[-1] = 0.5
        if slopes[-1] <= slopes[-2]:
            slopes[-1] = slopes[-2] + 0.5
    return PLEnergy(tuple(bps), tuple(slopes), draw(st.floats(-5, 5)))


@pytest.mark.parametrize(
    "e, p, expected",
    [(tv(), 2.0, 2.0), (bi_tv(), 0.0, 2.0), (tv(), 0.0, 0.0), (bi_tv(), 3.0, 6.0), (bi_tv(), -0.5, 2.0)],
)
def test_eval_values(e, p, expected):
    assert eval_W(e, p) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize(
    "e, p, lo, hi",
    [(tv(), 0.0, -1.0, 1.0), (tv(), 2.0, 1.0, 1.0), (bi_tv(), 1.0, 0.0, 2.0), (bi_tv(), -1.0, -2.0, 0.0)],
)
def test_subdifferential(e, p, lo, hi):
    assert subdifferential(e, p) == (lo, hi)


def test_jump_at():
    assert jump_at(tv(), 0.0) == 2.0
    assert jump_at(bi_tv(), -1.0) == 2.0
    assert jump_at(bi_tv(), 0.3) == 0.0


@pytest.mark.parametrize(
    "b, s",
    [((0.0,), (1.0, 2.0)), ((0.0,), (-1.0, -0.5)), ((0.0, 0.0), (-1.0, 0.0, 1.0)), ((), (1.0,)), ((0.0,), (1.0, -1.0))],
)
def test_rejects_invalid(b, s):
    with pytest.raises(EnergyError):
        PLEnergy(b, s)


def test_alpha_beta_tv():
    ab = to_alpha_beta(tv())
    assert (ab.n_plus, ab.n_minus) == (1, 1)
    assert ab.alpha_plus == (1.0,) and ab.alpha_minus == (1.0,)
    assert ab.beta_plus == (0.0,) and ab.beta_minus == (0.0,)


def test_alpha_beta_bi_tv():
    ab = to_alpha_beta(bi_tv())
    assert ab.alpha_plus == (2.0,) and ab.beta_plus == (-1.0,)
    assert ab.alpha_minus == (2.0,) and ab.beta_minus == (1.0,)
    p = np.linspace(-4, 4, 101)
    assert np.allclose(ab(p) - ab(0.0), eval_W(bi_tv(), p) - 2.0, atol=1e-14)


def test_alpha_beta_ignores_constant():
    base = bi_tv()
    shifted = PLEnergy(base.breakpoints, base.slopes, base.value_at_zero + 7)
    assert to_alpha_beta(base) == to_alpha_beta(shifted)


@settings(max_examples=200, deadline=None)
@given(energies())
def test_alpha_beta_round_trip(e):
    ab = to_alpha_beta(e)
    assert ab.n_plus >= 1 and ab.n_minus >= 1
    assert all(a > 0 for a in ab.alpha_plus + ab.alpha_minus)
    p = np.linspace(-10, 10, 1000)
    diff = ab(p) - eval_W(e, p)
    assert np.ptp(diff) <= 1e-12 * max(1.0, np.abs(eval_W(e, p)).max())
    back = from_alpha_beta(ab, e.value_at_zero)
    assert np.allclose(back.breakpoints, e.breakpoints, atol=1e-14)
    assert np.allclose(back.slopes, e.slopes, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(energies(), st.lists(st.floats(-8, 8), min_size=3, max_size=3), st.floats(0.01, 0.99))
def test_convexity(e, pts, lam):
    p, q = min(pts[:2]), max(pts[:2])
    mid = eval_W(e, lam * p + (1 - lam) * q)
    assert mid <= lam * eval_W(e, p) + (1 - lam) * eval_W(e, q) + 1e-10


@settings(max_examples=100, deadline=None)
@given(energies())
def test_subdifferential_matches_difference_quotients(e):
    step = 1e-7
    for p in e.breakpoints:
        lo, hi = subdifferential(e, p)
        assert (eval_W(e, p) - eval_W(e, p - step)) / step == pytest.approx(lo, abs=1e-6)
        assert (eval_W(e, p + step) - eval_W(e, p)) / step == pytest.approx(hi, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(energies())
def test_growth_constants_valid(e):
    c0, c1, c2 = growth_constants(e)
    p = np.concatenate([np.asarray(e.breakpoints), np.linspace(-50, 50, 2001)])
    w = eval_W(e, p)
    assert np.all(c1 * np.abs(p) - c2 <= w + 1e-9)
    assert np.all(w <= c0 * (np.abs(p) + 1) + 1e-9)


def test_growth_constants_examples():
    assert growth_constants(tv()) == (1.0, 1.0, 0.0)
    c0, c1, c2 = growth_constants(bi_tv())
    assert (c0, c1) == (2.0, 2.0) and c2 <= 2.0


@pytest.mark.parametrize("eps", [1e-1, 1e-2, 1e-3])
@pytest.mark.parametrize("e", [tv(), bi_tv(), PLEnergy((-0.5, 0.2, 1.0), (-1.0, 0.3, 0.4, 2.0), 0.7)])
def test_regularized_sandwich(e, eps):
    r = regularize(e, eps)
    p = np.linspace(-10, 10, 20001)
    w, we = eval_W(e, p), r.W(p)
    assert np.all(w <= we + 1e-12)
    assert np.all(we <= w + r.k * eps + 0.5 * eps * p**2 + 1e-12)
    assert np.all(r.d2W(p) >= eps - 1e-12)


def test_regularized_tv_tails():
    r = regularize(tv(), 0.01)
    assert np.all(r.L(np.array([0.01, 0.5, 3.0])) == 1.0)
    assert np.all(r.L(np.array([-0.01, -0.5, -3.0])) == -1.0)
    assert 0.0 <= r.W(0.0) <= r.k * 0.01


def test_regularized_derivatives_consistent():
    r = regularize(bi_tv(), 0.05)
    p = np.linspace(-2, 2, 401)
    step = 1e-6
    assert np.allclose((r.W(p + step) - r.W(p - step)) / (2 * step), r.dW(p), atol=1e-7)
    assert np.allclose((r.dW(p + step) - r.dW(p - step)) / (2 * step), r.d2W(p), atol=1e-5)


@pytest.mark.parametrize(
    "spec",
    [
        "bi-tv",
        {"breakpoints": "-1 1", "slopes": "-2 0 2", "value_at_zero": "2"},
        {"alpha_plus": [2], "beta_plus": [-1], "alpha_minus": [2], "beta_minus": [1]},
    ],
)
def test_parse_energy(spec):
    e = parse_energy(spec)
    assert e.breakpoints == (-1.0, 1.0) and e.slopes == (-2.0, 0.0, 2.0)
    # the (alpha, beta) sum carries no additive constant
    assert eval_W(e, 0.0) == (0.0 if "alpha_plus" in spec else 2.0)


def test_parse_energy_rejects():
    with pytest.raises(EnergyError):
        parse_energy("huber")
    with pytest.raises(EnergyError):
        parse_energy({"alpha_plus": [-1], "beta_plus": [0], "alpha_minus": [1], "beta_minus": [0]})
    with pytest.raises(EnergyError):
        parse_energy({"foo": 1})
