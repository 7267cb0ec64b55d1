import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from facetflow import _kernel
from facetflow.bvfunc import (
    BVFunction,
    derivative,
    energy,
    jordan_decompose,
    l2_distance,
    lower_approx,
    mass,
    mollify,
    pointwise_max,
    pointwise_min,
    sample,
    total_variation,
    upper_approx,
)
from facetflow.energy import PLEnergy, bi_tv, growth_constants, tv

from conftest import random_bv

SAW = BVFunction.from_points([0.0, 0.5], [0.0, 1.0])  # slopes +2, -2


def sawtooth(n_teeth=1, height=1.0):
    x = np.arange(2 * n_teeth) / (2 * n_teeth)
    return BVFunction.from_points(x, np.tile([0.0, height], n_teeth))


def test_kernel_basics():
    z = np.linspace(-1.5, 1.5, 3001)
    assert np.all(_kernel.density(z) >= 0)
    assert _kernel.cdf(1.0) == pytest.approx(1.0, abs=1e-15)
    assert _kernel.cdf(0.0) == pytest.approx(0.5, abs=1e-15)
    mean_neg_part, _ = integrate.quad(lambda y: max(-y, 0.0) * _kernel.density(y), -1, 1, points=[-1 / 3, 1 / 3])
    assert _kernel.ramp(0.0) == pytest.approx(mean_neg_part, abs=1e-12)
    assert np.all(_kernel.ramp(z) >= np.maximum(z, 0.0))


def test_constructors_and_traces():
    u = BVFunction.step(0.3)
    assert u(0.1) == 1.0 and u(0.5) == 0.0
    assert u(0.3, "left") == 1.0 and u(0.3, "right") == 0.0
    assert u(0.0, "left") == 0.0 and u(0.0) == 1.0
    assert np.array_equal(u.jumps, [1.0, -1.0])
    with pytest.raises(ValueError):
        BVFunction(np.array([0.5, 0.2]), np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        BVFunction(np.array([0.0, 1.2]), np.zeros(2), np.zeros(2))


def test_table_round_trip(rng):
    for _ in range(20):
        u = random_bv(rng)
        v = BVFunction.from_table(u.to_table())
        assert np.array_equal(u.nodes, v.nodes)
        assert np.array_equal(u.right_values, v.right_values)
        assert np.array_equal(u.slopes, v.slopes)


def test_table_rejects_inconsistent():
    with pytest.raises(ValueError):
        BVFunction.from_table("0 5 1 0\n0.5 1 1 0\n")


def test_derivative_step():
    du = derivative(BVFunction.step(0.4))
    assert list(zip(du.atom_points, du.atom_amplitudes)) == [(0.0, 1.0), (0.4, -1.0)]
    assert np.all(du.densities == 0)


def test_derivative_constant_and_saw():
    du = derivative(BVFunction.constant(3.0))
    assert du.atom_points.size == 0 and np.all(du.densities == 0)
    du = derivative(SAW)
    assert du.atom_points.size == 0
    assert np.array_equal(du.densities, [2.0, -2.0])


@pytest.mark.parametrize("a", [0.25, 0.5, 0.75])
def test_step_energy_tv_mass(a):
    u = BVFunction.step(a)
    assert energy(u, tv()) == 2.0
    assert total_variation(u) == 2.0
    assert mass(u) == pytest.approx(a, abs=1e-15)


def test_energy_examples():
    assert energy(BVFunction.constant(1.7), tv()) == 0.0
    assert energy(BVFunction.constant(0.0), bi_tv()) == 2.0
    assert total_variation(BVFunction.constant(1.0)) == 0.0
    assert total_variation(SAW) == pytest.approx(2.0, abs=1e-15)


def test_step_energy_by_mollified_riemann_sum():
    # brute force: smooth the jumps over width w, integrate W(u') with a fine Riemann sum
    u = BVFunction.step(0.5, high=1.0, low=-0.5)
    e = bi_tv()
    w, n = 1e-3, 400_000
    x = (np.arange(n) + 0.5) / n
    slope = np.gradient(mollify(u, w, x), 1.0 / n)
    brute = np.sum(e(slope)) / n
    assert brute == pytest.approx(energy(u, e), rel=2e-3)


def test_mass_and_l2_examples():
    u = BVFunction.step(0.5)
    assert l2_distance(u, u) == 0.0
    assert l2_distance(BVFunction.constant(0.3), BVFunction.constant(-1.2)) == pytest.approx(1.5, abs=1e-15)
    assert mass(u) == 0.5


def test_mass_and_l2_against_quadrature(rng):
    for _ in range(10):
        u, v = random_bv(rng), random_bv(rng)
        pts = np.union1d(u.nodes, v.nodes)
        m, _ = integrate.quad(u, 0, 1, points=pts, limit=200)
        d2, _ = integrate.quad(lambda x: (u(x) - v(x)) ** 2, 0, 1, points=pts, limit=200)
        assert mass(u) == pytest.approx(m, abs=1e-10)
        assert l2_distance(u, v) == pytest.approx(np.sqrt(d2), abs=1e-8)


def test_energy_invariances(rng):
    e = PLEnergy((-0.5, 0.5, 2.0), (-3.0, -1.0, 1.0, 4.0), 1.0)
    for _ in range(20):
        u = random_bv(rng)
        ref = energy(u, e)
        assert energy(u + 3.5, e) == pytest.approx(ref, rel=1e-12)
        assert energy(u.rotate(rng.uniform()), e) == pytest.approx(ref, rel=1e-12)


def test_growth_bound_on_functions(rng):
    for e in (tv(), bi_tv(), PLEnergy((-0.5, 0.5), (-3.0, 0.2, 1.0), 0.4)):
        c0, c1, c2 = growth_constants(e)
        for _ in range(20):
            u = random_bv(rng)
            assert energy(u, e) >= c1 * total_variation(u) - c2 - 1e-12


def test_jordan_examples():
    pair = jordan_decompose(BVFunction.step(0.4))
    x = np.array([0.2, 0.6])
    assert np.array_equal(pair.plus(x), [0.0, 0.0])  # up-jump is the wrap at x = 1
    assert np.array_equal(pair.minus(x), [0.0, 1.0])
    assert (pair.plus_end, pair.minus_end) == (1.0, 1.0)
    pair = jordan_decompose(BVFunction.constant(2.0))
    assert pair.plus_variation == 0.0 and pair.minus_variation == 0.0
    ramp = BVFunction(np.array([0.0]), np.array([0.0]), np.array([1.0]))
    pair = jordan_decompose(ramp)
    xs = np.linspace(0, 0.99, 50)
    assert np.allclose(pair.plus(xs), xs) and np.all(pair.minus(xs) == 0)


def test_jordan_properties(rng):
    for _ in range(50):
        u = random_bv(rng)
        pair = jordan_decompose(u)
        x, ux = sample(u, 1000)
        assert np.allclose(pair.offset + pair.plus(x) - pair.minus(x), ux, atol=1e-12)
        assert np.all(np.diff(pair.plus(x)) >= -1e-13)
        assert np.all(np.diff(pair.minus(x)) >= -1e-13)
        assert pair.plus_variation + pair.minus_variation == pytest.approx(total_variation(u), abs=1e-12)


@pytest.mark.parametrize("k", [1, 4, 16, 64])
def test_approx_constant(k):
    c = BVFunction.constant(0.7)
    for v in (lower_approx(c, k), upper_approx(c, k)):
        assert np.allclose(sample(v)[1], 0.7, atol=1e-15)


@pytest.mark.parametrize("k", [4, 16, 64])
def test_approx_step_sandwich(k):
    u = BVFunction.step(0.37)
    x, ux = sample(u, 1000, offset=0.3)
    lo, hi = lower_approx(u, k), upper_approx(u, k)
    assert lo.is_continuous() and hi.is_continuous()
    assert np.all(lo(x) <= ux) and np.all(hi(x) >= ux)


def test_upper_is_mirror_of_lower(rng):
    u = random_bv(rng)
    for k in (3, 17):
        w, v = upper_approx(u, k), -lower_approx(-u, k)
        assert np.array_equal(w.nodes, v.nodes) and np.array_equal(w.right_values, v.right_values)


def test_approx_converges_at_continuity_points():
    u = BVFunction.step(0.5)
    x = np.array([0.1, 0.25, 0.4, 0.6, 0.8, 0.9])
    gaps = [np.max(np.abs(u(x) - lower_approx(u, k)(x))) for k in (4, 8, 16, 64, 256)]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] == 0.0


def test_upper_approx_of_monotone_datum():
    u = BVFunction(np.array([0.0]), np.array([-0.5]), np.array([1.0]))
    x, ux = sample(u)
    for k in (4, 16, 64):
        assert np.all(upper_approx(u, k)(x) >= ux - 1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_approx_sandwich_and_monotone(seed):
    rng = np.random.default_rng(seed)
    u = random_bv(rng)
    x = np.sort(rng.uniform(0, 1, 1000))
    ux_lo, ux_hi = u.lower(x), u.upper(x)
    prev_lo = prev_hi = None
    for k in range(1, 40, 3):
        lo, hi = lower_approx(u, k), upper_approx(u, k)
        assert lo.is_continuous(1e-10) and hi.is_continuous(1e-10)
        vlo, vhi = lo(x), hi(x)
        assert np.all(vlo <= ux_lo + 1e-12) and np.all(vhi >= ux_hi - 1e-12)
        if prev_lo is not None:
            assert np.all(vlo >= prev_lo - 1e-12) and np.all(vhi <= prev_hi + 1e-12)
        prev_lo, prev_hi = vlo, vhi


def test_lower_semicontinuity_surrogate(rng):
    # once the ramps are narrower than every node gap, E(v_k) = A + B/k exactly
    # (smearing a jump lowers the energy by O(1/k)), so the Richardson
    # extrapolation 2E(v_2k) - E(v_k) is the limit of the sequence
    e = bi_tv()
    for _ in range(10):
        u = random_bv(rng)
        k = 2 ** int(np.ceil(np.log2(8.0 / np.min(u.lengths))))
        limit = 2 * energy(lower_approx(u, 2 * k), e) - energy(lower_approx(u, k), e)
        assert limit >= energy(u, e) - 1e-8
        assert limit == pytest.approx(energy(u, e), rel=1e-9)


def test_pointwise_max_min(rng):
    for _ in range(20):
        u, v = random_bv(rng), random_bv(rng)
        x = rng.uniform(0, 1, 500)
        assert np.allclose(pointwise_max(u, v)(x), np.maximum(u(x), v(x)), atol=1e-12)
        assert np.allclose(pointwise_min(u, v)(x), np.minimum(u(x), v(x)), atol=1e-12)


def test_mollify_matches_quadrature(rng):
    u = random_bv(rng, n_nodes=4)
    h = 0.03
    for x0 in rng.uniform(0, 1, 8):
        ref, _ = integrate.quad(
            lambda y: u(x0 - y) * _kernel.density(y, h), -h, h, points=[-h / 3, h / 3], limit=200, epsabs=1e-13
        )
        assert mollify(u, h, np.array([x0]))[0] == pytest.approx(ref, abs=1e-8)


def test_mollify_preserves_mass_and_constants():
    u = BVFunction.step(0.5)
    x = (np.arange(4000) + 0.5) / 4000
    assert np.mean(mollify(u, 0.01, x)) == pytest.approx(0.5, abs=1e-12)
    assert np.allclose(mollify(BVFunction.constant(2.0), 0.1, x), 2.0, atol=1e-14)
