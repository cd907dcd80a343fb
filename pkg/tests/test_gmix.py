import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from oracles import gauss
from podreach import HybridMixture, WeightedGaussian, affine_pushforward, inner_product, product
from podreach.gmix import (DimensionError, NotPositiveDefiniteError, interval_mass, multiply_collapse,
                           project_weights, reduce)


def _rand_spd(rng, n):
    M = rng.normal(size=(n, n))
    return M @ M.T + 0.3 * np.eye(n)


def _rand_mix(rng, k, n_modes=1, dim=1, signed=False, spread=3.0):
    modes = []
    for _ in range(n_modes):
        w = rng.uniform(0.1, 1.0, k) * (rng.choice([-1, 1], k) if signed else 1)
        m = rng.uniform(-spread, spread, (k, dim))
        S = np.array([_rand_spd(rng, dim) if dim > 1 else [[rng.uniform(0.1, 2.0)]] for _ in range(k)])
        modes.append((w, m, S))
    return HybridMixture(n_modes, dim, modes)


# ---------------------------------------------------------------------------
# product
# ---------------------------------------------------------------------------

def test_product_standard_normals():
    r = product(WeightedGaussian(1, 0, 1), WeightedGaussian(1, 0, 1))
    assert r.weight == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-14)
    assert r.mean[0] == 0.0
    assert r.cov[0, 0] == pytest.approx(0.5)


def test_product_weights_are_bilinear():
    r = product(WeightedGaussian(2, 0, 1), WeightedGaussian(3, 0, 1))
    assert r.weight == pytest.approx(6 / math.sqrt(4 * math.pi), rel=1e-14)
    assert r.weight == pytest.approx(1.69253, abs=5e-5)  # 6 x 0.28209, rounded


def test_product_offset_pair_matches_pointwise(rng):
    a, b = WeightedGaussian(1, 1, 2), WeightedGaussian(1, 3, 4)
    r = product(a, b)
    assert r.weight == pytest.approx(0.11670, abs=1e-5)
    assert r.mean[0] == pytest.approx(5 / 3)
    assert r.cov[0, 0] == pytest.approx(4 / 3)
    x = rng.uniform(-5, 8, 20)
    np.testing.assert_allclose(r(x), a(x) * b(x), rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_product_pointwise_identity(n, seed):
    rng = np.random.default_rng(seed)
    a = WeightedGaussian(rng.uniform(-2, 2), rng.normal(size=n), _rand_spd(rng, n))
    b = WeightedGaussian(rng.uniform(-2, 2), rng.normal(size=n), _rand_spd(rng, n))
    x = rng.normal(size=(100, n))
    np.testing.assert_allclose(product(a, b)(x), a(x) * b(x), rtol=1e-10, atol=1e-300)


def test_product_rejects_dimension_mismatch():
    with pytest.raises(DimensionError):
        product(WeightedGaussian(1, [0.0], 1), WeightedGaussian(1, [0.0, 0.0], np.eye(2)))


def test_component_rejects_indefinite_covariance():
    with pytest.raises(NotPositiveDefiniteError):
        WeightedGaussian(1, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(NotPositiveDefiniteError):
        WeightedGaussian(1, 0.0, 0.0)


def test_component_symmetrizes_covariance():
    g = WeightedGaussian(1, [0.0, 0.0], [[2.0, 0.5 + 1e-14], [0.5, 1.0]])
    np.testing.assert_array_equal(g.cov, g.cov.T)


# ---------------------------------------------------------------------------
# affine pushforward
# ---------------------------------------------------------------------------

def test_pushforward_identity_is_exact():
    g = WeightedGaussian(0.7, 1.3, 2.0)
    r = affine_pushforward(g, 1.0, 0.0)
    assert (r.weight, r.mean[0], r.cov[0, 0]) == (0.7, 1.3, 2.0)


def test_pushforward_thermostat_weight_multiplier():
    b, c, xa = 0.0167, 0.8, 6.0
    r = affine_pushforward(WeightedGaussian(1.0, 20.0, 0.01), 1 - b, c * 1 + b * xa)
    assert r.weight == pytest.approx(1 / 0.9833, rel=1e-14)
    assert r.weight == pytest.approx(1.01698, abs=1e-5)


def test_pushforward_pointwise():
    # N(x'; 2x + 1, 4) as a function of x, at (x, x') = (0.7, 3.1)
    r = affine_pushforward(WeightedGaussian(1.0, 3.1, 4.0), 2.0, 1.0)
    assert r(0.7) == pytest.approx(gauss(3.1, 2 * 0.7 + 1, 4.0), rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_pushforward_pointwise_random(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 2 * np.eye(n)
    f, xp, W = rng.normal(size=n), rng.normal(size=n), _rand_spd(rng, n)
    r = affine_pushforward(WeightedGaussian(1.5, xp, W), A, f)
    x = rng.normal(size=(10, n))
    direct = 1.5 * WeightedGaussian(1.0, xp, W)(x @ A.T + f)
    np.testing.assert_allclose(r(x), direct, rtol=1e-10)


def test_pushforward_rejects_singular_map():
    with pytest.raises(np.linalg.LinAlgError):
        affine_pushforward(WeightedGaussian(1.0, [0.0, 0.0], np.eye(2)), [[1, 2], [2, 4]], [0, 0])


# ---------------------------------------------------------------------------
# inner products
# ---------------------------------------------------------------------------

def test_inner_product_single_pair():
    a = HybridMixture.single_mode([1.0], [[0.0]], [[[1.0]]])
    assert inner_product(a, a) == pytest.approx(0.28209, abs=1e-5)


def test_inner_product_disjoint_modes_is_zero():
    a = HybridMixture.single_mode([1.0], [[0.0]], [[[1.0]]], n_modes=2, mode=0)
    b = HybridMixture.single_mode([1.0], [[0.0]], [[[1.0]]], n_modes=2, mode=1)
    assert inner_product(a, b) == 0.0


def test_inner_product_matches_quadrature(rng):
    a, b = _rand_mix(rng, 3, signed=True), _rand_mix(rng, 3, signed=True)
    xs = np.arange(-50, 50 + 5e-4, 1e-3)
    ref = trapezoid(a(xs, 0) * b(xs, 0), xs)
    assert inner_product(a, b) == pytest.approx(ref, rel=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_inner_product_symmetric_and_bilinear(seed, c1, c2):
    rng = np.random.default_rng(seed)
    a, b, c = (_rand_mix(rng, 4, n_modes=2, dim=2, signed=True) for _ in range(3))
    assert inner_product(a, b) == inner_product(b, a)
    # bilinearity in the weights of the first argument
    comb = a.with_modes([(np.concatenate([c1 * a.mode(q)[0], c2 * c.mode(q)[0]]),
                          np.concatenate([a.mode(q)[1], c.mode(q)[1]]),
                          np.concatenate([a.mode(q)[2], c.mode(q)[2]])) for q in range(2)])
    lhs = inner_product(comb, b)
    rhs = c1 * inner_product(a, b) + c2 * inner_product(c, b)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_inner_product_rejects_mode_mismatch():
    a = HybridMixture.single_mode([1.0], [[0.0]], [[[1.0]]], n_modes=2)
    b = HybridMixture.single_mode([1.0], [[0.0]], [[[1.0]]], n_modes=3)
    with pytest.raises(DimensionError):
        inner_product(a, b)


# ---------------------------------------------------------------------------
# interval mass
# ---------------------------------------------------------------------------

def test_interval_mass_interior():
    m = HybridMixture.single_mode([1.0], [[19.75]], [[[0.1]]])
    assert interval_mass(m, [17.5], [22.0]) == pytest.approx(1.0, abs=1e-10)


def test_interval_mass_zero_mixture():
    m = HybridMixture.single_mode([0.0], [[19.75]], [[[0.1]]])
    assert interval_mass(m, [17.5], [22.0]) == 0.0


def test_interval_mass_boundary_mean():
    from scipy.stats import norm
    m = HybridMixture.single_mode([1.0], [[17.5]], [[[1.0]]])
    got = interval_mass(m, [17.5], [22.0])
    assert got == pytest.approx(0.5 - norm.sf(4.5), rel=1e-12)
    assert got == pytest.approx(0.49997, abs=5e-5)


def test_interval_mass_wide_box_is_total_mass(rng):
    m = HybridMixture.single_mode([1.0], [[0.3]], [[[2.0]]])
    assert interval_mass(m, [-1e3], [1e3]) == pytest.approx(1.0, abs=1e-9)


def test_interval_mass_mode_selection():
    m = HybridMixture.single_mode([1.0], [[19.0]], [[[0.1]]], n_modes=2, mode=1)
    assert interval_mass(m, [17.5], [22.0], modes=[0]) == 0.0
    assert interval_mass(m, [10.0], [30.0], modes=[1]) == pytest.approx(1.0, abs=1e-12)


def test_interval_mass_diagonal_2d():
    m = HybridMixture.single_mode([2.0], [[0.0, 1.0]], [np.diag([1.0, 4.0])])
    from scipy.stats import norm
    ref = 2.0 * (norm.cdf(1) - norm.cdf(-1)) * (norm.cdf(1.5) - norm.cdf(-1.0))
    assert interval_mass(m, [-1, -1], [1, 4]) == pytest.approx(ref, rel=1e-12)


def test_interval_mass_rejects_empty_box():
    m = HybridMixture.single_mode([1.0], [[0.0]], [[[1.0]]])
    with pytest.raises(ValueError):
        interval_mass(m, [1.0], [0.0])


# ---------------------------------------------------------------------------
# reduction
# ---------------------------------------------------------------------------

def test_reduce_small_mixture_unchanged(rng):
    m = _rand_mix(rng, 5)
    r = reduce(m, 20)
    for a, b in zip(m.mode(0), r.mode(0)):
        np.testing.assert_array_equal(a, b)


def test_reduce_identical_pair():
    m = HybridMixture.single_mode([0.5, 0.5], [[1.0], [1.0]], [[[2.0]], [[2.0]]])
    w, mu, S = reduce(m, 1).mode(0)
    assert w.tolist() == [1.0] and mu[0, 0] == pytest.approx(1.0) and S[0, 0, 0] == pytest.approx(2.0)


def test_reduce_l2_error_bounded_by_merge_costs(rng):
    m = _rand_mix(rng, 100, spread=10.0)
    res = reduce(m, 20, return_costs=True)
    assert res.mixture.n_components(0) <= 20
    xs = np.arange(-40, 40, 1e-3)
    l2 = math.sqrt(trapezoid((res.mixture(xs, 0) - m(xs, 0)) ** 2, xs))
    bound = float(np.sum(np.sqrt(np.maximum(res.merge_costs[0], 0.0))))
    assert len(res.merge_costs[0]) == 80
    assert l2 <= bound + 1e-9


def test_reduce_moments_preserved_for_positive_mixture(rng):
    m = _rand_mix(rng, 60)
    w, mu, S = m.mode(0)
    rw, rm, rS = reduce(m, 7).mode(0)
    mean = (w @ mu[:, 0]) / w.sum()
    assert (rw @ rm[:, 0]) / rw.sum() == pytest.approx(mean, rel=1e-10)
    second = w @ (S[:, 0, 0] + mu[:, 0] ** 2)
    assert rw @ (rS[:, 0, 0] + rm[:, 0] ** 2) == pytest.approx(second, rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 25), st.integers(1, 3), st.booleans())
def test_reduce_preserves_mode_mass_and_caps_count(seed, target, dim, signed):
    rng = np.random.default_rng(seed)
    m = _rand_mix(rng, 60, n_modes=2, dim=dim, signed=signed)
    r = reduce(m, target)
    for q in range(2):
        assert r.n_components(q) <= max(target, 2 if signed else 1)
        scale = max(1.0, float(np.abs(m.mode(q)[0]).sum()))
        assert abs(r.mode_weight(q) - m.mode_weight(q)) <= 1e-12 * scale


def test_reduce_large_1d_mixture_uses_band(rng):
    m = _rand_mix(rng, 500, spread=20.0)
    r = reduce(m, 20)
    assert r.n_components(0) == 20
    assert r.mode_weight(0) == pytest.approx(m.mode_weight(0), abs=1e-12)


def test_reduce_rejects_zero_target(rng):
    with pytest.raises(ValueError):
        reduce(_rand_mix(rng, 3), 0)


# ---------------------------------------------------------------------------
# helpers used by the filters
# ---------------------------------------------------------------------------

def test_project_weights_recovers_exact_combination(rng):
    bm = np.linspace(-3, 3, 7)[:, None]
    bS = np.full((7, 1, 1), 0.5)
    v = rng.uniform(0.1, 1.0, 7)
    est = project_weights(bm, bS, v, bm, bS)
    np.testing.assert_allclose(est, v, rtol=1e-6)


def test_multiply_collapse_matches_full_product_in_l2(rng):
    ind = (np.full(20, 0.3), np.linspace(0, 10, 20)[:, None], np.full((20, 1, 1), 0.1))
    comps = (np.array([1.0, 0.5]), np.array([[5.0], [0.2]]), np.array([[[0.05]], [[0.3]]]))
    w, m, S = multiply_collapse(*ind, *comps)
    from podreach.gmix import multiply_arrays
    fw, fm, fS = multiply_arrays(*ind, *comps)
    xs = np.linspace(-3, 13, 20001)
    a = HybridMixture.single_mode(w, m, S)(xs, 0)
    b = HybridMixture.single_mode(fw, fm, fS)(xs, 0)
    assert w.size < fw.size
    assert math.sqrt(trapezoid((a - b) ** 2, xs)) <= 1e-2 * math.sqrt(trapezoid(b ** 2, xs))
