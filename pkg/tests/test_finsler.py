import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plasthom import finsler as Fs
from plasthom import tensor as T
from plasthom.errors import InputError, NotTangent, OutsideK

NORM = Fs.FROBENIUS
seeds = st.integers(0, 2 ** 31 - 1)


def closed_form(m, t=1.0):
    """Geodesic of the left-invariant Frobenius metric from I with body velocity m."""
    return T.expm(t * m.T) @ T.expm(t * (m - m.T))


def points(seed, count, radius=0.5):
    return Fs.sample_in_k(NORM, radius, np.random.default_rng(seed), count)


@settings(max_examples=10)
@given(seeds)
def test_geodesic_matches_closed_form(seed):
    m = T.random_sl3_tangent(np.random.default_rng(seed), None, 0.4)
    res = Fs.geodesic(NORM, np.eye(3), closed_form(m), 32)
    assert res.length == pytest.approx(T.frob(m), rel=1e-5, abs=1e-9)
    mid = res.path.sample(0.5)
    np.testing.assert_allclose(mid, closed_form(m, 0.5), atol=1e-4)


@settings(max_examples=10)
@given(seeds)
def test_distance_basics(seed):
    f, g = points(seed, 2)
    assert Fs.distance(NORM, f, f) == 0.0
    d = Fs.distance(NORM, f, g, 16)
    assert d > 0
    # the Frobenius norm is symmetric, hence so is the distance
    assert Fs.distance(NORM, g, f, 16) == pytest.approx(d, rel=1e-5)
    assert d <= Fs.delta_I(NORM, T.logm(T.inverse_sl3(f) @ g)) + 1e-8


def test_left_invariance(rng):
    f, g, h = Fs.sample_in_k(NORM, 0.5, rng, 3)
    assert Fs.distance(NORM, h @ f, h @ g, 16) == pytest.approx(Fs.distance(NORM, f, g, 16), rel=1e-6)


def test_refinement_keeps_length_and_lowers_optimum(rng):
    f, g = Fs.sample_in_k(NORM, 0.5, rng, 2)
    path = Fs.group_path(f, g, 8)
    assert Fs.finsler_length(NORM, path.refine()) == pytest.approx(Fs.finsler_length(NORM, path), rel=1e-12)
    lengths = [Fs.distance(NORM, f, g, n) for n in (4, 8, 16, 32)]
    assert all(b <= a + 1e-12 for a, b in zip(lengths, lengths[1:]))


def test_group_path_nodes_in_sl3(rng):
    f, g = Fs.sample_in_k(NORM, 0.5, rng, 2)
    nodes = Fs.group_path(f, g, 16).nodes
    assert np.max(np.abs(T.det(nodes) - 1)) <= 1e-9
    np.testing.assert_array_equal(nodes[0], f)
    np.testing.assert_array_equal(nodes[-1], g)


def test_exp_and_log_maps(rng):
    m = T.random_sl3_tangent(rng, None, 0.3)
    g = closed_form(m)
    np.testing.assert_allclose(Fs.log_map(NORM, np.eye(3), g), m, atol=1e-3)
    np.testing.assert_allclose(Fs.exp_map(NORM, np.eye(3), m), g, atol=1e-4)
    s = 0.5 * (m + m.T)
    np.testing.assert_allclose(Fs.exp_map(NORM, np.eye(3), s), T.expm(s), atol=1e-4)


def test_non_tangent_velocity_rejected():
    with pytest.raises(NotTangent):
        Fs.delta(NORM, np.eye(3), np.eye(3))
    with pytest.raises(NotTangent):
        Fs.exp_map(NORM, np.eye(3), np.eye(3))


@given(seeds, st.floats(0.0, 1.0))
def test_gamma_interp_endpoints_and_determinant(seed, t):
    f, g = points(seed, 2)
    np.testing.assert_array_equal(Fs.gamma_interp(NORM, 0.0, f, g), f)
    np.testing.assert_array_equal(Fs.gamma_interp(NORM, 1.0, f, g), g)
    p = Fs.gamma_interp(NORM, t, f, g)
    assert abs(T.det(p) - 1) <= 1e-9


def test_gamma_interp_batched_matches_single(rng):
    f = Fs.sample_in_k(NORM, 0.5, rng, 5)
    g = Fs.sample_in_k(NORM, 0.5, rng, 5)
    t = rng.uniform(size=5)
    batch = Fs.gamma_interp(NORM, t, f, g)
    for i in range(5):
        np.testing.assert_allclose(batch[i], Fs.gamma_interp(NORM, t[i], f[i], g[i]), atol=1e-14)
    exact = Fs.gamma_interp(NORM, 0.3, f[0], g[0], mode=Fs.GEODESIC_EXACT)
    assert abs(T.det(exact) - 1) <= 1e-9
    with pytest.raises(InputError):
        Fs.gamma_interp(NORM, 0.3, f[0], g[0], mode="spline")


def test_gamma_interp_checks_k():
    far = T.expm(np.diag([1.0, -1.0, 0.0]))
    with pytest.raises(OutsideK):
        Fs.gamma_interp(NORM, 0.5, np.eye(3), far, k_radius=0.5)


def test_membership_in_k(rng):
    assert Fs.in_k(NORM, np.eye(3), 0.5)
    assert not Fs.in_k(NORM, T.expm(np.diag([1.0, -1.0, 0.0])), 0.5)
    pts = Fs.sample_in_k(NORM, 0.5, rng, 20)
    lo, up = Fs.dsym_bounds(NORM, pts)
    assert np.all(lo <= up + 1e-12)
    assert np.all(lo <= 0.5 + 1e-9)


def test_convexity_probe_and_velocity(rng):
    rep = Fs.convexity_probe(NORM, 0.5, pairs=4, seed=3)
    assert rep.pass_rate == 1.0
    pairs = Fs.sample_in_k(NORM, 0.5, rng, 8).reshape(4, 2, 3, 3)
    c = Fs.velocity_constant(NORM, pairs)
    assert np.all(np.isfinite(c)) and np.all(c > 0)


def test_norm_config_roundtrip():
    n = Fs.MinkowskiNorm("weighted_deviatoric", 2.0)
    assert Fs.MinkowskiNorm.from_dict(n.to_dict()) == n
    assert n.c4 == n.c5 == 2.0
    with pytest.raises(InputError):
        Fs.MinkowskiNorm("taxicab")
    c = np.arange(8.0)
    np.testing.assert_allclose(Fs.sl3_coords(Fs.sl3_from_coords(c)), c)
