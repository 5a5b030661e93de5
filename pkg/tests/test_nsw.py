import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsiclass.core import HsiCube, ValidationError
from hsiclass.io import SyntheticSceneSpec, generate_synthetic
from hsiclass.nsw import (
    NswParams,
    WindowSelection,
    padded_neighborhood,
    pearson,
    reconstruct_cube,
    reconstruct_pixel,
    select_best_window,
)
from oracles import naive_nsw, naive_pearson


def test_pearson_examples():
    assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 2, 3], [5, 5, 5]) == 0.0
    assert pearson([1, 2, 3, 4], [1, 2, 4, 8]) == pytest.approx(naive_pearson([1, 2, 3, 4], [1, 2, 4, 8]), abs=1e-14)


def test_pearson_errors():
    with pytest.raises(ValidationError):
        pearson([1, 2, 3], [1, 2])
    with pytest.raises(ValidationError):
        pearson([1], [1])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=st.floats(-100, 100)),
       st.floats(-10, 10), st.floats(0.1, 10))
def test_pearson_range_and_affine_invariance(x, shift, scale):
    y = x[::-1].copy()
    r = pearson(x, y)
    assert -1.0 <= r <= 1.0
    if np.var(y) > 1e-6 and np.var(x) > 1e-6:
        assert pearson(x, scale * y + shift) == pytest.approx(r, abs=1e-8)


def test_padded_neighborhood_geometry():
    cube = HsiCube(np.ones((4, 4, 2)))
    block = padded_neighborhood(cube, 0, 0, 3)
    assert np.count_nonzero(np.all(block == 0, axis=2)) == 5
    assert np.count_nonzero(np.all(padded_neighborhood(cube, 1, 1, 3) == 0, axis=2)) == 0
    one = HsiCube(np.ones((1, 1, 2)))
    assert np.count_nonzero(np.all(padded_neighborhood(one, 0, 0, 3) == 0, axis=2)) == 8


def test_params_validation():
    for bad in (dict(window=4), dict(window=1), dict(eps=0.0), dict(offset_min=2)):
        with pytest.raises(ValidationError):
            NswParams(**bad)
    assert NswParams(5).half == 2
    assert list(NswParams(5, offset_min=1).offsets) == [1, 2]


def test_a1_enumerates_four_windows():
    cube = HsiCube(np.random.default_rng(0).random((5, 5, 4)))
    sel = select_best_window(cube, 2, 2, NswParams(3))
    assert sel.scores.shape == (2, 2)
    assert sel.members.shape == (4, 4)


def test_constant_image_tie_picks_first_window():
    cube = HsiCube(np.full((5, 5, 3), 2.0))
    sel = select_best_window(cube, 2, 2, NswParams(5))
    assert sel.offset == (0, 0)
    assert sel.fallback
    np.testing.assert_array_equal(reconstruct_pixel(sel), [2.0, 2.0, 2.0])


def test_window_contains_target():
    cube = HsiCube(np.random.default_rng(1).random((7, 7, 5)))
    params = NswParams(5)
    for i, j in [(0, 0), (3, 3), (6, 2)]:
        sel = select_best_window(cube, i, j, params)
        np.testing.assert_array_equal(sel.members[sel.target_index], cube.values[i, j])
        assert sel.correlations[sel.target_index] == pytest.approx(1.0)


def test_window_avoids_noisy_side():
    rng = np.random.default_rng(4)
    spec = np.sin(np.linspace(0, 3, 8))
    v = np.broadcast_to(spec, (7, 7, 8)).copy() + 1e-3 * rng.standard_normal((7, 7, 8))
    v[:, 4:] = rng.standard_normal((7, 3, 8))  # unrelated spectra on the right
    cube = HsiCube(v)
    params = NswParams(5)
    sel = select_best_window(cube, 3, 3, params)
    assert sel.offset[1] == 0  # columns j-a .. j, away from the noise
    np.testing.assert_allclose(reconstruct_cube(cube, params).values, naive_nsw(v, 5), atol=1e-10)


def test_reconstruct_pixel_two_members():
    s1 = np.array([1.0, 0.0, 2.0])
    s2 = np.array([0.0, 4.0, 2.0])
    c = np.array([0.6, 0.2])
    sel = WindowSelection((0, 0), (0, 0), np.stack([s1, s2]), c, c / c.sum(), 0, False, np.zeros((1, 1)))
    np.testing.assert_allclose(reconstruct_pixel(sel), 0.75 * s1 + 0.25 * s2)


def test_reconstruct_pixel_identical_members():
    x = np.array([0.3, 0.9, 0.1, 0.5])
    v = np.broadcast_to(x, (3, 3, 4)).copy()
    sel = select_best_window(HsiCube(v), 1, 1, NswParams(3))
    np.testing.assert_allclose(reconstruct_pixel(sel), x, atol=1e-15)


def test_anticorrelated_neighbour_matches_oracle():
    x = np.array([1.0, 2.0, 3.0])
    v = np.stack([[x, 5.0 * x[::-1]]])
    out = reconstruct_cube(HsiCube(v), NswParams(3)).values
    np.testing.assert_allclose(out, naive_nsw(v, 3), atol=1e-12)


def test_fallback_triggers_when_correlations_cancel():
    # target's only in-window partner is perfectly anti-correlated: sum 1 + (-1) = 0 < eps
    x = np.array([1.0, 2.0, 3.0])
    v = np.stack([[x, 4.0 - x]])  # 1 x 2 image
    sel = select_best_window(HsiCube(v), 0, 0, NswParams(3, offset_min=1))
    assert sel.offset == (1, 1)
    assert sel.fallback
    np.testing.assert_array_equal(reconstruct_pixel(sel), x)


def test_zero_noise_scene_interior_unchanged():
    cube, gt = generate_synthetic(SyntheticSceneSpec(24, 24, 10, 3, 8, noise=0.0, seed=1))
    out = reconstruct_cube(cube, NswParams(3)).values
    lab = np.pad(gt.labels, 1, constant_values=-1)
    interior = np.ones(gt.shape, bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            interior &= lab[1 + di : 25 + di, 1 + dj : 25 + dj] == gt.labels
    interior[[0, -1], :] = False
    interior[:, [0, -1]] = False
    assert interior.sum() > 100
    np.testing.assert_allclose(out[interior], cube.values[interior], atol=1e-9)


def test_constant_cube_idempotent():
    x = np.random.default_rng(2).random(7)
    v = np.broadcast_to(x, (6, 5, 7)).copy()
    np.testing.assert_array_equal(reconstruct_cube(HsiCube(v), NswParams(3)).values, v)


@pytest.mark.parametrize("offset_min", [0, 1])
def test_vectorized_matches_per_pixel_path(offset_min):
    v = np.random.default_rng(3).standard_normal((6, 7, 5))
    cube = HsiCube(v)
    params = NswParams(5, offset_min=offset_min)
    fast = reconstruct_cube(cube, params, max_block=100).values
    for i in range(6):
        for j in range(7):
            np.testing.assert_allclose(fast[i, j], reconstruct_pixel(select_best_window(cube, i, j, params)),
                                       atol=1e-12)


def test_oracle_5x5x4():
    v = np.random.default_rng(11).random((5, 5, 4))
    np.testing.assert_allclose(reconstruct_cube(HsiCube(v), NswParams(3)).values, naive_nsw(v, 3), atol=1e-10)


cubes = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(2, 5)),
               elements=st.floats(-5, 5))


@settings(max_examples=40, deadline=None)
@given(cubes, st.sampled_from([3, 5]))
def test_output_finite_and_weights_affine(v, w):
    cube = HsiCube(v)
    params = NswParams(w)
    out = reconstruct_cube(cube, params).values
    assert np.all(np.isfinite(out))
    for i, j in [(0, 0), (v.shape[0] - 1, v.shape[1] - 1)]:
        sel = select_best_window(cube, i, j, params)
        assert math.isclose(sel.weights.sum(), 1.0, abs_tol=1e-9)
        if np.all(sel.weights >= 0):
            lo = sel.members.min(axis=0) - 1e-9
            hi = sel.members.max(axis=0) + 1e-9
            assert np.all((lo <= out[i, j]) & (out[i, j] <= hi))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 6), st.integers(0, 6))
def test_locality(seed, pi, pj):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((7, 7, 4))
    params = NswParams(3)
    base = reconstruct_cube(HsiCube(v), params).values
    v2 = v.copy()
    v2[pi, pj] += rng.standard_normal(4) * 3
    moved = reconstruct_cube(HsiCube(v2), params).values
    for i in range(7):
        for j in range(7):
            if max(abs(i - pi), abs(j - pj)) > params.half:
                np.testing.assert_array_equal(moved[i, j], base[i, j])
