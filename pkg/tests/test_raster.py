import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_distance_transform
from tapetrack.geometry import CameraModel, look_at
from tapetrack.mrf.energies import mrf2_unary
from tapetrack.mrf.raster import (
    C_MAX,
    I_MAX,
    CostRaster,
    RasterStack,
    build_cost_raster,
    read_pgm,
    save_raster_pgm,
    write_pgm,
)


def small_camera(w, h):
    return CameraModel(0, 50.0, 50.0, (w - 1) / 2, (h - 1) / 2, np.eye(3), np.zeros(3), w, h)


def test_bright_dot_inside_mask_costs_zero():
    img = np.zeros((8, 8))
    img[3, 4] = I_MAX
    mask = np.zeros((8, 8), bool)
    mask[2:6, 2:6] = True
    r = build_cost_raster(img, mask, small_camera(8, 8))
    assert r.values[3, 4] == 0
    assert np.unravel_index(np.argmin(r.values), r.values.shape) == (3, 4)


def test_outside_values_match_brute_force_32():
    rng = np.random.default_rng(0)
    mask = rng.random((32, 32)) < 0.03
    mask[5, 5] = True
    r = build_cost_raster(rng.random((32, 32)) * I_MAX, mask, small_camera(32, 32))
    ref = brute_force_distance_transform(mask)
    assert np.array_equal(r.values[~mask], ref[~mask] + I_MAX)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 40), st.integers(2, 40))
def test_distance_transform_exact(seed, h, w):
    rng = np.random.default_rng(seed)
    mask = rng.random((h, w)) < rng.uniform(0.01, 0.3)
    mask[rng.integers(h), rng.integers(w)] = True
    r = build_cost_raster(np.zeros((h, w)), mask, small_camera(w, h))
    assert np.array_equal(r.values[~mask], brute_force_distance_transform(mask)[~mask] + I_MAX)
    assert np.all(np.isfinite(r.values))


def test_empty_mask_is_degenerate():
    r = build_cost_raster(np.zeros((5, 7)), np.zeros((5, 7), bool), small_camera(7, 5))
    assert r.degenerate
    assert r.values[2, 3] == I_MAX
    assert r.values[0, 0] == pytest.approx(I_MAX + np.hypot(3, 2))


def test_shape_checks():
    with pytest.raises(ValueError):
        build_cost_raster(np.zeros((4, 4)), np.zeros((4, 5), bool), small_camera(4, 4))
    with pytest.raises(ValueError):
        build_cost_raster(np.zeros((4, 4)), np.zeros((4, 4), bool), small_camera(5, 4))


def test_bilinear_sample_and_border_penalty():
    values = np.arange(12, dtype=float).reshape(3, 4)
    r = CostRaster(0, values)
    assert r.sample(np.array([1.5, 1.0])) == pytest.approx(5.5)
    assert r.sample(np.array([0.5, 0.5])) == pytest.approx(2.5)
    # off-frame: clamped to the border cell plus the distance to it
    assert r.sample(np.array([-2.0, 0.0])) == pytest.approx(values[0, 0] + 2.0)
    assert r.sample(np.array([3.0, 5.0])) == pytest.approx(values[2, 3] + 3.0)


def test_stack_matches_per_camera_loop():
    rng = np.random.default_rng(4)
    cams = [look_at(i, [300 * i - 300, -800, 40 * i], [0, 0, 0], focal=300, width=64, height=48) for i in range(3)]
    rasters = [CostRaster(c.id, rng.random((48, 64)) * 50) for c in cams]
    stack = RasterStack(rasters, cams)
    pts = rng.normal(size=(40, 3)) * 60
    pts[0] = cams[0].center + 5 * cams[0].forward * -1  # behind the first camera
    ref = np.array([mrf2_unary(p, rasters, cams) for p in pts])
    assert np.allclose(stack.cost(pts), ref, rtol=0, atol=1e-9)
    assert stack.cost(pts)[0] >= C_MAX


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    img16 = rng.integers(0, 65536, (5, 9))
    write_pgm(tmp_path / "a.pgm", img16, 65535)
    back, maxval = read_pgm(tmp_path / "a.pgm")
    assert maxval == 65535 and np.array_equal(back, img16)
    img8 = rng.integers(0, 256, (6, 3))
    write_pgm(tmp_path / "b.pgm", img8, 255)
    back, maxval = read_pgm(tmp_path / "b.pgm")
    assert maxval == 255 and np.array_equal(back, img8)
    r = CostRaster(0, rng.random((4, 4)) * 300)
    save_raster_pgm(r, tmp_path / "c.pgm")
    assert np.array_equal(read_pgm(tmp_path / "c.pgm")[0], np.rint(r.values))
