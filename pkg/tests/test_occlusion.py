import dataclasses

import numpy as np
import pytest

from core.cameras import CloseupMode, closeup_camera
from core.errors import GridMismatch
from core.occlusion import dilate_depth, kernel_from_density, occlusion_mask, suppress
from core.synthetic import Checker, LeakLabel, Plane, SceneSpec, label_leaks
from core.warping import WarpResult, forward_warp, hierarchical_warp


def _window_min(depth, valid, k):
    h, w = depth.shape
    r = k // 2
    out = np.zeros_like(depth)
    out_valid = np.zeros_like(valid)
    for i in range(h):
        for j in range(w):
            window = depth[max(0, i - r):i + r + 1, max(0, j - r):j + r + 1]
            inside = valid[max(0, i - r):i + r + 1, max(0, j - r):j + r + 1]
            if inside.any():
                out[i, j] = window[inside].min()
                out_valid[i, j] = True
    return out, out_valid


def _leak_scene(seed=5):
    """Foreground slab ending at x = -0.1975 (between two source pixel rays) in front of a background wall."""
    slab = Plane(center=(-0.6975, 0.0, 1.0), normal=(0.0, 0.0, -1.0), half_extent=(0.5, 1.0),
                 texture=Checker(period=0.1, color_a=(0.9, 0.3, 0.2), color_b=(0.6, 0.1, 0.1)))
    wall = Plane(center=(0.0, 0.0, 3.0), normal=(0.0, 0.0, -1.0),
                 texture=Checker(period=0.3, color_a=(0.2, 0.7, 0.3), color_b=(0.2, 0.3, 0.8)))
    return SceneSpec(primitives=(slab, wall), seed=seed)


def _leak_offset(seed):
    """Target x offset whose background splats land 1.25-1.75 columns off the foreground splat lattice."""
    rng = np.random.default_rng(seed)
    # depth 1 vs 3 at zoomed focal 160: 320/3 px of relative shift per unit offset
    parallax = 4 * int(rng.integers(8, 10)) - 1.5 + rng.uniform(-0.25, 0.25)
    return -parallax * 3.0 / 320.0


def _leak_setup(make_camera, render, seed):
    scene = _leak_scene(seed)
    source = make_camera(width=64, height=48, f=40.0)
    target = closeup_camera(make_camera(width=64, height=48, f=40.0, center=(_leak_offset(seed), 0.0, 0.0)),
                            CloseupMode.ZOOM, 4.0)
    return render(source, scene=scene), target, render(target, scene=scene)


def _sparse_foreground_warp():
    """9x9 warp: full-res foreground every third pixel, one full-res background pixel, low-res fill elsewhere."""
    warp = WarpResult.empty((9, 9))
    rows, cols = np.mgrid[0:9, 0:9]
    foreground = (rows % 3 == 0) & (cols % 3 == 0)
    warp.valid[:] = True
    warp.reliable_origin[:] = True
    warp.depth[:] = np.where(foreground, 1.0, 5.0)
    warp.from_low_res[:] = ~foreground
    warp.from_low_res[1, 1] = False
    return warp


class TestKernelFromDensity:
    @pytest.mark.parametrize("density,kernel", [
        (1.0, 1), (0.9, 3), (0.5, 3), (0.25, 3), (0.0625, 5), (0.03, 7), (0.015, 9), (0.001, 9), (0.0, 9),
    ])
    def test_table(self, density, kernel):
        assert kernel_from_density(density) == kernel

    def test_kernel_grows_as_density_drops(self):
        densities = np.linspace(1.0, 0.0, 101)
        kernels = [kernel_from_density(d) for d in densities]
        assert kernels == sorted(kernels)
        assert all(k % 2 == 1 for k in kernels)

    def test_rejects_density_outside_unit_interval(self):
        with pytest.raises(ValueError):
            kernel_from_density(1.5)


class TestDilateDepth:
    def test_kernel_one_is_identity(self):
        rng = np.random.default_rng(0)
        valid = rng.random((6, 7)) < 0.5
        depth = np.where(valid, rng.uniform(1, 3, (6, 7)), 0.0)
        dilated, dilated_valid = dilate_depth(depth, valid, 1)
        assert np.array_equal(dilated, depth)
        assert np.array_equal(dilated_valid, valid)

    def test_single_pixel_spreads_to_a_block(self):
        depth = np.zeros((9, 9))
        valid = np.zeros((9, 9), dtype=bool)
        depth[4, 4], valid[4, 4] = 2.0, True
        dilated, dilated_valid = dilate_depth(depth, valid, 5)
        assert dilated_valid.sum() == 25
        assert dilated_valid[2:7, 2:7].all()
        assert (dilated[2:7, 2:7] == 2.0).all()

    @pytest.mark.parametrize("k", [3, 5, 9])
    def test_matches_brute_force_window_minimum(self, k):
        rng = np.random.default_rng(k)
        valid = rng.random((13, 11)) < 0.2
        depth = np.where(valid, rng.uniform(0.5, 4.0, (13, 11)), 0.0)
        dilated, dilated_valid = dilate_depth(depth, valid, k)
        expected, expected_valid = _window_min(depth, valid, k)
        assert np.array_equal(dilated_valid, expected_valid)
        assert np.array_equal(dilated, expected)

    def test_larger_kernel_never_raises_depth(self):
        rng = np.random.default_rng(3)
        valid = rng.random((20, 20)) < 0.1
        depth = np.where(valid, rng.uniform(0.5, 4.0, (20, 20)), 0.0)
        small, small_valid = dilate_depth(depth, valid, 3)
        large, large_valid = dilate_depth(depth, valid, 7)
        assert not (small_valid & ~large_valid).any()
        assert (large[small_valid] <= small[small_valid]).all()

    def test_rejects_even_kernel(self):
        with pytest.raises(ValueError):
            dilate_depth(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool), 4)


class TestOcclusionMask:
    def test_equal_depths_keep_everything(self):
        depth = np.full((4, 4), 2.0)
        valid = np.ones((4, 4), dtype=bool)
        assert occlusion_mask(depth, valid, depth, valid, 0.2).keep.all()

    def test_difference_above_threshold_is_suppressed(self):
        mask = occlusion_mask(np.array([[2.3]]), np.array([[True]]), np.array([[2.0]]), np.array([[True]]), 0.2)
        assert not mask.keep[0, 0]

    def test_difference_equal_to_threshold_is_kept(self):
        mask = occlusion_mask(np.array([[1.25]]), np.array([[True]]), np.array([[1.0]]), np.array([[True]]), 0.25)
        assert mask.keep[0, 0]

    def test_invalid_pixels_are_kept(self):
        mask = occlusion_mask(np.array([[9.0, 9.0]]), np.array([[False, True]]), np.array([[1.0, 1.0]]),
                              np.array([[True, False]]), 0.2)
        assert mask.keep.all()

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            occlusion_mask(np.zeros((2, 2)), np.ones((2, 2), dtype=bool), np.zeros((3, 2)),
                           np.ones((3, 2), dtype=bool))


class TestSuppress:
    def test_dense_identity_warp_is_untouched(self, make_camera, render):
        view = render(make_camera())
        warp = forward_warp(view, view.camera)
        result, mask = suppress(warp, 0.2)
        assert mask.keep.all()
        assert result is warp

    @pytest.mark.parametrize("seed", range(10))
    def test_background_leaks_are_removed(self, make_camera, render, seed):
        source, target, truth = _leak_setup(make_camera, render, seed)
        warp = forward_warp(source, target)

        labels = label_leaks(warp, truth)
        leaks = labels == LeakLabel.LEAK
        foreground = (labels == LeakLabel.VISIBLE) & (truth.depth < 2.0) & (warp.depth < 2.0)
        assert leaks.sum() > 50 and foreground.sum() > 50

        result, mask = suppress(warp, 0.2)
        assert (~mask.keep)[leaks].mean() >= 0.95
        assert (~mask.keep)[foreground].mean() <= 0.01
        assert not result.valid[leaks].any()
        assert result.suppressed[leaks].all()

    @pytest.mark.parametrize("seed", range(10))
    def test_hierarchical_warp_leaks_are_removed(self, make_camera, render, seed):
        source, target, truth = _leak_setup(make_camera, render, seed)
        warp = hierarchical_warp(source, target)
        assert warp.from_low_res.any()

        labels = label_leaks(warp, truth)
        leaks = (labels == LeakLabel.LEAK) & warp.high_res
        foreground = (labels == LeakLabel.VISIBLE) & warp.high_res & (truth.depth < 2.0) & (warp.depth < 2.0)
        assert leaks.sum() > 30 and foreground.sum() > 50

        result, mask = suppress(warp, 0.2)
        assert (~mask.keep)[leaks].mean() >= 0.95
        assert mask.keep[foreground].all()
        assert mask.keep[warp.from_low_res].all()
        assert np.array_equal(result.from_low_res, warp.from_low_res)

    def test_low_res_fill_does_not_change_the_decision(self, make_camera, render):
        source, target, _ = _leak_setup(make_camera, render, 0)
        warp = hierarchical_warp(source, target)
        bare = dataclasses.replace(warp, valid=warp.high_res, from_low_res=np.zeros(warp.shape, dtype=bool))
        _, mask = suppress(warp, 0.2)
        _, bare_mask = suppress(bare, 0.2)
        assert np.array_equal(mask.keep, bare_mask.keep)

    def test_unreliable_origin_is_never_suppressed(self):
        warp = _sparse_foreground_warp()
        unreliable = dataclasses.replace(warp, reliable_origin=np.zeros((9, 9), dtype=bool))
        result, mask = suppress(unreliable, 0.2)
        assert mask.keep.all()
        assert np.array_equal(result.valid, unreliable.valid)

    def test_only_full_resolution_pixels_are_suppressed(self):
        warp = _sparse_foreground_warp()
        result, mask = suppress(warp, 0.2)
        assert not mask.keep[1, 1]
        assert mask.keep[warp.from_low_res].all()
        assert result.valid.sum() == 80

    def test_is_idempotent(self):
        warp = _sparse_foreground_warp()
        once, _ = suppress(warp, 0.2)
        twice, mask = suppress(once, 0.2)
        assert mask.keep.all()
        assert np.array_equal(twice.valid, once.valid)
        assert np.array_equal(twice.depth, once.depth)
        assert np.array_equal(twice.suppressed, once.suppressed)

    def test_window_minimum_is_always_kept(self):
        rng = np.random.default_rng(8)
        warp = WarpResult.empty((16, 16))
        warp.valid[:] = rng.random((16, 16)) < 0.3
        warp.depth[:] = np.where(warp.valid, rng.uniform(1.0, 4.0, (16, 16)), 0.0)
        warp.reliable_origin[:] = warp.valid
        _, mask = suppress(warp, 0.2)
        k = kernel_from_density(warp.density)
        dilated, _ = dilate_depth(warp.depth, warp.valid, k)
        minima = warp.valid & (warp.depth == dilated)
        assert mask.keep[minima].all()
