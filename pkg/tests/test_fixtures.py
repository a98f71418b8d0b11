import math

import numpy as np
import pytest

from perspfix import _accel
from perspfix.camgeom import CameraIntrinsics, RigidTransform, compose_camera_move
from perspfix.errors import FrustumError
from perspfix.fixtures import (
    LABEL_HEAD,
    LABEL_NOSE,
    Ellipsoid,
    ProceduralScene,
    SceneParams,
    anchor_for,
    capture_pair,
    close_intrinsics,
    gen_scene,
    render,
    synthesize_multiview_target,
    warp_consistency,
)

SIZE = (160, 120)


def ray_hit_depth(scene, k, pose, u, v):
    """Independent per-pixel ray cast against the ellipsoid definitions (closed-form quadratic)."""
    r_cw = pose.r.T
    origin = -r_cw @ pose.t
    d = r_cw @ np.array([(u - k.cx) / k.f, (v - k.cy) / k.f, 1.0])
    best = math.inf
    for e in scene.primitives:
        rot, ax = np.asarray(e.rotation), np.asarray(e.axes)
        # points x = c + R diag(ax) s with |s| = 1
        lo = (rot.T @ (origin - np.asarray(e.center))) / ax
        ld = (rot.T @ d) / ax
        a, b, c = ld @ ld, 2 * lo @ ld, lo @ lo - 1
        disc = b * b - 4 * a * c
        if disc < 0:
            continue
        for t in sorted(((-b - math.sqrt(disc)) / (2 * a), (-b + math.sqrt(disc)) / (2 * a))):
            if t > 0:
                best = min(best, t)
                break
    if math.isinf(best) and scene.background_z is not None and d[2] > 0:
        best = (scene.background_z - origin[2]) / d[2]
    return best


class TestScene:
    def test_deterministic(self):
        a, b = gen_scene(11), gen_scene(11)
        assert a.light == b.light and a.head.center == b.head.center
        np.testing.assert_array_equal(a.head.rotation, b.head.rotation)
        assert gen_scene(12).head.center != a.head.center

    def test_yaw_coverage(self):
        yaws = np.degrees([gen_scene(s).yaw for s in range(100)])
        assert yaws.min() >= -30 and yaws.max() <= 30
        hist, _ = np.histogram(yaws, bins=6, range=(-30, 30))
        assert np.all(hist > 0)

    def test_head_depth_range(self):
        for s in range(50):
            assert 0.4 <= gen_scene(s).head.center[2] <= 0.8


class TestRender:
    sphere = ProceduralScene((Ellipsoid((0.0, 0.0, 0.6), (0.1, 0.1, 0.1)),), background_z=None)
    k = CameraIntrinsics(800.0, 199.5, 199.5)

    def test_sphere_depth_on_axis(self):
        k = CameraIntrinsics(800.0, 200.0, 200.0)
        out = render(self.sphere, k, RigidTransform.identity(), (401, 401))
        assert out.depth.values[200, 200] == pytest.approx(0.5, abs=1e-12)

    def test_sphere_silhouette_radius(self):
        out = render(self.sphere, self.k, RigidTransform.identity(), (400, 400))
        r_px = 800 * 0.1 / math.sqrt(0.6 ** 2 - 0.1 ** 2)
        assert r_px == pytest.approx(135.2, abs=0.05)
        area_radius = math.sqrt(out.mask.sum() / math.pi)
        assert area_radius == pytest.approx(r_px, abs=0.5)
        row = out.mask[200]
        assert (row.sum()) / 2 == pytest.approx(r_px, abs=1.0)

    def test_empty_scene(self):
        out = render(ProceduralScene((), background_z=2.0), self.k, RigidTransform.identity(), (40, 30))
        assert not out.mask.any()
        np.testing.assert_allclose(out.depth.values, 2.0)

    @pytest.mark.parametrize("seed", [0, 7])
    def test_depth_exact(self, seed):
        scene = gen_scene(seed)
        k = close_intrinsics(*SIZE)
        pose = RigidTransform(np.eye(3), (0.02, -0.01, 0.3))
        out = render(scene, k, pose, SIZE)
        r = np.random.default_rng(seed)
        for _ in range(200):
            u, v = int(r.integers(0, SIZE[0])), int(r.integers(0, SIZE[1]))
            want = ray_hit_depth(scene, k, pose, u, v)
            assert out.depth.values[v, u] == pytest.approx(want, abs=1e-9)

    def test_backends_identical(self):
        scene = gen_scene(4)
        k = close_intrinsics(*SIZE)
        prev = _accel.set_backend("numpy")
        try:
            a = render(scene, k, RigidTransform.identity(), SIZE)
        finally:
            _accel.set_backend(prev)
        b = render(scene, k, RigidTransform.identity(), SIZE)
        assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.depth.values, b.depth.values)


class TestCapturePair:
    def test_far_geometry(self, pair0):
        assert pair0.far.intrinsics.f == 3 * pair0.close.intrinsics.f
        fg = pair0.far.mask > 0.5
        assert np.median(pair0.far.depth.values[fg]) == pytest.approx(3 * pair0.z_ref, rel=0.05)
        assert pair0.t_z == pytest.approx(2 * pair0.z_ref)

    def test_far_depth_tripled_on_axis(self):
        scene = ProceduralScene((Ellipsoid((0.0, 0.0, 0.7), (0.1, 0.1, 0.1)),), background_z=None)
        p = capture_pair(scene, close_intrinsics(*SIZE), SIZE, rear=False)
        # median depth of a sphere is not its front point, but the rig keeps it exactly at 3x
        assert p.z_ref + p.t_z == pytest.approx(3 * p.z_ref)

    def test_face_scale_preserved(self, pair0):
        def height(c):
            rows = np.nonzero(np.isin(c.labels, (LABEL_HEAD, LABEL_NOSE)).any(axis=1))[0]
            return rows[-1] - rows[0] + 1

        assert 0.95 <= height(pair0.close) / height(pair0.far) <= 1.05

    def test_frustum_error(self):
        scene = ProceduralScene((Ellipsoid((0.35, 0.0, 0.5), (0.08, 0.1, 0.09)),))
        with pytest.raises(FrustumError):
            capture_pair(scene, close_intrinsics(*SIZE), SIZE)

    def test_rear_rig(self, pair0):
        assert set(pair0.rear_views) == {"centre", "left", "right", "top"}
        eye = pair0.rear_views["left"].pose.inverse().apply((0, 0, 0))
        np.testing.assert_allclose(eye, (-0.25, 0, -pair0.t_z), atol=1e-12)


class TestWarpOracle:
    @pytest.mark.parametrize("seed", range(4))
    def test_consistency(self, seed):
        p = capture_pair(gen_scene(seed), close_intrinsics(*SIZE), SIZE, rear=False)
        chk = warp_consistency(p)
        assert chk.max_reproj_err_px < 0.5
        assert chk.masked_psnr_db > 30
        assert chk.n_pixels > 500


class TestMultiview:
    def test_identity_at_zero(self, pair0):
        c = pair0.rear_views["centre"]
        t = synthesize_multiview_target(pair0.rear_views, 0.0, pair0.t_z, c.intrinsics, anchor_for(pair0),
                                        views=("centre",))
        fg = c.mask > 0.5
        np.testing.assert_array_equal(t.mask, fg)
        np.testing.assert_array_equal(t.rgb[fg], c.rgb[fg])

    def test_fill_reduces_holes(self, left_pair):
        k2 = left_pair.far.intrinsics
        anchor = anchor_for(left_pair)
        centre = synthesize_multiview_target(left_pair.rear_views, -0.1, left_pair.t_z, k2, anchor,
                                             views=("centre",))
        full = synthesize_multiview_target(left_pair.rear_views, -0.1, left_pair.t_z, k2, anchor)
        assert full.order == ("centre", "left", "right", "top")
        assert full.residual_holes.sum() < centre.residual_holes.sum()

    @pytest.mark.parametrize("t_x", [-0.04, 0.0, 0.03])
    def test_mask_matches_direct_render(self, pair0, t_x):
        k2 = pair0.far.intrinsics
        anchor = anchor_for(pair0)
        t = synthesize_multiview_target(pair0.rear_views, t_x, pair0.t_z, k2, anchor)
        direct = render(pair0.scene, k2, compose_camera_move(pair0.t_z, t_x, anchor), SIZE)
        mismatch = np.count_nonzero(t.mask != (direct.mask > 0.5)) / t.mask.size
        assert mismatch < 0.01
