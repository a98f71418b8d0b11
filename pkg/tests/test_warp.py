import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perspfix.camgeom import CameraIntrinsics, RigidTransform, compose_camera_move, scaled_focal, select_anchor_pixel
from perspfix.errors import InvalidInputError
from perspfix.warp import AttributedPointCloud, DepthMap, build_point_cloud, splat, warp_frame

K = CameraIntrinsics(50.0, 9.5, 7.5)
W, H = 20, 16
I = RigidTransform.identity()


def cloud_from(points, attrs):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    attrs = np.asarray(attrs, dtype=np.float64)
    attrs = attrs.reshape(len(points), -1) if attrs.ndim < 2 else attrs
    src = np.stack([np.arange(len(points)), np.zeros(len(points))], axis=1).astype(np.float64)
    return AttributedPointCloud(points, attrs, src)


def brute_splat(points, attrs, k, w, h, radius, z_eps):
    """Pixel-by-pixel reference: for each pixel, visit every point."""
    half = 2 * radius

    def tent(d):
        return max(0.0, 1.0 - abs(d) / half)

    proj = []
    for p in points:
        if p[2] <= 0:
            proj.append(None)
            continue
        u, v = k.f * p[0] / p[2] + k.cx, k.f * p[1] / p[2] + k.cy
        # full-footprint normalisation: integer offsets the tent touches
        xs = range(math.floor(u - half) + 1, math.floor(u - half) + 1 + math.ceil(2 * half))
        ys = range(math.floor(v - half) + 1, math.floor(v - half) + 1 + math.ceil(2 * half))
        sx = sum(tent(u - x) for x in xs)
        sy = sum(tent(v - y) for y in ys)
        proj.append((u, v, p[2], sx, sy))
    c = attrs.shape[1]
    img = np.zeros((h, w, c))
    wsum = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            contrib = []
            for i, pr in enumerate(proj):
                if pr is None:
                    continue
                u, v, z, sx, sy = pr
                wgt = tent(u - x) * tent(v - y)
                if wgt > 0:
                    contrib.append((z, wgt / (sx * sy), attrs[i]))
            if not contrib:
                continue
            zmin = min(z for z, _, _ in contrib)
            kept = [(wt, a) for z, wt, a in contrib if z <= zmin + z_eps]
            wsum[y, x] = sum(wt for wt, _ in kept)
            img[y, x] = sum(wt * a for wt, a in kept) / wsum[y, x]
    return img, np.minimum(1.0, wsum)


class TestBuildPointCloud:
    def test_empty_mask(self):
        c = build_point_cloud(np.ones((4, 4, 3)), np.ones((4, 4)), np.zeros((4, 4)), K)
        assert len(c) == 0

    def test_single_principal_point(self):
        k = CameraIntrinsics(10.0, 2.0, 1.0)
        m = np.zeros((3, 5))
        m[1, 2] = 1
        c = build_point_cloud(np.ones((3, 5, 3)), np.ones((3, 5)), m, k)
        np.testing.assert_array_equal(c.points, [[0, 0, 1]])
        np.testing.assert_array_equal(c.source_pixel, [[2, 1]])

    def test_2x2_depths(self):
        d = np.array([[0.5, 0.6], [0.7, 0.8]])
        c = build_point_cloud(np.arange(12.0).reshape(2, 2, 3), d, np.ones((2, 2)), K)
        assert sorted(c.points[:, 2]) == [0.5, 0.6, 0.7, 0.8]
        for (u, v), a in zip(c.source_pixel.astype(int), c.attributes):
            np.testing.assert_array_equal(a, np.arange(12.0).reshape(2, 2, 3)[v, u])

    def test_invalid_depth_skipped(self):
        d = np.array([[0.5, 0.0], [np.nan, 0.8]])
        c = build_point_cloud(np.ones((2, 2)), d, np.ones((2, 2)), K)
        assert len(c) == 2

    def test_mismatch(self):
        with pytest.raises(InvalidInputError):
            build_point_cloud(np.ones((3, 3)), np.ones((3, 4)), np.ones((3, 4)), K)


class TestSplat:
    def test_integer_point(self):
        k = CameraIntrinsics(50.0, 9.0, 7.0)
        b = splat(cloud_from([(0, 0, 1.0)], [[0.2, 0.4, 0.6]]), k, I, (W, H))
        assert b.coverage[7, 9] == 1.0
        np.testing.assert_array_equal(b.image[7, 9], [0.2, 0.4, 0.6])
        assert b.coverage.sum() == 1.0

    def test_occlusion(self):
        k = CameraIntrinsics(50.0, 9.0, 7.0)
        b = splat(cloud_from([(0, 0, 2.0), (0, 0, 1.0)], [[1.0], [0.0]]), k, I, (W, H), z_eps=0.01)
        assert b.image[7, 9, 0] == 0.0
        assert b.zbuffer[7, 9] == 1.0

    def test_empty_cloud(self):
        b = splat(cloud_from(np.zeros((0, 3)), np.zeros((0, 2))), K, I, (W, H))
        assert b.image.shape == (H, W, 2)
        assert not b.coverage.any()

    def test_behind_camera_counted(self):
        b = splat(cloud_from([(0, 0, -1.0), (0, 0, 1.0)], [1.0, 1.0]), K, I, (W, H))
        assert b.stats.behind_camera == 1

    def test_radius_validation(self):
        with pytest.raises(InvalidInputError):
            splat(cloud_from([(0, 0, 1.0)], [1.0]), K, I, (W, H), radius=0.25)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 25), st.sampled_from([0.5, 0.75, 1.0]), st.integers(0, 2**31 - 1))
    def test_matches_brute_force(self, n, radius, seed):
        r = np.random.default_rng(seed)
        z = r.choice([0.8, 0.802, 1.0, 1.3], n)  # shared depths exercise the tolerance band
        u = r.uniform(-2, W + 1, n)
        v = r.uniform(-2, H + 1, n)
        pts = np.stack([(u - K.cx) * z / K.f, (v - K.cy) * z / K.f, z], axis=1)
        attrs = r.uniform(0, 1, (n, 2))
        b = splat(cloud_from(pts, attrs), K, I, (W, H), radius=radius, z_eps=0.005)
        img, cov = brute_splat(pts, attrs, K, W, H, radius, 0.005)
        np.testing.assert_allclose(b.coverage, cov, atol=1e-12)
        np.testing.assert_allclose(b.image, img, atol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_permutation_bit_identical(self, seed):
        r = np.random.default_rng(seed)
        n = 60
        pts = np.stack([r.uniform(-0.2, 0.2, n), r.uniform(-0.15, 0.15, n), r.uniform(0.9, 1.1, n)], axis=1)
        attrs = r.uniform(0, 1, (n, 3))
        src = r.permutation(n)[:, None] * np.ones((1, 2))
        perm = r.permutation(n)
        a = splat(AttributedPointCloud(pts, attrs, src), K, I, (W, H), radius=0.75)
        b = splat(AttributedPointCloud(pts[perm], attrs[perm], src[perm]), K, I, (W, H), radius=0.75)
        assert np.array_equal(a.image, b.image) and np.array_equal(a.coverage, b.coverage)

    def test_coverage_invariants(self, rng):
        pts = np.stack([rng.uniform(-0.3, 0.3, 200), rng.uniform(-0.2, 0.2, 200), rng.uniform(0.5, 2, 200)], axis=1)
        b = splat(cloud_from(pts, rng.uniform(0, 1, (200, 3))), K, I, (W, H), radius=1.0)
        assert b.coverage.min() >= 0 and b.coverage.max() <= 1
        assert not b.image[b.coverage == 0].any()
        assert not b.zbuffer[b.coverage == 0].any()

    def test_two_plane_occlusion(self):
        # a near plane covering the centre must hide a far plane everywhere it projects
        k = CameraIntrinsics(20.0, 9.5, 7.5)
        h, w = 16, 20
        vs, us = np.mgrid[0:h, 0:w].astype(float)
        far = np.stack([(us - k.cx) * 2 / k.f, (vs - k.cy) * 2 / k.f, np.full_like(us, 2.0)], -1).reshape(-1, 3)
        sel = (us >= 5) & (us < 15) & (vs >= 4) & (vs < 12)
        near = np.stack([(us - k.cx) / k.f, (vs - k.cy) / k.f, np.ones_like(us)], -1)[sel]
        pts = np.concatenate([far, near])
        attrs = np.concatenate([np.ones(len(far)), np.zeros(len(near))])[:, None]
        b = splat(cloud_from(pts, attrs), k, I, (w, h))
        assert not b.image[sel.reshape(h, w), 0].any()

    def test_identity_warp_exact(self, rng):
        k = CameraIntrinsics(30.0, 9.0, 7.0)
        img = rng.uniform(0, 1, (H, W, 3))
        d = rng.uniform(0.5, 1.5, (H, W))
        c = build_point_cloud(img, d, np.ones((H, W)), k)
        b = splat(c, k, I, (W, H))
        np.testing.assert_array_equal(b.image, img)
        np.testing.assert_array_equal(b.coverage, 1.0)

    def test_zoom_compensation_plane(self, rng):
        h, w = 60, 80
        k1 = CameraIntrinsics(70.0, (w - 1) / 2, (h - 1) / 2)
        vs, us = np.mgrid[0:h, 0:w]
        img = 0.5 + 0.4 * np.sin(us / 3.0)[..., None] * np.cos(vs / 4.0)[..., None] * np.ones(3)
        k2 = k1.with_focal(scaled_focal(k1.f, 0.6, 1.2))
        b = splat(build_point_cloud(img, np.full((h, w), 0.6), np.ones((h, w)), k1), k2,
                  RigidTransform.translation((0, 0, 1.2)), (w, h))
        inner = (slice(2, -2), slice(2, -2))
        assert np.abs(b.image[inner] - img[inner]).mean() < 1e-3
        assert b.coverage[inner].min() > 0.999


class TestWarpFrame:
    def test_identity_move(self, pair0):
        c = pair0.close
        wr = warp_frame(c.rgb, None, c.mask, c.depth, c.intrinsics, c.intrinsics, I)
        fg = c.mask > 0.5
        assert np.abs(wr.rgb.image[fg] - c.rgb[fg]).max() < 1e-3
        assert wr.features is None

    def test_features_share_coverage(self, pair0, rng):
        c = pair0.close
        feats = rng.uniform(0, 1, c.rgb.shape[:2] + (5,))
        m = RigidTransform.translation((0, 0, pair0.t_z))
        k2 = pair0.far.intrinsics
        wr = warp_frame(c.rgb, feats, c.mask, c.depth, c.intrinsics, k2, m)
        wr0 = warp_frame(c.rgb, None, c.mask, c.depth, c.intrinsics, k2, m)
        assert wr.features.image.shape[2] == 5
        assert np.array_equal(wr.features.coverage, wr.mask)
        assert np.array_equal(wr.rgb.image, wr0.rgb.image) and np.array_equal(wr.mask, wr0.mask)

    def test_disocclusion_holes(self, pair0):
        c = pair0.close
        _, anchor = select_anchor_pixel(c.mask, c.depth, c.intrinsics)
        m = compose_camera_move(pair0.t_z, 0.1, anchor)
        wr = warp_frame(c.rgb, None, c.mask, c.depth, c.intrinsics, pair0.far.intrinsics, m)
        from scipy import ndimage
        cov = wr.mask >= 0.5
        holes = ndimage.binary_fill_holes(cov) & ~cov
        assert holes.sum() + np.count_nonzero((pair0.far.mask > 0.5) & ~cov) > 0


def test_depthmap_validation():
    # non-positive values can never be flagged valid
    d = DepthMap(np.array([[1.0, -1.0]]), np.array([[True, True]]))
    np.testing.assert_array_equal(d.valid, [[True, False]])
    with pytest.raises(InvalidInputError):
        DepthMap(np.ones((2, 2)), np.ones((2, 3), dtype=bool))
    d = DepthMap.from_array([[1.0, 0.0, np.inf]])
    np.testing.assert_array_equal(d.valid, [[True, False, False]])
