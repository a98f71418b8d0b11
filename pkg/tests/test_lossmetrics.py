import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import least_squares
from skimage.metrics import structural_similarity

from perspfix.errors import DegenerateGeometryError, EmptyForegroundError, InvalidInputError
from perspfix.lossmetrics import (
    DiscriminatorResponse,
    EmptyRegionWarning,
    LossToggles,
    LossWeights,
    depth_loss,
    discriminator_hinge_loss,
    generator_gan_loss,
    landmark_error,
    mask_bce_loss,
    masked_psnr,
    multiscale_gradient_loss,
    overall_loss,
    photometric_loss,
    psnr,
    similarity_align,
    ssim,
    stage_config,
    to_gray,
)


def test_default_weights():
    w = LossWeights()
    assert (w.alpha1, w.alpha2, w.alpha3) == (1, 0.5, 1)
    assert (w.omega_all, w.omega_face, w.omega_missing) == (0.2, 1, 5)
    assert (w.beta, w.rho, w.lam) == (1, 20, 0.5)
    with pytest.raises(InvalidInputError):
        LossWeights(beta=-1)


class TestDepth:
    def test_identical(self, rng):
        d = rng.uniform(0.4, 1, (16, 16))
        assert depth_loss(d, d, np.ones((16, 16))) == 0.0

    def test_constant_offset_l1(self, rng):
        d = rng.uniform(0.4, 1, (16, 16))
        w = LossWeights(alpha1=1, alpha2=0, alpha3=0)
        assert depth_loss(d + 0.1, d, np.ones((16, 16)), w) == pytest.approx(0.1, abs=1e-9)

    def test_default_weights_combination(self, rng):
        d = rng.uniform(0.4, 1, (16, 16))
        p = d + rng.normal(0, 0.01, d.shape)
        m = np.ones_like(d)
        l1 = np.abs(p - d).mean()
        lt = np.abs(np.tanh(p) - np.tanh(d)).mean()
        lg = multiscale_gradient_loss(p, d, m)
        assert depth_loss(p, d, m) == pytest.approx(l1 + 0.5 * lt + lg, rel=1e-12)

    def test_outside_mask_ignored(self, rng):
        d = rng.uniform(0.4, 1, (12, 12))
        m = np.zeros_like(d); m[3:9, 3:9] = 1
        p = d.copy(); p[m == 0] = 7.0
        assert depth_loss(p, d, m) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyForegroundError):
            depth_loss(np.ones((3, 3)), np.ones((3, 3)), np.zeros((3, 3)))

    def test_gradient_constant_offset(self, rng):
        d = rng.uniform(size=(32, 32))
        assert multiscale_gradient_loss(d + 0.3, d, np.ones((32, 32))) == pytest.approx(0, abs=1e-14)

    def test_gradient_ramp(self):
        # residual = s * x: each factor k sees |dx| = s*k over k pixels -> s; |dy| = 0
        s = 0.01
        x = np.tile(np.arange(64.0), (64, 1))
        val = multiscale_gradient_loss(s * x, np.zeros((64, 64)), np.ones((64, 64)))
        assert val == pytest.approx(4 * s, rel=1e-12)


class TestPhotometric:
    def test_identical(self, rng):
        a = rng.uniform(size=(8, 8, 3))
        assert photometric_loss(a, a, {}) == 0.0

    def test_weighted_sum(self):
        a = np.full((8, 8, 3), 0.5)
        full = np.ones((8, 8))
        assert photometric_loss(a + 0.1, a, {"all": full, "face": full, "missing": full}) == pytest.approx(
            0.62, abs=1e-9)

    def test_hook_disabled_when_gamma_zero(self, rng):
        a, b = rng.uniform(size=(8, 8, 3)), rng.uniform(size=(8, 8, 3))
        base = photometric_loss(a, b, {})
        assert photometric_loss(a, b, {}, perceptual_hook=lambda *_: 99.0) == base
        w = LossWeights(gamma=1.0)
        assert photometric_loss(a, b, {}, w, perceptual_hook=lambda *_: 1.0) == pytest.approx(base + 6.2)

    def test_empty_region(self, rng):
        a, b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        with pytest.warns(EmptyRegionWarning):
            v = photometric_loss(a, b, {"face": np.zeros((8, 8)), "missing": np.zeros((8, 8))})
        assert v == pytest.approx(0.2 * np.abs(a - b).mean())


class TestAdversarial:
    def test_gan(self):
        z = np.zeros((4, 4))
        assert generator_gan_loss(DiscriminatorResponse(z, z), DiscriminatorResponse(z, z)) == 0
        f = np.ones((3, 5))
        assert generator_gan_loss(DiscriminatorResponse(np.ones((4, 4)), f),
                                  DiscriminatorResponse(z, f)) == -1.0
        fake = DiscriminatorResponse(np.full((4, 4), 0.2), np.full((3, 5), 0.8))
        real = DiscriminatorResponse(z, np.full((3, 5), 0.5))
        assert generator_gan_loss(fake, real) == pytest.approx(0.1, abs=1e-12)

    def test_hinge(self):
        assert discriminator_hinge_loss(-np.ones(9), np.ones(9)) == 0.0
        assert discriminator_hinge_loss(np.zeros(9), np.zeros(9)) == 2.0
        assert discriminator_hinge_loss(np.ones(9), -np.ones(9)) == 4.0

    def test_mask_bce(self, rng):
        t = (rng.uniform(size=(10, 10)) > 0.5).astype(float)
        assert mask_bce_loss(t, t) <= 1e-6
        assert mask_bce_loss(np.full((10, 10), 0.5), t) == pytest.approx(math.log(2), abs=1e-12)
        assert mask_bce_loss(1 - t, t) == pytest.approx(-math.log(1e-7), rel=1e-6)


class TestOverall:
    def test_zero(self):
        assert overall_loss({"depth": 0, "photo": 0, "gan": 0, "mask": 0}) == 0.0

    def test_defaults(self):
        parts = {"depth": 1.0, "photo": 2.0, "gan": 3.0, "mask": 0.5}
        assert overall_loss(parts) == 1 + 2 + 3 + 20 * 0.5

    def test_stage_toggles(self):
        parts = {"depth": 123.0, "photo": 2.0, "gan": 3.0, "mask": 0.5}
        w, t = stage_config(2)
        assert not t.depth and overall_loss(parts, w, t) == 2 + 3 + 10
        w3, _ = stage_config(3)
        assert (w3.omega_missing, w3.beta, w3.rho) == (0, 0, 10)
        with pytest.raises(InvalidInputError):
            stage_config(9)
        assert overall_loss(parts, LossWeights(), LossToggles(depth=False, gan=False)) == 12.0


class TestImageMetrics:
    def test_psnr(self, rng):
        a = rng.uniform(size=(8, 8))
        assert psnr(a, a) == math.inf
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.5)) == pytest.approx(10 * math.log10(4), abs=1e-9)
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20, abs=1e-9)
        b = rng.uniform(size=(8, 8))
        assert psnr(a, b) == psnr(b, a)

    def test_masked_psnr(self):
        a = np.zeros((4, 4)); b = a.copy(); b[0] = 1.0
        m = np.zeros((4, 4), bool); m[1:] = True
        assert masked_psnr(a, b, m) == math.inf
        with pytest.raises(EmptyForegroundError):
            masked_psnr(a, b, np.zeros((4, 4), bool))

    def test_ssim_identity(self, rng):
        a = rng.uniform(size=(24, 24))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_ssim_checkerboard(self):
        a = (np.indices((32, 32)).sum(0) % 2).astype(float)
        assert ssim(a, 1 - a) < 0

    def test_ssim_constant_luminance(self):
        ma, mb, c1 = 0.3, 0.7, 0.01 ** 2
        want = (2 * ma * mb + c1) / (ma ** 2 + mb ** 2 + c1)
        assert ssim(np.full((20, 20), ma), np.full((20, 20), mb)) == pytest.approx(want, abs=1e-6)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(11, 40), st.integers(11, 40), st.integers(0, 2**31 - 1))
    def test_ssim_matches_skimage(self, h, w, seed):
        r = np.random.default_rng(seed)
        a = r.uniform(size=(h, w))
        b = np.clip(a + r.normal(0, 0.1, (h, w)), 0, 1)
        ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
                                    data_range=1.0)
        assert ssim(a, b) == pytest.approx(ref, abs=1e-6)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_ssim_too_small(self):
        with pytest.raises(InvalidInputError):
            ssim(np.zeros((10, 30)), np.zeros((10, 30)))

    def test_luma(self):
        px = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]])
        np.testing.assert_allclose(to_gray(px), [[0.299, 0.587, 0.114]])


def _similarity(pts, s, ang, t):
    c, si = math.cos(ang), math.sin(ang)
    return s * pts @ np.array([[c, -si], [si, c]]).T + t


class TestLandmarks:
    pts = np.random.default_rng(5).uniform(50, 450, (10, 2))

    def test_identical(self):
        assert landmark_error(self.pts, self.pts) == pytest.approx(0, abs=1e-12)

    def test_similarity_removed(self):
        moved = _similarity(self.pts, 1.3, math.radians(20), (17.0, -40.0))
        assert landmark_error(moved, self.pts) < 1e-9
        assert landmark_error(self.pts, moved) < 1e-9

    @given(st.floats(0.2, 5), st.floats(-math.pi, math.pi), st.floats(-300, 300), st.floats(-300, 300))
    def test_common_similarity_invariant(self, s, ang, tx, ty):
        r = np.random.default_rng(0)
        ref = self.pts
        pred = ref + r.normal(0, 3, ref.shape)
        base = landmark_error(pred, ref)
        moved = landmark_error(_similarity(pred, s, ang, (tx, ty)), ref)
        assert moved == pytest.approx(base, abs=1e-9)

    def test_perturbed_matches_least_squares(self):
        pred = self.pts.copy()
        pred[3] += (3.0, 4.0)

        def resid(p):
            return (_similarity(pred, p[0], p[1], p[2:]) - self.pts).ravel()

        sol = least_squares(resid, x0=[1, 0, 0, 0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
        ref_err = np.linalg.norm(resid(sol.x).reshape(-1, 2), axis=1).mean() / 512
        assert landmark_error(pred, self.pts) == pytest.approx(ref_err, abs=1e-9)
        assert landmark_error(pred, self.pts) <= 5 / 512

    def test_reflection_not_allowed(self):
        flipped = self.pts * np.array([-1.0, 1.0])
        _, rot, _ = similarity_align(flipped, self.pts)
        assert np.linalg.det(rot) == pytest.approx(1.0)

    def test_degenerate(self):
        with pytest.raises(DegenerateGeometryError):
            landmark_error(np.array([[0, 0], [1, 1], [2, 2.0]]), np.array([[0, 0], [1, 0], [0, 1.0]]))
        with pytest.raises(DegenerateGeometryError):
            landmark_error(self.pts[:2], self.pts[:2])
