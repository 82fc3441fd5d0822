import numpy as np
import pytest

from flashlive.extraction import (
    FaceRect,
    SyntheticDetector,
    SyntheticTracker,
    decompose_transform,
    extract_faces,
    fit_transform,
    regularize,
    vibration_intensity,
)
from flashlive.scenes import landmark_template


def make_truth(n, w=20.0, h=24.0, drift=0.0, rng=None):
    rects = []
    x, y = 22.0, 20.0
    for i in range(n):
        if drift and rng is not None:
            x += rng.normal(0, drift)
            y += rng.normal(0, drift)
        rects.append(FaceRect(x, y, w, h, 1.0))
    return rects


class TestExtractFaces:
    def test_confident_tracker_never_detects(self):
        rng = np.random.default_rng(0)
        truth = make_truth(30)
        tracker = SyntheticTracker(truth, rng=rng, confidence_floor=0.9)
        detector = SyntheticDetector(truth, rng=rng)
        rects = extract_faces(30, tracker, detector)
        assert detector.calls == 0
        assert all(r is not None for r in rects)

    def test_low_confidence_triggers_detector(self):
        rng = np.random.default_rng(1)
        truth = make_truth(10)

        calls = []

        class FlakyTracker(SyntheticTracker):
            def __call__(self, idx):
                rect, conf = super().__call__(idx)
                if idx == 7:
                    return rect, 0.5
                return rect, conf

        tracker = FlakyTracker(truth, rng=rng)
        detector = SyntheticDetector(truth, rng=rng)

        def counting_detector(idx):
            calls.append(idx)
            return detector(idx)

        extract_faces(10, tracker, counting_detector)
        assert calls == [7]

    def test_empty_track_and_detector_failure_marks_unusable(self):
        rng = np.random.default_rng(2)
        truth = make_truth(5)

        def tracker(idx):
            return (None, 0.0)

        def detector(idx):
            return None if idx == 3 else truth[idx]

        rects = extract_faces(5, tracker, detector)
        assert rects[3] is None
        assert all(r is not None for i, r in enumerate(rects) if i != 3)

    def test_tracker_noise_bounds_center_error(self):
        rng = np.random.default_rng(3)
        truth = make_truth(400)
        sigma = 0.8
        tracker = SyntheticTracker(truth, noise=sigma, rng=rng)
        detector = SyntheticDetector(truth, rng=rng)
        rects = extract_faces(400, tracker, detector)
        errs = [
            np.hypot(r.center[0] - t.center[0], r.center[1] - t.center[1])
            for r, t in zip(rects, truth)
        ]
        assert np.mean(errs) <= sigma * 1.3  # mean |N(0,s)| pair ~ 1.25 s

    def test_empty_video_rejected(self):
        with pytest.raises(ValueError):
            extract_faces(0, lambda i: (None, 0), lambda i: None)


class TestFitTransform:
    def test_identity(self):
        lm = landmark_template(64, 64)
        t = fit_transform(lm, lm)
        np.testing.assert_allclose(t.matrix, np.eye(3), atol=1e-9)
        assert t.residual < 1e-9

    def test_recovers_similarity(self):
        lm = landmark_template(64, 64)
        angle = np.deg2rad(10)
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        target = (1.3 * rot @ lm.T).T + np.array([5.0, -3.0])
        t = fit_transform(lm, target)
        assert t.residual < 1e-9
        np.testing.assert_allclose(t.apply(lm), target, atol=1e-8)
        np.testing.assert_allclose(t.matrix[:2, :2], 1.3 * rot, atol=1e-9)
        np.testing.assert_allclose(t.matrix[2], (0, 0, 1), atol=0)

    def test_noise_shows_in_residual(self):
        rng = np.random.default_rng(11)
        lm = landmark_template(64, 64)
        sigma = 0.5
        residuals = []
        for _ in range(50):
            noisy = lm + rng.normal(0, sigma, size=lm.shape)
            residuals.append(fit_transform(noisy, lm).residual)
        # per-point rms ~ sigma (alignment absorbs only 4 of 212 dof)
        assert np.mean(residuals) == pytest.approx(sigma * np.sqrt(2), rel=0.15)
        assert min(residuals) > 0

    def test_degenerate_landmarks(self):
        pts = np.zeros((106, 2))
        with pytest.raises(ValueError, match="degenerate"):
            fit_transform(pts, pts)


class TestRegularize:
    def test_identity_center_crop(self):
        rng = np.random.default_rng(4)
        src = rng.uniform(0, 1, size=(40, 40, 3))
        ident = fit_transform(landmark_template(40, 40), landmark_template(40, 40))
        out, valid = regularize(src, ident, out_size=(20, 16))
        assert out.shape == (16, 20, 3)
        assert valid.all()
        np.testing.assert_allclose(out, src[12:28, 10:30, :], atol=1e-9)

    def test_translation_matches_shifted_crop(self):
        rng = np.random.default_rng(5)
        src = rng.uniform(0, 1, size=(40, 40, 3))
        lm = landmark_template(40, 40)
        t = fit_transform(lm, lm + np.array([10.0, 0.0]))
        out, valid = regularize(src, t, out_size=(20, 16))
        ident = fit_transform(lm, lm)
        base, _ = regularize(src, ident, out_size=(20, 16))
        # shifting right by 10 then recentring the window lands on the same pixels
        np.testing.assert_allclose(out[:, :, :], base[:, :, :], atol=1e-9)

    def test_out_of_bounds_padded_invalid(self):
        src = np.ones((30, 30, 3))
        lm = landmark_template(30, 30)
        t = fit_transform(lm, lm)
        out, valid = regularize(src, t, out_size=(60, 60))
        assert not valid.all()
        assert np.isnan(out[0, 0]).all()
        assert valid[30, 30]

    def test_default_canonical_size(self):
        src = np.ones((800, 1400, 3)) * 0.5
        lm = landmark_template(800, 1400)
        out, valid = regularize(src, fit_transform(lm, lm))
        assert out.shape == (720, 1280, 3)
        assert valid.all()


class TestVibration:
    @staticmethod
    def mat(tx, ty, scale, angle, shear=0.0):
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        m = np.eye(3)
        m[:2, :2] = scale * rot @ np.array([[1.0, shear], [shear, 1.0]])
        m[:2, 2] = (tx, ty)
        return m

    def test_decompose_round_trip(self):
        m = self.mat(3.0, -2.0, 1.2, 0.3)
        tx, ty, scale, angle, s1, s2 = decompose_transform(m)
        assert (tx, ty) == pytest.approx((3.0, -2.0))
        assert scale == pytest.approx(1.2, rel=1e-9)
        assert angle == pytest.approx(0.3, rel=1e-6)
        assert abs(s1) < 1e-9 and abs(s2) < 1e-9

    def test_identical_transforms_mu_six_nu_zero(self):
        m = self.mat(2.0, 1.0, 1.1, 0.2, shear=0.05)
        res = vibration_intensity([m] * 8)
        # every parameter nonzero: each term is exactly 1
        assert res.guarded_terms == ()
        np.testing.assert_allclose(res.mu, 6.0, atol=1e-9)
        assert res.nu == pytest.approx(0.0, abs=1e-12)

    def test_alternating_parameters_hand_computed(self):
        # all six parameters alternating a, 3a: each term is a/(2a)=0.5 or
        # 3a/(2a)=1.5, so mu alternates 3 and 9
        a = 0.4
        rows = [np.full(6, a if i % 2 == 0 else 3 * a) for i in range(6)]
        res = vibration_intensity(rows)
        np.testing.assert_allclose(sorted(set(np.round(res.mu, 9))), [3.0, 9.0])
        assert res.nu == pytest.approx(np.std([3.0, 9.0] * 3), abs=1e-9)

    def test_single_alternating_parameter(self):
        # tx alternating 1, 3 with ty/scale/angle/shear constant nonzero:
        # mu alternates 5.5 and 6.5
        mats = [self.mat(1.0 if i % 2 == 0 else 3.0, 1.0, 1.1, 0.1, shear=0.05) for i in range(6)]
        res = vibration_intensity(mats)
        assert res.nu == pytest.approx(0.5, abs=1e-6)

    def test_scaling_invariance(self):
        rng = np.random.default_rng(8)
        mats = [
            self.mat(1 + rng.uniform(0, 0.2), 2 + rng.uniform(0, 0.2), 1.0 + rng.uniform(0, 0.05), 0.1 + rng.uniform(0, 0.02))
            for _ in range(10)
        ]
        base = vibration_intensity(mats).nu
        scaled = [m.copy() for m in mats]
        # scale all six parameter sequences by the same constant: translations
        # and the 2x2 block scale together
        for m in scaled:
            m[:2, :] *= 2.0  # doubles tx, ty and scale; angle/shear unchanged
        # mean-normalization keeps terms for scaled parameters identical
        assert vibration_intensity(scaled).nu == pytest.approx(base, rel=1e-6)

    def test_monotone_in_jitter(self):
        nus = []
        for amp in (0.5, 1.0, 2.0):
            rng = np.random.default_rng(99)
            mats = [
                self.mat(5.0 + amp * rng.normal(), 5.0 + amp * rng.normal(), 1.0, 0.5)
                for _ in range(40)
            ]
            nus.append(vibration_intensity(mats).nu)
        assert nus[0] < nus[1] < nus[2]

    def test_zero_mean_parameter_guard(self):
        mats = [self.mat(1.0, 1.0, 1.0, 0.0) for _ in range(4)]  # angle mean 0
        res = vibration_intensity(mats)
        assert 3 in res.guarded_terms  # angle index
        assert np.isfinite(res.nu)

    def test_too_few_transforms(self):
        with pytest.raises(ValueError):
            vibration_intensity([np.eye(3)])
