import numpy as np
import pytest

from flashlive import facecheck
from flashlive.facecheck import AbstractImage, abstract, abstract_to_input, resize_bicubic
from flashlive.scenes import landmark_template


class TestAbstract:
    def test_constant_input_exact(self):
        grid = np.full((64, 64, 3), 1.7)
        img = abstract(grid, landmark_template(64, 64))
        np.testing.assert_allclose(img.profiles, 1.7, atol=1e-9)

    def test_low_degree_polynomial_reproduced(self):
        # degree-3 row profile: inside the degree-20 fit space, so exact
        lm = landmark_template(64, 64)
        rows = np.arange(64) / 63.0
        poly = 0.5 + rows - 0.7 * rows**2 + 0.3 * rows**3
        grid = np.repeat(poly[:, None], 64, axis=1)[:, :, None] * np.ones(3)
        img = abstract(grid, lm)
        r0, r1, _, _ = facecheck.face_region(lm, (64, 64))
        expected = poly[r0:r1]
        for r in range(20):
            np.testing.assert_allclose(img.profiles[:, r, 0], expected, atol=1e-9)

    def test_face_too_small(self):
        grid = np.ones((64, 64, 3))
        lm = landmark_template(64, 64)
        tiny = (lm - lm.mean(axis=0)) * 0.1 + lm.mean(axis=0)
        with pytest.raises(ValueError, match="face too small"):
            abstract(grid[:, :18], tiny * 0.25)

    def test_smooths_noise(self):
        rng = np.random.default_rng(0)
        grid = 1.0 + rng.normal(0, 0.2, size=(64, 64, 3))
        img = abstract(grid, landmark_template(64, 64))
        # a degree-20 fit over ~57 rows removes most high-frequency noise
        assert np.std(np.diff(img.profiles, axis=0)) < np.std(np.diff(grid, axis=0))


class TestResize:
    def test_constant(self):
        out = resize_bicubic(np.full((30, 20, 3), 0.4))
        assert out.shape == (20, 20, 3)
        np.testing.assert_allclose(out, 0.4, atol=1e-9)

    def test_identity_same_size(self):
        rng = np.random.default_rng(1)
        src = rng.uniform(0, 1, size=(20, 20, 3))
        np.testing.assert_allclose(resize_bicubic(src), src, atol=1e-9)

    def test_linear_ramp_reproduced_interior(self):
        # the a=-0.5 kernel has linear precision away from clamped edges
        ys = np.linspace(0, 1, 40)
        xs = np.linspace(0, 2, 36)
        src = (ys[:, None] + xs[None, :])[:, :, None] * np.ones(3)
        out = resize_bicubic(src, (20, 20))
        oy = (np.arange(20) + 0.5) * 40 / 20 - 0.5
        ox = (np.arange(20) + 0.5) * 36 / 20 - 0.5
        expected = (ys[1] - ys[0]) * oy[:, None] + (xs[1] - xs[0]) * ox[None, :]
        np.testing.assert_allclose(out[2:-2, 2:-2, 0], expected[2:-2, 2:-2], atol=1e-6)

    def test_undersized_source_rejected(self):
        with pytest.raises(ValueError):
            resize_bicubic(np.ones((3, 10, 3)))

    def test_abstract_to_input_shape(self):
        img = AbstractImage(profiles=np.ones((57, 20, 3)))
        assert abstract_to_input(img).shape == (20, 20, 3)


def test_pipeline_determinism():
    rng = np.random.default_rng(3)
    grid = 1.0 + rng.normal(0, 0.1, size=(64, 64, 3))
    lm = landmark_template(64, 64)
    a = abstract_to_input(abstract(grid, lm))
    b = abstract_to_input(abstract(grid.copy(), lm.copy()))
    np.testing.assert_array_equal(a, b)
