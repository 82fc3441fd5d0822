import numpy as np
import pytest

from flashlive.optics import (
    FaceScene,
    FormFactors,
    ReflectanceMap,
    ViewGeometry,
    irradiance_at,
    midterm_result,
    pick_anchor,
    reflect,
)
from flashlive.scenes import landmark_template, make_face_scene


def flat_scene(h=16, w=16, refl=None, specular=0.0):
    values = np.full((h, w, 3), 0.5) if refl is None else refl
    return FaceScene(
        heightfield=np.zeros((h, w)),
        reflectance=ReflectanceMap(values=values),
        landmarks=landmark_template(h, w),
        specular_weight=specular,
        skin_flag=specular == 0.0,
    )


GEOM = ViewGeometry(strips=16, lateral_samples=5)


class TestIrradiance:
    def test_zero_emitter(self):
        scene = flat_scene()
        out = irradiance_at(scene, (0, 16), (0.0, 0.0, 0.0), GEOM)
        assert np.all(out == 0.0)

    def test_monotone_in_interval(self):
        scene = flat_scene()
        ff = FormFactors(scene, GEOM)
        full = irradiance_at(scene, (0, 16), (1, 1, 1), GEOM, form_factors=ff)
        upper = irradiance_at(scene, (0, 8), (1, 1, 1), GEOM, form_factors=ff)
        assert np.all(upper <= full + 1e-15)
        assert np.all(full >= 0)

    def test_empty_interval_is_zero_grid(self):
        scene = flat_scene()
        out = irradiance_at(scene, (8, 8), (1, 1, 1), GEOM)
        assert np.all(out == 0.0)

    def test_linear_in_color(self):
        scene = flat_scene()
        ff = FormFactors(scene, GEOM)
        one = irradiance_at(scene, (4, 12), (0.3, 0.5, 0.7), GEOM, form_factors=ff)
        two = irradiance_at(scene, (4, 12), (0.6, 1.0, 1.4), GEOM, form_factors=ff)
        np.testing.assert_allclose(two, 2.0 * one, rtol=0, atol=1e-15)

    def test_inverse_square_against_direct_kernel_evaluation(self):
        # oracle: evaluate the chosen cos*cos/r^2 patch sum independently
        # for the pixel facing the strip's center, at two distances
        h = w = 17
        ratios = []
        for dist in (200.0, 400.0):
            geom = ViewGeometry(distance_mm=dist, strips=17, lateral_samples=7)
            scene = flat_scene(h, w)
            ff = FormFactors(scene, geom)
            mid = h // 2
            ratios.append(ff.k[mid, mid, geom.strips // 2])

        def oracle(dist, geom):
            patch_area = (geom.screen_width_mm / geom.lateral_samples) * (
                geom.screen_height_mm / geom.strips
            )
            acc = 0.0
            px = 0.0  # pixel centered, strip centered: x offsets symmetric
            for i in range(geom.lateral_samples):
                lx = (i + 0.5) / geom.lateral_samples * geom.screen_width_mm - geom.screen_width_mm / 2
                r2 = (lx - px) ** 2 + dist**2
                acc += (dist / np.sqrt(r2)) ** 2 / r2
            return acc * patch_area

        g200 = ViewGeometry(distance_mm=200.0, strips=17, lateral_samples=7)
        g400 = ViewGeometry(distance_mm=400.0, strips=17, lateral_samples=7)
        expected = oracle(200.0, g200) / oracle(400.0, g400)
        assert ratios[0] / ratios[1] == pytest.approx(expected, abs=1e-9)
        # and the narrow-patch limit approaches the pure inverse-square 4:1
        assert 2.5 < ratios[0] / ratios[1] < 4.0

    def test_degenerate_geometry(self):
        with pytest.raises(ValueError, match="degenerate geometry"):
            ViewGeometry(distance_mm=0.0)


class TestReflect:
    def test_identity_reflectance(self):
        scene = flat_scene(refl=np.ones((16, 16, 3)))
        irr = irradiance_at(scene, (0, 16), (1, 0.5, 0.25), GEOM)
        np.testing.assert_array_equal(reflect(scene, irr), irr)

    def test_reflectance_ratio_property(self):
        # two pixels under equal irradiance: captured ratio = reflectance ratio
        rng = np.random.default_rng(3)
        refl = rng.uniform(0.2, 0.9, size=(16, 16, 3))
        scene = flat_scene(refl=refl)
        irr = np.full((16, 16, 3), 0.6)
        rad = reflect(scene, irr)
        x, y = (3, 4), (10, 11)
        np.testing.assert_allclose(
            rad[x] / rad[y], refl[x] / refl[y], rtol=0, atol=1e-9
        )

    def test_illuminant_ratio_property(self):
        # one pixel under E and 2E: captured ratio = illuminant ratio
        scene = flat_scene()
        e1 = np.full((16, 16, 3), 2.0)
        e2 = np.full((16, 16, 3), 4.0)
        r1, r2 = reflect(scene, e1), reflect(scene, e2)
        np.testing.assert_allclose(r1 / r2, 0.5, rtol=0, atol=1e-9)

    def test_linearity_exact(self):
        scene = flat_scene()
        ff = FormFactors(scene, GEOM)
        irr = irradiance_at(scene, (2, 9), (0.9, 0.1, 0.4), GEOM, form_factors=ff)
        for a in (0.0, 0.25, 3.0):
            np.testing.assert_allclose(
                reflect(scene, a * irr), a * reflect(scene, irr), rtol=0, atol=1e-12
            )

    def test_dimension_mismatch(self):
        scene = flat_scene()
        with pytest.raises(ValueError):
            reflect(scene, np.zeros((4, 4, 3)))

    def test_specular_adds_on_glossy_surface(self):
        scene = flat_scene(specular=0.8)
        ff = FormFactors(scene, GEOM)
        irr = ff.irradiance(np.ones((16, 3)))
        spec = (ff.specular.sum(axis=-1))[:, :, None] * np.ones(3)
        rad = reflect(scene, irr, specular_term=spec)
        base = irr * scene.reflectance.values
        assert np.all(rad >= base)
        assert rad.max() > base.max()


class TestMidterm:
    def test_uniform_frame_all_ones(self):
        grid = np.full((8, 8, 3), 0.37)
        out = midterm_result(grid, (2, 5))
        np.testing.assert_allclose(out, 1.0, atol=1e-12)

    def test_reflectance_recovered_up_to_anchor(self):
        rng = np.random.default_rng(9)
        refl = rng.uniform(0.2, 0.9, size=(12, 12, 3))
        scene = flat_scene(12, 12, refl=refl)
        irr = np.full((12, 12, 3), 0.5)
        frame = reflect(scene, irr)
        anchor = (6, 6)
        out = midterm_result(frame, anchor)
        np.testing.assert_allclose(out, refl / refl[anchor], atol=1e-9)
        np.testing.assert_allclose(out[anchor], 1.0, atol=1e-12)

    def test_zero_anchor_rejected(self):
        grid = np.full((4, 4, 3), 0.5)
        grid[1, 1] = 0.0
        with pytest.raises(ValueError, match="invalid anchor"):
            midterm_result(grid, (1, 1))

    def test_scaling_invariance(self):
        rng = np.random.default_rng(2)
        grid = rng.uniform(0.1, 0.9, size=(8, 8, 3))
        a = midterm_result(grid, (3, 3))
        b = midterm_result(2.7 * grid, (3, 3))
        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_pick_anchor_avoids_invalid(self):
        rng = np.random.default_rng(0)
        grid = np.full((8, 8, 3), 0.5)
        grid[:4, :, :] = 0.0
        i, j = pick_anchor(grid, rng)
        assert i >= 4


def test_face_scene_structure():
    scene = make_face_scene(42)
    assert scene.heightfield.shape == (64, 64)
    assert scene.landmarks.shape == (106, 2)
    assert scene.skin_flag
    # nose sticks out beyond the cheeks
    assert scene.heightfield[34, 32] > scene.heightfield[34, 10]
    # different seeds give different people
    other = make_face_scene(43)
    assert not np.allclose(scene.heightfield, other.heightfield)


def test_midterm_shows_shape_structure():
    # a 3D face's midterm differs between nose ridge and cheek columns
    scene = make_face_scene(7)
    geom = ViewGeometry()
    ff = FormFactors(scene, geom)
    irr = ff.irradiance(np.ones((geom.strips, 3)) * 0.8)
    frame = reflect(scene, irr)
    mid = midterm_result(frame, (32, 32))
    center_col = mid[20:48, 30:35, :].mean()
    cheek_col = mid[20:48, 8:13, :].mean()
    assert abs(center_col - cheek_col) / cheek_col > 0.05
