"""Synthetic subjects: seeded 3D face scenes and flat attack surfaces.

Faces are parametric heightfields (forehead dome, nose ridge, cheeks,
chin) with a smooth skin texture; the 106-point landmark layout is a fixed
template (jaw 33, brows 18, nose 15, eyes 24, mouth 16) placed relative to
the face outline.  Attack surfaces are flat glossy emitters that replay a
victim texture at one of four screen presets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .optics import FaceScene, ReflectanceMap

DEFAULT_SIZE = 64

_SKIN_BASE = np.array([0.72, 0.55, 0.46])


def _gaussian2d(shape, cy, cx, sy, sx):
    ys = np.arange(shape[0])[:, None]
    xs = np.arange(shape[1])[None, :]
    return np.exp(-0.5 * (((ys - cy) / sy) ** 2 + ((xs - cx) / sx) ** 2))


def landmark_template(height: int, width: int) -> np.ndarray:
    """Canonical 106 landmarks as (x, y) pixel coordinates."""
    pts: list[tuple[float, float]] = []
    cx, cy = width / 2, height / 2
    rx, ry = width * 0.36, height * 0.44

    # jaw / contour: 33 points along the lower face ellipse
    for t in np.linspace(-np.pi * 0.05, np.pi * 1.05, 33):
        pts.append((cx - rx * np.cos(t), cy + ry * np.sin(t) * 0.9))
    # two brows: 9 points each
    for side in (-1, 1):
        bx = cx + side * width * 0.17
        for t in np.linspace(-1, 1, 9):
            pts.append((bx + t * width * 0.10, cy - height * 0.18 + 0.02 * height * t**2))
    # nose: 15 points down the ridge then across the base
    for t in np.linspace(0, 1, 8):
        pts.append((cx, cy - height * 0.12 + t * height * 0.22))
    for t in np.linspace(-1, 1, 7):
        pts.append((cx + t * width * 0.07, cy + height * 0.12))
    # eyes: 12 points each
    for side in (-1, 1):
        ex = cx + side * width * 0.17
        for t in np.linspace(0, 2 * np.pi, 12, endpoint=False):
            pts.append((ex + np.cos(t) * width * 0.06, cy - height * 0.08 + np.sin(t) * height * 0.03))
    # mouth: 16 points
    for t in np.linspace(0, 2 * np.pi, 16, endpoint=False):
        pts.append((cx + np.cos(t) * width * 0.12, cy + height * 0.24 + np.sin(t) * height * 0.045))

    out = np.asarray(pts, dtype=float)
    assert out.shape == (106, 2)
    return out


def make_face_scene(
    seed: int,
    *,
    height: int = DEFAULT_SIZE,
    width: int = DEFAULT_SIZE,
    specular_weight: float = 0.0,
) -> FaceScene:
    """Build a seeded person: heightfield, skin texture and landmarks."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ 0xFACE))
    h = np.zeros((height, width))

    # person-specific proportions
    nose_h = rng.uniform(16.0, 26.0)
    dome_h = rng.uniform(8.0, 14.0)
    cheek_h = rng.uniform(4.0, 9.0)
    cy, cx = height * 0.5, width * 0.5

    h += dome_h * _gaussian2d((height, width), cy * 0.66, cx, height * 0.30, width * 0.34)
    h += nose_h * _gaussian2d((height, width), cy * 1.08, cx, height * 0.16, width * 0.055)
    for side in (-1, 1):
        h += cheek_h * _gaussian2d(
            (height, width), cy * 1.12, cx + side * width * 0.22, height * 0.16, width * 0.13
        )
    h += 6.0 * _gaussian2d((height, width), cy * 1.55, cx, height * 0.10, width * 0.14)  # chin
    # roll off toward the image border so the head reads as a bounded object
    border = _gaussian2d((height, width), cy, cx, height * 0.38, width * 0.33)
    h *= border / border.max()

    tone = _SKIN_BASE * rng.uniform(0.85, 1.1, size=3)
    texture = gaussian_filter(rng.normal(0.0, 1.0, size=(height, width)), sigma=1.6)
    texture = texture / max(1e-9, np.abs(texture).max()) * 0.08
    refl = np.clip(tone[None, None, :] * (1.0 + texture[:, :, None]), 0.05, 0.95)
    # darker brows/lips give the texture face-like contrast
    lm = landmark_template(height, width)
    brow = _gaussian2d((height, width), cy * 0.82, cx, height * 0.03, width * 0.28)
    lips = _gaussian2d((height, width), cy * 1.48, cx, height * 0.05, width * 0.13)
    refl = np.clip(refl * (1.0 - 0.45 * brow[:, :, None]) * (1.0 - 0.25 * lips[:, :, None]), 0.02, 0.95)

    return FaceScene(
        heightfield=h,
        reflectance=ReflectanceMap(values=refl),
        landmarks=lm,
        pose=(0.0, 0.0, 0.0),
        specular_weight=specular_weight,
        skin_flag=True,
    )


@dataclass(frozen=True)
class ScreenPreset:
    """An attack display: name, pixel density class and gloss."""

    name: str
    ppi: int
    specular_weight: float
    brightness: float


SCREEN_PRESETS: tuple[ScreenPreset, ...] = (
    ScreenPreset("phone-a", 432, 0.75, 1.00),
    ScreenPreset("phone-b", 326, 0.70, 0.95),
    ScreenPreset("monitor-a", 93, 0.55, 0.90),
    ScreenPreset("monitor-b", 95, 0.60, 0.92),
)


def make_flat_scene(
    victim_seed: int,
    preset: ScreenPreset,
    *,
    height: int = DEFAULT_SIZE,
    width: int = DEFAULT_SIZE,
    heightfield: np.ndarray | None = None,
    specular_override: float | None = None,
) -> FaceScene:
    """A flat glossy panel textured with a rendering of the victim's face.

    Low pixel density coarsens the displayed texture.  ``heightfield`` and
    ``specular_override`` exist for the documented cheating configuration
    (a stereo surface with no gloss) that probes the face-shape assumption.
    """
    victim = make_face_scene(victim_seed, height=height, width=width)
    # shaded victim rendering as the panel texture
    shade = 1.0 - 0.35 * (victim.heightfield / max(1e-9, victim.heightfield.max()))
    tex = np.clip(victim.reflectance.values * shade[:, :, None], 0.02, 0.95)
    # pixel-density pixelation: block-average at the preset's effective scale
    block = max(1, int(round(440 / preset.ppi)))
    if block > 1:
        hh, ww = height // block * block, width // block * block
        small = tex[:hh, :ww].reshape(hh // block, block, ww // block, block, 3).mean(axis=(1, 3))
        tex = tex.copy()
        tex[:hh, :ww] = np.repeat(np.repeat(small, block, axis=0), block, axis=1)
        tex = np.clip(tex, 0.02, 0.95)
    hf = np.zeros((height, width)) if heightfield is None else heightfield
    spec = preset.specular_weight if specular_override is None else specular_override
    return FaceScene(
        heightfield=hf,
        reflectance=ReflectanceMap(values=tex * preset.brightness),
        landmarks=victim.landmarks,
        pose=(0.0, 0.0, 0.0),
        specular_weight=spec,
        skin_flag=False,
    )
