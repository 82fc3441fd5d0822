"""Diagonal reflection model over synthetic subjects.

Captured intensity factors per channel into illuminant times reflectance,
so ratios of captures isolate either the reflectance structure (two pixels
under one light) or the illuminant change (one pixel under two lights).
The illuminant here is a row-scanned screen ~200 mm in front of the
subject; its contribution to every subject pixel is a Lambertian form
factor summed over lit screen strips, with an optional mirror lobe for
glossy flat attack surfaces.

All operations are pure; scenes and kernels are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_LANDMARKS = 106

#: Peak irradiance of a fully lit white screen on the reference flat plate.
#: Leaves headroom below the sensor clip at 1.0 so over-lit scenes saturate.
FULL_SCREEN_IRRADIANCE = 0.85

SPECULAR_EXPONENT = 32.0


@dataclass(frozen=True)
class ViewGeometry:
    """Desk-scale arrangement: screen plane at z=0, subject facing it.

    The screen is deliberately large relative to the ~200 mm viewing
    distance so a lit strip illuminates nearby subject rows much more
    strongly than distant ones; that vertical localization is what the
    timing regressors decode.
    """

    distance_mm: float = 200.0
    screen_width_mm: float = 480.0
    screen_height_mm: float = 480.0
    strips: int = 64
    lateral_samples: int = 9

    def __post_init__(self) -> None:
        if self.distance_mm <= 0.0:
            raise ValueError("degenerate geometry")
        if self.strips <= 0 or self.lateral_samples <= 0:
            raise ValueError("strips and lateral_samples must be positive")


@dataclass(frozen=True)
class ReflectanceMap:
    """Per-pixel, per-channel reflectance in [0, 1]."""

    values: np.ndarray  # (height, width, 3)

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError("reflectance must be (height, width, 3)")
        if v.shape[0] <= 0 or v.shape[1] <= 0:
            raise ValueError("reflectance dimensions must be positive")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("reflectance values must be finite and in [0, 1]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FaceScene:
    """The subject under authentication: a textured heightfield.

    ``heightfield`` is the protrusion toward the screen in mm (nose ridge
    positive).  Flat attack surfaces use a zero heightfield, a nonzero
    ``specular_weight`` and ``skin_flag=False``.
    """

    heightfield: np.ndarray  # (height, width) mm
    reflectance: ReflectanceMap
    landmarks: np.ndarray  # (106, 2) pixel coordinates (x, y)
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)  # rotation rad, shift px
    specular_weight: float = 0.0
    skin_flag: bool = True

    def __post_init__(self) -> None:
        if self.heightfield.shape != (self.reflectance.height, self.reflectance.width):
            raise ValueError("heightfield and reflectance dimensions differ")
        if self.landmarks.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected {N_LANDMARKS} landmarks")
        if not np.all(np.isfinite(self.landmarks)):
            raise ValueError("landmarks must be finite")
        if not 0.0 <= self.specular_weight <= 1.0:
            raise ValueError("specular_weight must be in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.heightfield.shape


@dataclass(frozen=True)
class Illuminant:
    """Per-strip, per-channel emitted intensity of the screen."""

    emission: np.ndarray  # (strips, 3), nonnegative

    def __post_init__(self) -> None:
        e = self.emission
        if e.ndim != 2 or e.shape[1] != 3:
            raise ValueError("emission must be (strips, 3)")
        if not np.all(np.isfinite(e)) or e.min() < 0.0:
            raise ValueError("emission must be finite and nonnegative")


class FormFactors:
    """Precomputed per-pixel, per-strip illumination kernel for one scene.

    ``k[i, j, s]`` is the irradiance pixel ``(i, j)`` receives from strip
    ``s`` lit at unit intensity; ``specular[i, j, s]`` is the matching
    mirror-lobe weight used for glossy flat surfaces.
    """

    def __init__(self, scene: FaceScene, geometry: ViewGeometry) -> None:
        self.scene = scene
        self.geometry = geometry
        self.k, self.specular = _compute_kernels(scene, geometry)
        self.k_total = self.k.sum(axis=-1)

    def irradiance(self, emission: np.ndarray) -> np.ndarray:
        """Irradiance grid for per-strip per-channel emission (strips, 3)."""
        return np.tensordot(self.k, np.asarray(emission, dtype=float), axes=([2], [0]))

    def strip_interval(self, lo: float, hi: float) -> np.ndarray:
        """Summed kernel over the (fractional) strip interval [lo, hi)."""
        strips = self.geometry.strips
        lo = max(0.0, min(float(lo), strips * 1.0))
        hi = max(0.0, min(float(hi), strips * 1.0))
        if hi <= lo:
            return np.zeros_like(self.k_total)
        weights = np.clip(np.minimum(hi, np.arange(1, strips + 1)) - np.maximum(lo, np.arange(strips)), 0.0, 1.0)
        return np.tensordot(self.k, weights, axes=([2], [0]))


_KERNEL_GAIN: float | None = None


def _kernel_gain() -> float:
    """Fixed sensor gain: a fully lit default screen puts a flat plate at
    FULL_SCREEN_IRRADIANCE.  One constant for every scene and geometry, so
    cross-geometry irradiance ratios stay physical."""
    global _KERNEL_GAIN
    if _KERNEL_GAIN is None:
        ref = _raw_kernel(np.zeros((33, 33)), ViewGeometry())
        _KERNEL_GAIN = FULL_SCREEN_IRRADIANCE / float(ref.sum(axis=-1).max())
    return _KERNEL_GAIN


def _raw_kernel(heightfield: np.ndarray, geometry: ViewGeometry) -> np.ndarray:
    g = geometry
    height, width = heightfield.shape
    # subject grid in mm, image convention (y down, x right), centered
    xs = (np.arange(width) + 0.5) / width * g.screen_width_mm - g.screen_width_mm / 2
    ys = (np.arange(height) + 0.5) / height * g.screen_height_mm - g.screen_height_mm / 2
    px = np.broadcast_to(xs[None, :], (height, width))
    py = np.broadcast_to(ys[:, None], (height, width))
    pz = g.distance_mm - heightfield

    # outward surface normal (toward the screen, -z side)
    mm_per_px_x = g.screen_width_mm / width
    mm_per_px_y = g.screen_height_mm / height
    hy, hx = np.gradient(heightfield)
    nx = -hx / mm_per_px_x
    ny = -hy / mm_per_px_y
    nz = -np.ones_like(heightfield)
    n_norm = np.sqrt(nx**2 + ny**2 + nz**2)

    strip_ys = (np.arange(g.strips) + 0.5) / g.strips * g.screen_height_mm - g.screen_height_mm / 2
    lat_xs = (np.arange(g.lateral_samples) + 0.5) / g.lateral_samples * g.screen_width_mm - g.screen_width_mm / 2
    patch_area = (g.screen_width_mm / g.lateral_samples) * (g.screen_height_mm / g.strips)

    k = np.zeros((height, width, g.strips))
    for s in range(g.strips):
        acc = np.zeros((height, width))
        for lx in lat_xs:
            dx = lx - px
            dy = strip_ys[s] - py
            dz = -pz
            r2 = dx**2 + dy**2 + dz**2
            r = np.sqrt(r2)
            cos_out = pz / r  # screen emits toward +z
            cos_in = (nx * dx + ny * dy + nz * dz) / (n_norm * r)
            acc += np.clip(cos_in, 0.0, None) * np.clip(cos_out, 0.0, None) / r2
        k[:, :, s] = acc * patch_area
    return k


def _compute_kernels(scene: FaceScene, geometry: ViewGeometry) -> tuple[np.ndarray, np.ndarray]:
    g = geometry
    height, width = scene.shape
    k = _raw_kernel(scene.heightfield, g) * _kernel_gain()

    # Blinn mirror lobe against a camera embedded at the screen center.
    xs = (np.arange(width) + 0.5) / width * g.screen_width_mm - g.screen_width_mm / 2
    ys = (np.arange(height) + 0.5) / height * g.screen_height_mm - g.screen_height_mm / 2
    px = np.broadcast_to(xs[None, :], (height, width))
    py = np.broadcast_to(ys[:, None], (height, width))
    pz = g.distance_mm - scene.heightfield

    mm_per_px_x = g.screen_width_mm / width
    mm_per_px_y = g.screen_height_mm / height
    hy, hx = np.gradient(scene.heightfield)
    nx = -hx / mm_per_px_x
    ny = -hy / mm_per_px_y
    nz = -np.ones_like(scene.heightfield)
    n_norm = np.sqrt(nx**2 + ny**2 + nz**2)

    vx, vy, vz = -px, -py, -pz  # toward the camera at the screen center
    v_norm = np.sqrt(vx**2 + vy**2 + vz**2)

    strip_ys = (np.arange(g.strips) + 0.5) / g.strips * g.screen_height_mm - g.screen_height_mm / 2
    patch_area = g.screen_width_mm * (g.screen_height_mm / g.strips)
    spec = np.zeros((height, width, g.strips))
    for s in range(g.strips):
        dx = 0.0 - px
        dy = strip_ys[s] - py
        dz = -pz
        r = np.sqrt(dx**2 + dy**2 + dz**2)
        hxv = dx / r + vx / v_norm
        hyv = dy / r + vy / v_norm
        hzv = dz / r + vz / v_norm
        h_norm = np.sqrt(hxv**2 + hyv**2 + hzv**2)
        n_dot_h = np.clip((nx * hxv + ny * hyv + nz * hzv) / (n_norm * h_norm), 0.0, 1.0)
        cos_out = np.clip(pz / r, 0.0, None)
        spec[:, :, s] = n_dot_h**SPECULAR_EXPONENT * cos_out / r**2 * patch_area
    # normalize the lobe so a fully lit screen yields an O(1) highlight
    peak = float(spec.sum(axis=-1).max())
    if peak > 0.0:
        spec *= 0.9 / peak
    return k, spec


def irradiance_at(
    scene: FaceScene,
    screen_rows_lit: tuple[float, float],
    color: tuple[float, float, float],
    geometry: ViewGeometry,
    *,
    form_factors: FormFactors | None = None,
) -> np.ndarray:
    """Per-pixel per-channel irradiance from a lit strip interval.

    ``screen_rows_lit`` is a half-open strip interval ``(lo, hi)``; an empty
    interval yields a zero grid.  Output is exactly linear in ``color``.
    """
    color_arr = np.asarray(color, dtype=float)
    if color_arr.shape != (3,) or np.any(color_arr < 0.0):
        raise ValueError("color must be 3 nonnegative components")
    ff = form_factors if form_factors is not None else FormFactors(scene, geometry)
    base = ff.strip_interval(screen_rows_lit[0], screen_rows_lit[1])
    return base[:, :, None] * color_arr[None, None, :]


def reflect(
    scene: FaceScene,
    irradiance: np.ndarray,
    *,
    specular_term: np.ndarray | None = None,
) -> np.ndarray:
    """Radiance leaving the subject: diffuse product plus optional mirror lobe."""
    if irradiance.shape != scene.reflectance.values.shape:
        raise ValueError("irradiance and reflectance dimensions differ")
    radiance = irradiance * scene.reflectance.values
    if scene.specular_weight > 0.0 and specular_term is not None:
        if specular_term.shape != irradiance.shape:
            raise ValueError("specular term dimension mismatch")
        radiance = radiance + scene.specular_weight * specular_term
    return radiance


def midterm_result(
    grid: np.ndarray,
    anchor: tuple[int, int],
    *,
    invalid: np.ndarray | None = None,
    min_anchor: float = 1e-6,
) -> np.ndarray:
    """Divide every pixel by the anchor pixel's value, per channel.

    The anchor must be strictly positive (and unsaturated, if a mask is
    given) in every channel; callers retry with a fresh random anchor on
    failure.  Pixels flagged invalid come back as NaN.
    """
    if grid.ndim != 3 or grid.shape[2] != 3:
        raise ValueError("grid must be (height, width, 3)")
    i, j = anchor
    if not (0 <= i < grid.shape[0] and 0 <= j < grid.shape[1]):
        raise ValueError("invalid anchor")
    anchor_val = np.asarray(grid[i, j], dtype=float)
    if np.any(~np.isfinite(anchor_val)) or np.any(anchor_val < min_anchor):
        raise ValueError("invalid anchor")
    if invalid is not None and np.any(invalid[i, j]):
        raise ValueError("invalid anchor")
    out = grid / anchor_val[None, None, :]
    if invalid is not None:
        out = np.where(invalid, np.nan, out)
    return out


def pick_anchor(
    grid: np.ndarray,
    rng: np.random.Generator,
    *,
    invalid: np.ndarray | None = None,
    region: tuple[int, int, int, int] | None = None,
    attempts: int = 64,
) -> tuple[int, int]:
    """Draw a usable anchor pixel, retrying on zero/saturated candidates."""
    h, w = grid.shape[0], grid.shape[1]
    y0, y1, x0, x1 = region if region is not None else (0, h, 0, w)
    for _ in range(attempts):
        i = int(rng.integers(y0, y1))
        j = int(rng.integers(x0, x1))
        try:
            midterm_result(grid[i : i + 1, j : j + 1, :].reshape(1, 1, 3), (0, 0))
        except ValueError:
            continue
        if invalid is not None and np.any(invalid[i, j]):
            continue
        if np.all(grid[i, j] >= 1e-6):
            return (i, j)
    raise ValueError("no usable anchor found")
