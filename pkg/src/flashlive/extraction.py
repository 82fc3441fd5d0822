"""Face extraction: track-or-detect, landmark alignment, regularization.

The track-or-detect loop prefers the fast tracker and falls back to the
slow detector whenever tracking is lost or its confidence drops below the
0.6 threshold.  Landmark sets are aligned to the session mean by a
closed-form similarity transform, frames are resampled into a canonical
crop, and the per-frame transform sequence yields a scalar vibration
intensity used by the robustness experiments.

Real trackers and detectors are external CV systems; this module ships
synthetic ones driven by scene ground truth plus seeded noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .optics import N_LANDMARKS

#: Tracker confidence below which the detector re-runs (Algorithm 1).
TRACK_CONFIDENCE_THRESHOLD = 0.6

#: Canonical crop size (width, height) of a regularized frame.
CANONICAL_SIZE = (1280, 720)


@dataclass(frozen=True)
class FaceRect:
    x: float
    y: float
    w: float
    h: float
    confidence: float

    def __post_init__(self) -> None:
        if self.w <= 0 or self.h <= 0:
            raise ValueError("rect must have positive extent")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)


@dataclass(frozen=True)
class RegularizingTransform:
    """Homogeneous 3x3 rotation+scale+shift matrix with residual."""

    matrix: np.ndarray  # (3, 3), last row (0, 0, 1)
    residual: float  # rms landmark distance after alignment

    def __post_init__(self) -> None:
        if self.matrix.shape != (3, 3):
            raise ValueError("transform must be 3x3")
        if not np.allclose(self.matrix[2], (0.0, 0.0, 1.0), atol=1e-9):
            raise ValueError("last row must be (0, 0, 1)")
        if abs(np.linalg.det(self.matrix[:2, :2])) < 1e-12:
            raise ValueError("transform is not invertible")

    def apply(self, points: np.ndarray) -> np.ndarray:
        homog = np.column_stack([points, np.ones(len(points))])
        return (self.matrix @ homog.T).T[:, :2]


TrackFn = Callable[[int], tuple[FaceRect | None, float]]
DetectFn = Callable[[int], FaceRect | None]


class SyntheticTracker:
    """Ground-truth-driven tracker stub with seeded noise.

    Confidence degrades with the subject's frame-to-frame motion, so heavy
    vibration triggers detector fallbacks exactly as with a real tracker.
    A freshly (re-)seeded tracker is confident for its first frame.
    """

    def __init__(
        self,
        true_rects: Sequence[FaceRect],
        *,
        noise: float = 0.5,
        rng: np.random.Generator,
        confidence_floor: float = 0.9,
        motion_scale: float = 0.0,
    ) -> None:
        self._truth = list(true_rects)
        self._noise = noise
        self._rng = rng
        self._floor = confidence_floor
        self._motion_scale = motion_scale
        self._seeded_at: int | None = None
        self.calls = 0

    def reseed(self, rect: FaceRect, frame_index: int) -> None:
        self._seeded_at = frame_index

    def __call__(self, frame_index: int) -> tuple[FaceRect | None, float]:
        self.calls += 1
        truth = self._truth[frame_index]
        jitter = self._rng.normal(0.0, self._noise, size=2)
        if frame_index == 0 or self._seeded_at == frame_index - 1 or self._motion_scale == 0.0:
            motion = 0.0
        else:
            prev = self._truth[frame_index - 1]
            motion = math.hypot(truth.x - prev.x, truth.y - prev.y)
        conf = self._floor * math.exp(-self._motion_scale * motion)
        conf = float(np.clip(conf + self._rng.normal(0, 0.02), 0.0, 1.0))
        rect = FaceRect(
            truth.x + jitter[0], truth.y + jitter[1], truth.w, truth.h, conf
        )
        return rect, conf


class SyntheticDetector:
    """Ground-truth-driven detector stub: precise, slow, occasionally blind."""

    def __init__(
        self,
        true_rects: Sequence[FaceRect],
        *,
        noise: float = 0.2,
        rng: np.random.Generator,
        failure_rate: float = 0.0,
    ) -> None:
        self._truth = list(true_rects)
        self._noise = noise
        self._rng = rng
        self._failure_rate = failure_rate
        self.calls = 0

    def __call__(self, frame_index: int) -> FaceRect | None:
        self.calls += 1
        if self._failure_rate > 0 and self._rng.uniform() < self._failure_rate:
            return None
        truth = self._truth[frame_index]
        jitter = self._rng.normal(0.0, self._noise, size=2)
        return FaceRect(truth.x + jitter[0], truth.y + jitter[1], truth.w, truth.h, 1.0)


def extract_faces(
    n_frames: int,
    tracker,
    detector,
) -> list[FaceRect | None]:
    """Track-or-detect over a frame sequence; one rect (or None) per frame.

    Tracker output is used unless the rect is missing or its confidence is
    below the threshold, in which case the detector runs and re-seeds the
    tracker.  Frames where the detector also fails are marked unusable
    (None) and excluded downstream.
    """
    if n_frames <= 0:
        raise ValueError("video must be nonempty")
    rects: list[FaceRect | None] = []
    for idx in range(n_frames):
        rect, confidence = tracker(idx)
        if rect is None or confidence < TRACK_CONFIDENCE_THRESHOLD:
            rect = detector(idx)
            if rect is not None and hasattr(tracker, "reseed"):
                tracker.reseed(rect, idx)
        rects.append(rect)
    return rects


def fit_transform(landmarks: np.ndarray, target: np.ndarray) -> RegularizingTransform:
    """Similarity transform minimizing ||T @ landmarks - target||^2.

    Closed-form least squares over rotation, isotropic scale and shift
    (homogeneous coordinates); returns the transform with its rms residual.
    """
    src = np.asarray(landmarks, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.shape != (N_LANDMARKS, 2) or dst.shape != (N_LANDMARKS, 2):
        raise ValueError(f"landmark sets must be ({N_LANDMARKS}, 2)")
    if not (np.all(np.isfinite(src)) and np.all(np.isfinite(dst))):
        raise ValueError("landmarks must be finite")

    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    src_c = src - mu_s
    dst_c = dst - mu_d
    var_s = float((src_c**2).sum()) / len(src)
    if var_s < 1e-12:
        raise ValueError("degenerate landmark configuration")
    cov = dst_c.T @ src_c / len(src)
    u, d, vt = np.linalg.svd(cov)
    if np.linalg.matrix_rank(cov, tol=1e-12) < 2 and d[1] < 1e-12:
        raise ValueError("degenerate landmark configuration")
    s = np.eye(2)
    if np.linalg.det(u @ vt) < 0:
        s[1, 1] = -1.0
    rot = u @ s @ vt
    scale = float(np.trace(np.diag(d) @ s)) / var_s
    shift = mu_d - scale * rot @ mu_s

    matrix = np.eye(3)
    matrix[:2, :2] = scale * rot
    matrix[:2, 2] = shift
    aligned = (scale * rot @ src.T).T + shift
    residual = float(np.sqrt(((aligned - dst) ** 2).sum(axis=1).mean()))
    return RegularizingTransform(matrix=matrix, residual=residual)


def regularize(
    pixels: np.ndarray,
    transform: RegularizingTransform,
    *,
    out_size: tuple[int, int] = CANONICAL_SIZE,
    center: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Resample a frame through the transform into the canonical crop.

    The output is the central ``out_size`` (width, height) window of the
    transformed coordinate plane, centered on ``center`` (a point in
    transformed coordinates; defaults to the transformed source center).
    Passing one fixed center for a whole frame sequence keeps the aligned
    faces at the same output position.  Output pixels with no source data
    are NaN with ``valid`` False.
    """
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise ValueError("pixels must be (height, width, 3)")
    out_w, out_h = out_size
    src_h, src_w = pixels.shape[:2]

    fwd = transform.matrix
    if center is None:
        src_center = np.array([src_w / 2, src_h / 2])
        center = transform.apply(src_center[None, :])[0]
    offset_xy = np.asarray(center, dtype=float) - np.array([out_w / 2, out_h / 2])

    inv = np.linalg.inv(fwd[:2, :2])
    # output pixel (x_o, y_o) samples source inv @ (xy_o + offset - shift)
    a_rc = np.array([[inv[1, 1], inv[1, 0]], [inv[0, 1], inv[0, 0]]])
    shift = fwd[:2, 2]
    off_rc = inv @ (offset_xy - shift)
    offset_rc = np.array([off_rc[1], off_rc[0]])

    out = np.empty((out_h, out_w, 3), dtype=float)
    for c in range(3):
        out[:, :, c] = ndimage.affine_transform(
            np.asarray(pixels[:, :, c], dtype=float),
            a_rc,
            offset=offset_rc,
            output_shape=(out_h, out_w),
            order=1,
            mode="constant",
            cval=np.nan,
        )
    valid = np.all(np.isfinite(out), axis=2)
    return out, valid


def decompose_transform(matrix: np.ndarray) -> tuple[float, float, float, float, float, float]:
    """Six motion parameters of a homogeneous 2D transform.

    Returns (shift_x, shift_y, scale, angle, shear_sym, shear_asym): the
    translation pair, isotropic scale, rotation angle, and the symmetric /
    asymmetric residuals of the rotation-and-scale-removed 2x2 block.
    """
    m = np.asarray(matrix, dtype=float)
    a = m[:2, :2]
    tx, ty = float(m[0, 2]), float(m[1, 2])
    scale = float(np.sqrt(abs(np.linalg.det(a))))
    angle = float(np.arctan2(a[1, 0], a[0, 0]))
    rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    resid = rot.T @ a / max(scale, 1e-300)
    shear_sym = float((resid[0, 1] + resid[1, 0]) / 2)
    shear_asym = float((resid[0, 0] - resid[1, 1]) / 2)
    return tx, ty, scale, angle, shear_sym, shear_asym


@dataclass(frozen=True)
class VibrationResult:
    nu: float
    mu: np.ndarray  # per-frame assembled values
    guarded_terms: tuple[int, ...]  # parameter indices whose mean hit the guard


def vibration_intensity(transforms: Sequence[np.ndarray | RegularizingTransform]) -> VibrationResult:
    """Scalar vibration intensity of a transform sequence.

    Each transform contributes six motion parameters; every parameter is
    divided by its sequence mean and the six terms summed per frame.  The
    intensity is the standard deviation of those per-frame sums.  A
    parameter whose mean is zero cannot be normalized: its mean is replaced
    by machine epsilon and the index reported in ``guarded_terms``.

    Items may be 3x3 matrices, ``RegularizingTransform``s, or precomputed
    six-parameter rows.
    """
    if len(transforms) < 2:
        raise ValueError("need at least 2 transforms")
    rows = []
    for t in transforms:
        if isinstance(t, RegularizingTransform):
            rows.append(decompose_transform(t.matrix))
        else:
            arr = np.asarray(t, dtype=float)
            rows.append(tuple(arr) if arr.shape == (6,) else decompose_transform(arr))
    params = np.array(rows)  # (N, 6)
    means = params.mean(axis=0)
    guarded = tuple(int(i) for i in np.nonzero(np.abs(means) < 1e-300)[0])
    safe = np.where(np.abs(means) < 1e-300, np.finfo(float).eps, means)
    mu = (params / safe[None, :]).sum(axis=1)
    return VibrationResult(nu=float(np.std(mu)), mu=mu, guarded_terms=guarded)
