"""Row-scanning screens, column-scanning rolling-shutter cameras.

A screen repaints its picture top to bottom once per refresh; a rolling
shutter camera exposes its columns left to right across each captured
frame.  Both clocks drift: every refresh period is jittered independently,
which is what makes a forger's replay timing detectable.  This module owns
the scan timelines, the math locating the camera's region of interest for
a given screen event, the column-wise exposure integrator, and the frame
trace wire format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

#: Per-period clock jitter, uniform in +-0.5% of the nominal period.
DEFAULT_JITTER = 0.005

TRACE_MAGIC = b"FFTR"
TRACE_VERSION = 1


@dataclass(frozen=True)
class ScreenTimeline:
    """Refresh schedule of a row-scanned screen.

    ``t_begin[i]`` is the instant frame ``i`` starts painting its top row;
    the paint front then sweeps down linearly over ``periods[i]`` seconds.
    """

    rows: int
    t_frame: float  # nominal seconds per refresh
    t_begin: np.ndarray  # start of each frame
    periods: np.ndarray  # actual duration of each frame

    def __post_init__(self) -> None:
        if self.rows <= 0:
            raise ValueError("rows must be positive")
        if np.any(np.diff(self.t_begin) <= 0):
            raise ValueError("t_begin must be strictly increasing")
        if len(self.t_begin) != len(self.periods):
            raise ValueError("t_begin and periods length mismatch")

    @property
    def n_frames(self) -> int:
        return len(self.t_begin)

    def paint_time(self, frame: int, row_fraction: float) -> float:
        """When the paint front reaches ``row_fraction`` of frame ``frame``."""
        return float(self.t_begin[frame] + row_fraction * self.periods[frame])


@dataclass(frozen=True)
class CameraTimeline:
    """Exposure schedule of a column-scanned rolling-shutter camera."""

    cols: int
    ct_frame: float  # nominal seconds per captured frame
    ct_k: np.ndarray  # exposure start of the first column of each frame
    periods: np.ndarray  # actual duration of each frame
    exposure: float  # per-column integration window, seconds

    def __post_init__(self) -> None:
        if self.cols <= 0:
            raise ValueError("cols must be positive")
        if np.any(np.diff(self.ct_k) <= 0):
            raise ValueError("ct_k must be strictly increasing")
        if not 0.0 < self.exposure <= self.ct_frame:
            raise ValueError("exposure must be in (0, ct_frame]")

    @property
    def n_frames(self) -> int:
        return len(self.ct_k)

    def column_start(self, k: int, col: float) -> float:
        return float(self.ct_k[k] + col * self.periods[k] / self.cols)


def make_screen_timeline(
    rows: int,
    t_frame: float,
    n_frames: int,
    *,
    start: float = 0.0,
    jitter: float = DEFAULT_JITTER,
    rng: np.random.Generator | None = None,
) -> ScreenTimeline:
    periods = np.full(n_frames, t_frame, dtype=float)
    if jitter > 0.0:
        if rng is None:
            raise ValueError("jitter requires an rng")
        periods *= 1.0 + rng.uniform(-jitter, jitter, size=n_frames)
    t_begin = start + np.concatenate(([0.0], np.cumsum(periods[:-1])))
    return ScreenTimeline(rows=rows, t_frame=t_frame, t_begin=t_begin, periods=periods)


def make_camera_timeline(
    cols: int,
    ct_frame: float,
    n_frames: int,
    *,
    start: float = 0.0,
    exposure: float | None = None,
    jitter: float = DEFAULT_JITTER,
    rng: np.random.Generator | None = None,
) -> CameraTimeline:
    if exposure is None:
        exposure = ct_frame / cols * 8.0
    periods = np.full(n_frames, ct_frame, dtype=float)
    if jitter > 0.0:
        if rng is None:
            raise ValueError("jitter requires an rng")
        periods *= 1.0 + rng.uniform(-jitter, jitter, size=n_frames)
    ct_k = start + np.concatenate(([0.0], np.cumsum(periods[:-1])))
    return CameraTimeline(
        cols=cols, ct_frame=ct_frame, ct_k=ct_k, periods=periods, exposure=exposure
    )


@dataclass(frozen=True)
class RoiLocation:
    """Which captured frame, and the column shift within it, covers a time."""

    k: int
    l: float

    def __post_init__(self) -> None:
        if self.l < 0.0:
            raise ValueError("column shift l must be >= 0")


def lighting_area_start(u: float, timeline: ScreenTimeline, frame_index: int) -> float:
    """Instant the screen starts to show a lighting area with top ``u``.

    ``u`` is the normalized row fraction in ``[0, 1]``; the equivalent
    row-count form divides the row index by ``rows``.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u={u} outside [0, 1]")
    if not 0 <= frame_index < timeline.n_frames:
        raise ValueError(f"frame_index {frame_index} out of range")
    return timeline.paint_time(frame_index, u)


def roi_locate(t_u: float, cam: CameraTimeline) -> RoiLocation:
    """Locate the captured frame and column the camera is scanning at ``t_u``.

    Frame ``k`` covers the half-open span ``[ct_k[k], ct_k[k] + period_k)``;
    the shift against its first column is ``cols * (t_u - ct_k[k]) / period_k``.
    """
    k = int(np.searchsorted(cam.ct_k, t_u, side="right")) - 1
    if k < 0 or t_u >= cam.ct_k[k] + cam.periods[k]:
        raise ValueError(f"no covering frame for t_u={t_u}")
    l = cam.cols * (t_u - cam.ct_k[k]) / cam.periods[k]
    return RoiLocation(k=k, l=float(l))


@dataclass
class Frame:
    """One captured frame: linear-RGB pixels plus its exposure schedule."""

    capture_start: float
    period: float  # actual frame duration (column sweep time)
    pixels: np.ndarray  # (height, width, 3) float32 in [0, 1]
    saturated: np.ndarray = field(default=None)  # type: ignore[assignment]
    valid: np.ndarray | None = None  # False where regularization had no data

    def __post_init__(self) -> None:
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError("pixels must be (height, width, 3)")
        if self.saturated is None:
            self.saturated = self.pixels >= 1.0
        if self.saturated.shape != self.pixels.shape:
            raise ValueError("saturated mask shape mismatch")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def column_times(self) -> np.ndarray:
        """Exposure start of every column, left to right."""
        return self.capture_start + np.arange(self.width) * (self.period / self.width)


RadianceFn = Callable[[float], np.ndarray]


def capture(
    radiance_fn: RadianceFn,
    cam: CameraTimeline,
    k: int,
    *,
    switch_times: Sequence[float] = (),
) -> Frame:
    """Capture frame ``k``: box-integrate each column over its exposure.

    ``radiance_fn(t)`` returns the scene radiance grid ``(H, W, 3)`` at time
    ``t`` and is assumed piecewise constant between consecutive
    ``switch_times``, so splitting the exposure window at those instants
    makes the integral exact.  Column ``j`` integrates over
    ``[ct_k + j * period / cols, + exposure]``.
    """
    if not 0 <= k < cam.n_frames:
        raise ValueError(f"frame index {k} out of range")
    start = float(cam.ct_k[k])
    period = float(cam.periods[k])
    switches = np.asarray(sorted(switch_times), dtype=float)

    probe = radiance_fn(start)
    height, width = probe.shape[0], probe.shape[1]
    if width != cam.cols:
        raise ValueError("radiance grid width must equal camera cols")

    cache: dict[int, np.ndarray] = {}

    def segment_radiance(t: float) -> np.ndarray:
        idx = int(np.searchsorted(switches, t, side="right"))
        if idx not in cache:
            cache[idx] = np.asarray(radiance_fn(t), dtype=np.float64)
        return cache[idx]

    pixels = np.empty((height, width, 3), dtype=np.float64)
    col_step = period / cam.cols
    for j in range(cam.cols):
        t0 = start + j * col_step
        t1 = t0 + cam.exposure
        cuts = switches[(switches > t0) & (switches < t1)]
        edges = np.concatenate(([t0], cuts, [t1]))
        acc = np.zeros((height, 3), dtype=np.float64)
        for a, b in zip(edges[:-1], edges[1:]):
            acc += (b - a) * segment_radiance(0.5 * (a + b))[:, j, :]
        pixels[:, j, :] = acc / cam.exposure

    saturated = pixels >= 1.0
    np.clip(pixels, 0.0, 1.0, out=pixels)
    return Frame(
        capture_start=start,
        period=period,
        pixels=pixels.astype(np.float32),
        saturated=saturated,
    )


_TRACE_HEADER = struct.Struct("<4sHHHBI")
_TRACE_FRAME = struct.Struct("<dd")


def encode_trace(frames: Sequence[Frame]) -> bytes:
    """Serialize captured frames to the binary frame-trace format."""
    if not frames:
        return _TRACE_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, 0, 0, 3, 0)
    width, height = frames[0].width, frames[0].height
    out = [_TRACE_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, width, height, 3, len(frames))]
    for fr in frames:
        if fr.width != width or fr.height != height:
            raise ValueError("all frames in a trace must share dimensions")
        out.append(_TRACE_FRAME.pack(fr.capture_start, fr.period))
        out.append(np.ascontiguousarray(fr.pixels, dtype="<f4").tobytes())
    return b"".join(out)


def decode_trace(data: bytes) -> list[Frame]:
    """Parse a frame trace; raises ``ValueError`` on malformed input."""
    if len(data) < _TRACE_HEADER.size:
        raise ValueError("trace shorter than header")
    magic, version, width, height, channels, count = _TRACE_HEADER.unpack_from(data, 0)
    if magic != TRACE_MAGIC:
        raise ValueError("bad trace magic")
    if version != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {version}")
    if channels != 3:
        raise ValueError(f"unsupported channel count {channels}")
    offset = _TRACE_HEADER.size
    payload = height * width * 3 * 4
    frames: list[Frame] = []
    for _ in range(count):
        if len(data) < offset + _TRACE_FRAME.size + payload:
            raise ValueError("truncated trace")
        capture_start, period = _TRACE_FRAME.unpack_from(data, offset)
        offset += _TRACE_FRAME.size
        pixels = np.frombuffer(data[offset : offset + payload], dtype="<f4")
        offset += payload
        pixels = pixels.reshape(height, width, 3).copy()
        frames.append(Frame(capture_start=capture_start, period=period, pixels=pixels))
    if offset != len(data):
        raise ValueError("trailing bytes after last frame")
    return frames


def write_trace(frames: Sequence[Frame], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_trace(frames))


def read_trace(path: str) -> list[Frame]:
    with open(path, "rb") as fh:
        return decode_trace(fh.read())
