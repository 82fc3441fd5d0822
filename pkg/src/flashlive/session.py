"""End-to-end session simulation and verification.

A session shows ``n`` challenges on a 60 Hz screen while a 120 fps
rolling-shutter camera watches the subject.  The camera runs at twice the
screen rate so that, for every lighting challenge, the previous captured
frame saw the screen while it was still a solid background: that frame is
the pixelwise reference the ROI ratio divides by.  Screen-clock jitter is
regenerated from the session seed, which is how the verifier reconstructs
the device's screen schedule from the plan alone; camera timing travels
inside the frame trace.  All timestamps are device-local, so a device
clock offset shifts screen and camera together and cancels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import timing
from .challenges import BELT_HEIGHT, PALETTE, Challenge, ChallengeKind, ChallengePlan
from .extraction import (
    FaceRect,
    SyntheticDetector,
    SyntheticTracker,
    extract_faces,
    fit_transform,
    regularize,
    vibration_intensity,
)
from .facecheck import abstract, abstract_to_input, genuine_probability
from .optics import FaceScene, FormFactors, ViewGeometry, midterm_result, pick_anchor
from .scanline import (
    CameraTimeline,
    Frame,
    ScreenTimeline,
    lighting_area_start,
    make_camera_timeline,
    make_screen_timeline,
    roi_locate,
)

_SCREEN_KEY = 0x5C12EE17  # mixes with the plan seed for screen-clock jitter


@dataclass(frozen=True)
class SessionConfig:
    n_challenges: int = 20
    th: float = -5.0
    screen_hz: float = 60.0
    camera_fps: float = 120.0
    size: int = 64  # face grid = captured frame size
    strips: int = 64
    jitter: float = 0.005
    exposure_columns: float = 8.0
    noise: float = 0.003
    illum_scale: float = 1.0
    illum_drift: float = 0.0  # session-level brightness wander (fraction)
    ambient: float = 0.02
    sensor_gain: float = 1.0
    vibration: float = 0.0  # per-frame pose jitter, pixels
    vibration_intermittent: bool = False  # jitter arrives in bursts
    min_roi_coverage: float = 0.5
    min_amplitude: float = 0.05  # folded-profile floor for a usable challenge
    face_frames: int = 5  # background responses scored by the face stage

    @property
    def t_screen(self) -> float:
        return 1.0 / self.screen_hz

    @property
    def t_camera(self) -> float:
        return 1.0 / self.camera_fps


@dataclass
class SessionTrace:
    """Captured frames plus the simulation-side ground truth."""

    frames: list[Frame]
    camera: CameraTimeline
    screen: ScreenTimeline
    plan: ChallengePlan
    poses: list[tuple[float, float, float]] = field(default_factory=list)
    realized_shifts: list[float] = field(default_factory=list)

    def camera_timeline(self) -> CameraTimeline:
        return self.camera


def screen_timeline_for(plan: ChallengePlan, cfg: SessionConfig) -> ScreenTimeline:
    """Device screen schedule; jitter keyed by the plan seed so the server
    regenerates the identical timeline."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(plan.seed) ^ np.uint64(_SCREEN_KEY)))
    return make_screen_timeline(
        cfg.strips, cfg.t_screen, plan.n, start=0.0, jitter=cfg.jitter, rng=rng
    )


def challenge_emissions(plan: ChallengePlan, cfg: SessionConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-challenge per-strip emission colors, (n, strips, 3).

    Illumination drift models slowly varying ambient conditions: the scale
    wanders sinusoidally over the session, so adjacent challenges differ by
    only a few percent even when the swing over the session is large.
    """
    strips = cfg.strips
    out = np.zeros((plan.n, strips, 3))
    edges = np.arange(strips)
    phase = float(rng.uniform(0, 2 * np.pi)) if cfg.illum_drift > 0 else 0.0
    for i, ch in enumerate(plan.sequence):
        scale = cfg.illum_scale
        if cfg.illum_drift > 0:
            scale *= 1.0 + cfg.illum_drift * math.sin(phase + 1.5 * np.pi * i / plan.n)
        bg = np.asarray(ch.background_rgb) * scale
        rows = np.tile(bg, (strips, 1))
        if ch.kind is ChallengeKind.LIGHTING:
            belt = np.asarray(ch.belt_rgb) * scale
            lo, hi = ch.u * strips, ch.b_low * strips
            frac = np.clip(np.minimum(hi, edges + 1) - np.maximum(lo, edges), 0.0, 1.0)
            rows = rows * (1 - frac[:, None]) + belt[None, :] * frac[:, None]
        out[i] = rows
    return out


def screen_events(
    emissions: np.ndarray, screen: ScreenTimeline
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Strip-paint events: (times, strips, colors), color-change only."""
    n, strips, _ = emissions.shape
    times, strip_ids, colors = [], [], []
    current = np.full((strips, 3), np.nan)
    for i in range(n):
        t0 = screen.t_begin[i]
        period = screen.periods[i]
        for s in range(strips):
            c = emissions[i, s]
            if np.array_equal(c, current[s]):
                continue
            times.append(t0 + s / strips * period)
            strip_ids.append(s)
            colors.append(c.copy())
            current[s] = c
    order = np.argsort(times, kind="stable")
    return (
        np.asarray(times)[order],
        np.asarray(strip_ids)[order],
        np.asarray(colors)[order],
    )


class SceneRenderer:
    """Incremental radiance of a subject under the event-driven screen.

    Diffuse scenes reflect the screen through the form-factor kernel; a
    glossy flat panel additionally mirrors the screen through its Blinn
    lobe.  ``display`` mode models a forgery panel: it emits a pixelated
    rendering of what a genuine victim face would reflect, plus the
    specular reflection of the verifier's own screen off the glass.
    """

    def __init__(
        self,
        scene: FaceScene,
        cfg: SessionConfig,
        *,
        geometry: ViewGeometry | None = None,
        display_victim: FaceScene | None = None,
        pixel_block: int = 1,
        brightness: float = 1.0,
    ) -> None:
        self.cfg = cfg
        self.geometry = geometry or ViewGeometry(strips=cfg.strips)
        self.scene = scene
        self.display_victim = display_victim
        self.pixel_block = pixel_block
        self.brightness = brightness
        if display_victim is not None:
            self.ff_victim = FormFactors(display_victim, self.geometry)
            self.ff_panel = FormFactors(scene, self.geometry)
            self._victim_radiance = cfg.ambient * display_victim.reflectance.values.copy()
            self._spec = np.zeros_like(self._victim_radiance)
        else:
            self.ff = FormFactors(scene, self.geometry)
        self._emission = np.zeros((self.geometry.strips, 3))
        self._radiance = self._compose_base()

    def _compose_base(self) -> np.ndarray:
        if self.display_victim is not None:
            return self._pixelate(self._victim_radiance) * self.brightness + self._spec
        return self.cfg.ambient * self.scene.reflectance.values.copy()

    def _pixelate(self, img: np.ndarray) -> np.ndarray:
        b = self.pixel_block
        if b <= 1:
            return img.copy()
        h, w, _ = img.shape
        hh, ww = h // b * b, w // b * b
        small = img[:hh, :ww].reshape(hh // b, b, ww // b, b, 3).mean(axis=(1, 3))
        out = np.repeat(np.repeat(small, b, axis=0), b, axis=1)
        full = img.copy()
        full[:hh, :ww] = out
        return full

    def apply_event(self, strip: int, color: np.ndarray) -> None:
        delta = color - self._emission[strip]
        if not np.any(delta):
            return
        self._emission[strip] = color
        if self.display_victim is not None:
            self._victim_radiance += (
                self.ff_victim.k[:, :, strip, None]
                * self.display_victim.reflectance.values
                * delta[None, None, :]
            )
            if self.scene.specular_weight > 0:
                self._spec += (
                    self.scene.specular_weight
                    * self.ff_panel.specular[:, :, strip, None]
                    * delta[None, None, :]
                )
            self._radiance = self._compose_base()
        else:
            upd = self.ff.k[:, :, strip, None] * self.scene.reflectance.values * delta[None, None, :]
            if self.scene.specular_weight > 0:
                upd += (
                    self.scene.specular_weight
                    * self.ff.specular[:, :, strip, None]
                    * delta[None, None, :]
                )
            self._radiance += upd

    @property
    def radiance(self) -> np.ndarray:
        return self._radiance


def render_session(
    renderer: SceneRenderer,
    events: tuple[np.ndarray, np.ndarray, np.ndarray],
    camera: CameraTimeline,
    cfg: SessionConfig,
    rng: np.random.Generator,
    *,
    poses: list[tuple[float, float, float]] | None = None,
) -> list[Frame]:
    """Integrate every captured frame against the event-driven radiance."""
    times, strip_ids, colors = events
    frames: list[Frame] = []
    cursor = 0
    n_events = len(times)
    cols = camera.cols
    for k in range(camera.n_frames):
        start = float(camera.ct_k[k])
        period = float(camera.periods[k])
        col_t0 = start + np.arange(cols) * period / cols
        window_end = float(col_t0[-1] + camera.exposure)

        # advance the shared state to the frame start
        while cursor < n_events and times[cursor] <= start:
            renderer.apply_event(int(strip_ids[cursor]), colors[cursor])
            cursor += 1

        # events inside this frame are replayed on a scratch cursor; the
        # exposure tail overlaps the next frame's start, so the shared
        # state must not run ahead
        local = cursor
        edges = [start]
        while local < n_events and times[local] < window_end:
            edges.append(float(times[local]))
            local += 1
        edges.append(window_end)

        acc = np.zeros((renderer.radiance.shape[0], cols, 3))
        snapshot_needed = local > cursor
        saved = (renderer._emission.copy(), renderer._radiance.copy()) if snapshot_needed else None
        if renderer.display_victim is not None and snapshot_needed:
            saved_extra = (renderer._victim_radiance.copy(), renderer._spec.copy())
        scratch = cursor
        for a, b in zip(edges[:-1], edges[1:]):
            if b <= a:
                continue
            while scratch < n_events and times[scratch] <= a:
                renderer.apply_event(int(strip_ids[scratch]), colors[scratch])
                scratch += 1
            overlap = np.clip(
                np.minimum(b, col_t0 + camera.exposure) - np.maximum(a, col_t0), 0.0, None
            )
            touched = overlap > 0
            if touched.any():
                acc[:, touched, :] += renderer.radiance[:, touched, :] * (
                    overlap[touched] / camera.exposure
                )[None, :, None]
        if saved is not None:
            renderer._emission, renderer._radiance = saved
            if renderer.display_victim is not None:
                renderer._victim_radiance, renderer._spec = saved_extra

        pixels = acc * cfg.sensor_gain
        if poses is not None:
            dx, dy, rot = poses[k]
            if dx or dy or rot:
                pixels = _warp_pose(pixels, dx, dy, rot)
        if cfg.noise > 0:
            pixels = pixels + rng.normal(0.0, cfg.noise * cfg.sensor_gain, size=pixels.shape)
        saturated = pixels >= 1.0
        pixels = np.clip(pixels, 0.0, 1.0)
        frames.append(
            Frame(
                capture_start=start,
                period=period,
                pixels=pixels.astype(np.float32),
                saturated=saturated,
            )
        )
    return frames


def _warp_pose(pixels: np.ndarray, dx: float, dy: float, rot: float) -> np.ndarray:
    h, w = pixels.shape[:2]
    c, s = math.cos(rot), math.sin(rot)
    center = np.array([h / 2, w / 2])
    mat = np.array([[c, -s], [s, c]])
    offset = center - mat @ center + np.array([dy, dx])
    out = np.empty_like(pixels)
    for ch in range(3):
        out[:, :, ch] = ndimage.affine_transform(
            pixels[:, :, ch], mat, offset=offset, order=1, mode="nearest"
        )
    return out


def draw_poses(cfg: SessionConfig, n_frames: int, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Per-frame subject pose: a session-level hold offset plus jitter.

    The base offset keeps the fitted transform parameters away from zero
    mean, as with a real handheld device; the vibration metric divides by
    parameter means and needs that."""
    if cfg.vibration <= 0:
        return [(0.0, 0.0, 0.0)] * n_frames
    sigma = cfg.vibration
    base = (
        float(rng.choice([-1, 1]) * rng.uniform(1.5, 3.5)),
        float(rng.choice([-1, 1]) * rng.uniform(1.5, 3.5)),
        float(rng.choice([-1, 1]) * rng.uniform(0.012, 0.03)),
    )
    burst = (
        rng.uniform(size=n_frames) < 0.5
        if cfg.vibration_intermittent
        else np.ones(n_frames, dtype=bool)
    )
    poses = []
    for k in range(n_frames):
        s = sigma if burst[k] else 0.0
        poses.append(
            (
                base[0] + float(rng.normal(0, s)),
                base[1] + float(rng.normal(0, s)),
                base[2] + float(rng.normal(0, s * 0.004)),
            )
        )
    return poses


def simulate_session(
    scene: FaceScene,
    plan: ChallengePlan,
    cfg: SessionConfig,
    seed: int,
    *,
    renderer: SceneRenderer | None = None,
    event_override: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    realized_shifts: list[float] | None = None,
) -> SessionTrace:
    """Simulate a device running the plan against a subject."""
    ss = np.random.SeedSequence(entropy=seed)
    rng_cam, rng_drift, rng_noise, rng_pose = [
        np.random.Generator(np.random.Philox(s)) for s in ss.spawn(4)
    ]
    screen = screen_timeline_for(plan, cfg)
    duration = float(screen.t_begin[-1] + screen.periods[-1])
    n_cap = int(math.ceil(duration / cfg.t_camera)) + 1
    camera = make_camera_timeline(
        cfg.size,
        cfg.t_camera,
        n_cap,
        start=float(rng_cam.uniform(0.0, cfg.t_camera)) - cfg.t_camera,
        exposure=cfg.exposure_columns * cfg.t_camera / cfg.size,
        jitter=cfg.jitter,
        rng=rng_cam,
    )
    emissions = challenge_emissions(plan, cfg, rng_drift)
    events = event_override if event_override is not None else screen_events(emissions, screen)
    rend = renderer or SceneRenderer(scene, cfg)
    poses = draw_poses(cfg, n_cap, rng_pose)
    frames = render_session(rend, events, camera, cfg, rng_noise, poses=poses)
    return SessionTrace(
        frames=frames,
        camera=camera,
        screen=screen,
        plan=plan,
        poses=poses,
        realized_shifts=realized_shifts or [],
    )


def anchor_region(
    shape: tuple[int, int], col_window: tuple[int, int]
) -> tuple[int, int, int, int]:
    """Anchor sampling box: central face area within the usable columns.

    Peripheral pixels sit on the head's rolloff where the midterm ratio is
    extreme, so anchors come from the middle of the face; the box widens
    only when the usable window misses the center entirely.
    """
    h, w = shape
    c_lo, c_hi = col_window
    r0, r1 = int(h * 0.35), int(h * 0.65)
    x0 = max(c_lo, int(w * 0.35))
    x1 = min(c_hi, int(w * 0.65))
    if x1 - x0 < 3:  # off-center window: take its middle third
        span = c_hi - c_lo
        x0 = c_lo + span // 3
        x1 = max(x0 + 1, c_hi - span // 3)
    return (r0, r1, x0, x1)


def informative_channels(ch: Challenge) -> np.ndarray:
    """Channels where the background is lit and the belt changes it."""
    bg = np.asarray(ch.background_rgb)
    belt = np.asarray(ch.belt_rgb)
    return (bg > 0.5) & (belt < 0.5)


@dataclass
class ChallengeOutcome:
    index: int
    used: bool
    reason: str = ""
    estimate: float = float("nan")
    truth: float = float("nan")
    deviation: float = float("nan")


@dataclass
class SessionVerdict:
    accept: bool
    stage: str  # "none" when accepted
    mean_d: float = float("nan")
    std_d: float = float("nan")
    face_score: float = float("nan")
    stats: timing.TimingStats | None = None
    outcomes: list[ChallengeOutcome] = field(default_factory=list)
    n_used: int = 0
    vibration: float = float("nan")


class Verifier:
    """Server-side verification bundle: timing models plus the face net."""

    def __init__(self, models: dict[int, timing.RegressionModel], net, cfg: SessionConfig):
        self.models = models
        self.net = net
        self.cfg = cfg

    # -- timing stage ------------------------------------------------------

    def challenge_window(
        self, trace_camera: CameraTimeline, screen: ScreenTimeline, ch: Challenge
    ):
        """ROI frame index, window start column and width for a challenge."""
        d = ch.display_frame
        t_u = lighting_area_start(ch.u, screen, d)
        loc = roi_locate(t_u, trace_camera)
        period_cam = float(trace_camera.periods[loc.k])
        width = BELT_HEIGHT * float(screen.periods[d]) / period_cam * trace_camera.cols
        return loc, width, t_u

    def _column_weights(self, width: float, n_cols: int, exposure_cols: float) -> np.ndarray:
        # expected painted fraction of the belt at each window column; the
        # box exposure effectively samples half an exposure later
        psi = (np.arange(n_cols) + 0.5 + exposure_cols / 2) / width
        return np.clip(psi, 0.0, 1.0)

    def _reference_dirty_rows(
        self, screen: ScreenTimeline, ch: Challenge, ref: Frame, cols: np.ndarray
    ) -> np.ndarray:
        """Reference cells the previous picture had not yet repainted.

        The background response straddles the previous challenge switch:
        any reference column exposed before the background challenge began
        still shows the picture before it below the paint front.  Those
        rows cannot serve as a reference and are excluded (with a safety
        margin for jitter and the exposure window).
        """
        d = ch.display_frame
        rows = ref.pixels.shape[0]
        if d < 1:
            return np.zeros((rows, len(cols)), dtype=bool)
        t_bg = float(screen.t_begin[d - 1])
        period_bg = float(screen.periods[d - 1])
        width = ref.pixels.shape[1]
        col_end = ref.capture_start + (cols + self.cfg.exposure_columns) * ref.period / width
        front = np.clip((col_end - t_bg) / period_bg - 0.03, 0.0, 1.0)
        row_frac = (np.arange(rows) + 0.5) / rows
        return row_frac[:, None] > front[None, :]

    def _stitched_segments(
        self,
        frames: list[Frame],
        screen: ScreenTimeline,
        ch: Challenge,
        loc,
        width: float,
        shift_cols: float,
    ) -> list[timing.DistilledRoi]:
        """ROI ratio segments in believed scan coordinates.

        The paint window may continue past the covering frame's last
        column; believed columns then wrap into the next captured frame
        (where the frame's own part bands apply).  Injected shifts pull the
        sampled content earlier than the verifier believes it to be.
        """
        cfg = self.cfg
        cols = frames[0].width
        w_int = int(round(width))
        ib0 = int(round(loc.l))
        believed = np.arange(ib0, ib0 + w_int)
        actual = np.round(believed - shift_cols).astype(int)
        frame_b = loc.k + believed // cols
        frame_a = loc.k + np.floor_divide(actual, cols)
        col_b = believed % cols
        col_a = actual % cols
        psi = np.clip(
            (believed - loc.l + 0.5 + cfg.exposure_columns / 2) / width, 0.0, 1.0
        )
        ok = (frame_a >= 1) & (frame_a < len(frames)) & (frame_b >= loc.k)
        segments: list[timing.DistilledRoi] = []
        if not ok.any():
            return segments
        # contiguous runs sharing (believed frame, actual frame)
        run_key = frame_b * 1000 + frame_a
        run_key = np.where(ok, run_key, -1)
        boundaries = [0] + [i for i in range(1, w_int) if run_key[i] != run_key[i - 1]] + [w_int]
        mask = informative_channels(ch)
        for s0, s1 in zip(boundaries[:-1], boundaries[1:]):
            if not ok[s0] or s1 <= s0:
                continue
            fa = int(frame_a[s0])
            light = frames[fa]
            ref = frames[fa - 1]
            ca = col_a[s0:s1]
            dirty = self._reference_dirty_rows(screen, ch, ref, ca)
            exclude = np.zeros_like(light.pixels, dtype=bool)
            exclude[:, ca, :] = dirty[:, :, None]
            try:
                roi = timing.distill(
                    light.pixels,
                    ref.pixels,
                    int(ca[0]),
                    s1 - s0,
                    lighting_saturated=light.saturated,
                    background_saturated=ref.saturated,
                    reference_exclude=exclude,
                    channel_mask=mask,
                    column_weight=psi[s0:s1],
                    max_excluded=1.0,
                )
            except ValueError:
                continue
            b0 = int(col_b[s0])
            b1 = b0 + (s1 - s0)
            spans = tuple(
                float(
                    max(
                        0,
                        min(b1, timing.part_bounds(cols, p)[1])
                        - max(b0, timing.part_bounds(cols, p)[0]),
                    )
                )
                for p in range(1, timing.N_PARTS + 1)
            )
            segments.append(
                timing.DistilledRoi(
                    columns=(b0, b1),
                    values=roi.values,
                    part_spans=spans,  # type: ignore[arg-type]
                    channel_mask=roi.channel_mask,
                    column_weight=psi[s0:s1],
                    frame_width=cols,
                )
            )
        return segments

    def verify_timing(
        self,
        frames: list[Frame],
        plan: ChallengePlan,
        screen: ScreenTimeline,
        *,
        inject_shift: float = 0.0,
    ) -> tuple[timing.TimingStats | None, list[ChallengeOutcome]]:
        cfg = self.cfg
        cam = CameraTimeline(
            cols=frames[0].width,
            ct_frame=cfg.t_camera,
            ct_k=np.array([f.capture_start for f in frames]),
            periods=np.array([f.period for f in frames]),
            exposure=cfg.exposure_columns * cfg.t_camera / frames[0].width,
        )
        outcomes: list[ChallengeOutcome] = []
        deviations: list[float] = []
        for ch in plan.lighting():
            out = ChallengeOutcome(index=ch.display_frame, used=False)
            outcomes.append(out)
            mask = informative_channels(ch)
            if not mask.any():
                out.reason = "pair-blind"
                continue
            try:
                loc, width, t_u = self.challenge_window(cam, screen, ch)
            except ValueError:
                out.reason = "no covering frame"
                continue
            if loc.k < 1:
                out.reason = "no reference frame"
                continue
            segments = self._stitched_segments(
                frames, screen, ch, loc, width, inject_shift * width
            )
            usable = sum(seg.values.shape[1] for seg in segments)
            if usable < cfg.min_roi_coverage * width:
                out.reason = "window unusable"
                continue
            excluded = np.concatenate(
                [
                    np.isnan(seg.values[:, :, seg.channel_mask]).reshape(-1)
                    for seg in segments
                ]
            )
            if excluded.mean() > 0.5:
                out.reason = "ROI unusable: too many excluded pixels"
                continue
            estimates, widths, amplitudes = [], [], []
            for seg in segments:
                for part in range(1, timing.N_PARTS + 1):
                    if part not in self.models or seg.part_spans[part - 1] <= 0:
                        continue
                    try:
                        feat = timing.featurize(seg, part)
                    except ValueError:
                        continue
                    estimates.append(self.models[part].predict(feat))
                    widths.append(seg.part_spans[part - 1])
                    amplitudes.append(float(np.max(np.abs(feat - 1.0))))
            if not estimates:
                out.reason = "no part overlap"
                continue
            if max(amplitudes) < cfg.min_amplitude:
                out.reason = "no signal"
                continue
            estimate = timing.gather(np.array(estimates), np.array(widths))
            truth = (ch.u + ch.b_low) / 2
            out.used = True
            out.estimate = estimate
            out.truth = truth
            out.deviation = estimate - truth
            deviations.append(out.deviation)
        if len(deviations) < 2:
            return None, outcomes
        return timing.decide(np.array(deviations), self.cfg.th), outcomes

    # -- face stage --------------------------------------------------------

    def _solid_background_columns(
        self,
        frames: list[Frame],
        plan: ChallengePlan,
        screen: ScreenTimeline,
        pair_index: int,
    ) -> tuple[int, np.ndarray] | None:
        """Frame and column mask exposed entirely under a solid background.

        The screen shows pure background from the end of the background
        challenge's own paint sweep until the paired belt starts painting.
        """
        bg = plan.sequence[pair_index]
        ch = plan.sequence[pair_index + 1]
        d = ch.display_frame
        window_start = float(screen.t_begin[d])
        window_end = lighting_area_start(ch.u, screen, d)
        if window_end - window_start <= 0:
            return None
        best: tuple[int, np.ndarray] | None = None
        for k, frame in enumerate(frames):
            cols = frame.pixels.shape[1]
            t0 = frame.capture_start + np.arange(cols) * frame.period / cols
            exposure = self.cfg.exposure_columns * frame.period / cols
            ok = (t0 >= window_start) & (t0 + exposure <= window_end)
            if best is None or ok.sum() > best[1].sum():
                best = (k, ok)
        if best is None or best[1].sum() < 0.35 * frames[0].pixels.shape[1]:
            return None
        return best

    def verify_face(
        self,
        frames: list[Frame],
        plan: ChallengePlan,
        screen: ScreenTimeline,
        landmarks: np.ndarray,
        *,
        seed: int = 0,
    ) -> tuple[float, int]:
        """Mean genuine probability over sampled background responses."""
        rng = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(0xFACE5C0)))
        inputs = []
        for i, ch in enumerate(plan.sequence):
            if len(inputs) >= self.cfg.face_frames:
                break
            if ch.kind is not ChallengeKind.BACKGROUND or i + 1 >= plan.n:
                continue
            if max(ch.background_rgb) <= 0:  # black background: nothing to see
                continue
            picked = self._solid_background_columns(frames, plan, screen, i)
            if picked is None:
                continue
            k, col_mask = picked
            frame = frames[k]
            invalid = np.broadcast_to(~col_mask[None, :, None], frame.pixels.shape)
            invalid = invalid | frame.saturated
            if frame.valid is not None:
                invalid = invalid | ~frame.valid[:, :, None]
            grid = np.asarray(frame.pixels, dtype=float)
            usable_cols = np.nonzero(col_mask)[0]
            region = anchor_region(grid.shape[:2], (int(usable_cols.min()), int(usable_cols.max()) + 1))
            try:
                anchor = pick_anchor(grid, rng, invalid=invalid, region=region)
                mid = midterm_result(grid, anchor, invalid=invalid)
                inputs.append(abstract_to_input(abstract(mid, landmarks)))
            except ValueError:
                continue
        if not inputs:
            return 0.0, 0
        probs = genuine_probability(self.net, np.stack(inputs))
        # median across responses: one degraded sample must not sink a session
        return float(np.median(probs)), len(inputs)

    # -- full pipeline -----------------------------------------------------

    def verify(
        self,
        frames: list[Frame],
        plan: ChallengePlan,
        *,
        screen: ScreenTimeline | None = None,
        landmarks: np.ndarray | None = None,
        seed: int = 0,
    ) -> SessionVerdict:
        cfg = self.cfg
        screen = screen if screen is not None else screen_timeline_for(plan, cfg)
        stats, outcomes = self.verify_timing(frames, plan, screen)
        n_used = sum(1 for o in outcomes if o.used)
        if stats is None:
            return SessionVerdict(
                accept=False, stage="timing", outcomes=outcomes, n_used=n_used
            )
        if not stats.accept:
            return SessionVerdict(
                accept=False,
                stage="timing",
                mean_d=stats.mean_d,
                std_d=stats.std_d,
                stats=stats,
                outcomes=outcomes,
                n_used=n_used,
            )
        if self.net is None:  # timing-only verifier (no face model loaded)
            return SessionVerdict(
                accept=True,
                stage="none",
                mean_d=stats.mean_d,
                std_d=stats.std_d,
                stats=stats,
                outcomes=outcomes,
                n_used=n_used,
            )
        lm = landmarks if landmarks is not None else _default_landmarks(frames[0].height, frames[0].width)
        score, n_faces = self.verify_face(frames, plan, screen, lm, seed=seed)
        if n_faces == 0 or score < 0.5:
            return SessionVerdict(
                accept=False,
                stage="face",
                mean_d=stats.mean_d,
                std_d=stats.std_d,
                face_score=score,
                stats=stats,
                outcomes=outcomes,
                n_used=n_used,
            )
        # expression stage: external capability, modeled as always-pass
        return SessionVerdict(
            accept=True,
            stage="none",
            mean_d=stats.mean_d,
            std_d=stats.std_d,
            face_score=score,
            stats=stats,
            outcomes=outcomes,
            n_used=n_used,
        )


def _default_landmarks(height: int, width: int) -> np.ndarray:
    from .scenes import landmark_template

    return landmark_template(height, width)


def collect_training_samples(
    scenes: list[FaceScene],
    cfg: SessionConfig,
    n_sessions: int,
    seed: int,
    *,
    renderers: list[SceneRenderer] | None = None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-part (features, belt-center labels) from genuine sessions."""
    from .challenges import generate

    rends = renderers or [SceneRenderer(s, cfg) for s in scenes]
    shadow = Verifier({}, net=None, cfg=cfg)
    collected: dict[int, tuple[list[np.ndarray], list[float]]] = {
        p: ([], []) for p in range(1, timing.N_PARTS + 1)
    }
    for s in range(n_sessions):
        session_seed = seed + 7919 * s
        plan = generate(session_seed, cfg.n_challenges)
        rend = rends[s % len(rends)]
        trace = simulate_session(scenes[s % len(scenes)], plan, cfg, session_seed, renderer=rend)
        cam = CameraTimeline(
            cols=trace.frames[0].width,
            ct_frame=cfg.t_camera,
            ct_k=np.array([f.capture_start for f in trace.frames]),
            periods=np.array([f.period for f in trace.frames]),
            exposure=cfg.exposure_columns * cfg.t_camera / trace.frames[0].width,
        )
        for ch in plan.lighting():
            if not informative_channels(ch).any():
                continue
            try:
                loc, width, _ = shadow.challenge_window(cam, trace.screen, ch)
            except ValueError:
                continue
            if loc.k < 1:
                continue
            label = (ch.u + ch.b_low) / 2
            for seg in shadow._stitched_segments(trace.frames, trace.screen, ch, loc, width, 0.0):
                for part in range(1, timing.N_PARTS + 1):
                    if seg.part_spans[part - 1] <= 0:
                        continue
                    try:
                        feat = timing.featurize(seg, part)
                    except ValueError:
                        continue
                    collected[part][0].append(feat)
                    collected[part][1].append(label)
    return {
        p: (np.asarray(x), np.asarray(y))
        for p, (x, y) in collected.items()
        if len(x) > 0
    }


def train_timing_models(
    cfg: SessionConfig,
    seed: int,
    *,
    n_sessions: int = 60,
    n_scenes: int = 4,
    lam: float = timing.RIDGE_LAMBDA,
    min_samples: int = 100,
) -> tuple[dict[int, timing.RegressionModel], timing.TrainingReport]:
    """Train the four part models on seeded genuine sessions."""
    from .scenes import make_face_scene

    scenes = [make_face_scene(seed + 31 * i, height=cfg.size, width=cfg.size) for i in range(n_scenes)]
    samples = collect_training_samples(scenes, cfg, n_sessions, seed)
    return timing.train(samples, lam=lam, min_samples=min_samples)


# -- extraction-aware preprocessing (scenario experiments) -----------------


def regularize_trace(
    trace: SessionTrace,
    cfg: SessionConfig,
    seed: int,
    *,
    landmark_noise: float = 0.15,
) -> tuple[list[Frame], float, np.ndarray]:
    """Run the extraction pipeline over a trace.

    Returns the aligned frames, the vibration intensity of the fitted
    transform sequence, and the aligned landmark set (the session-mean
    landmarks in output coordinates, which downstream stages use to locate
    the face)."""
    n = len(trace.frames)
    h, w = trace.frames[0].height, trace.frames[0].width
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(0x7C4)))

    base_lm = _default_landmarks(h, w)
    true_rects = []
    true_lms = []
    for dx, dy, rot in trace.poses:
        c, s = math.cos(rot), math.sin(rot)
        center = np.array([w / 2, h / 2])
        pts = (np.array([[c, -s], [s, c]]) @ (base_lm - center).T).T + center + np.array([dx, dy])
        true_lms.append(pts)
        x0, y0 = pts.min(axis=0)
        x1, y1 = pts.max(axis=0)
        true_rects.append(FaceRect(float(x0), float(y0), float(x1 - x0), float(y1 - y0), 1.0))

    tracker = SyntheticTracker(
        true_rects, noise=0.3 + cfg.vibration * 0.2, rng=rng, motion_scale=0.1 * cfg.vibration
    )
    detector = SyntheticDetector(true_rects, noise=0.15, rng=rng)
    rects = extract_faces(n, tracker, detector)

    noisy_lms = [
        lm + rng.normal(0, landmark_noise * (1 + cfg.vibration), size=lm.shape) for lm in true_lms
    ]
    usable = [i for i in range(n) if rects[i] is not None]
    if len(usable) < 2:
        raise ValueError("extraction lost the face")
    l_mean = np.mean([noisy_lms[i] for i in usable], axis=0)

    transforms = []
    aligned: list[Frame] = []
    for i in range(n):
        if i not in usable:
            aligned.append(trace.frames[i])
            continue
        t = fit_transform(noisy_lms[i], l_mean)
        transforms.append(t)
        pixels, valid = regularize(
            np.asarray(trace.frames[i].pixels, dtype=float), t, out_size=(w, h)
        )
        sat, _ = regularize(
            np.asarray(trace.frames[i].saturated, dtype=float), t, out_size=(w, h)
        )
        fr = Frame(
            capture_start=trace.frames[i].capture_start,
            period=trace.frames[i].period,
            pixels=np.where(valid[:, :, None], pixels, np.nan).astype(np.float32),
            saturated=(sat > 0.25) | ~valid[:, :, None],
            valid=valid,
        )
        aligned.append(fr)
    nu = vibration_intensity(transforms).nu if len(transforms) >= 2 else 0.0
    return aligned, float(nu)
