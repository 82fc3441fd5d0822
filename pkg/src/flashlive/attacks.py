"""Adversary simulators: replay, delayed forgery, flat-panel presentation.

The delayed forger watches the verifier's screen, learns each picture as
it is painted, and re-displays forged content on its own (faster) screen.
It cannot interrupt a refresh in progress: content learned at time ``t``
first appears at the forger's next refresh boundary, painted row by row at
the forger's own rate.  That wait is the *delay* the timing check hunts:
camera columns exposed inside the gap saw the un-forged scene.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field

import numpy as np

from .challenges import BELT_HEIGHT, ChallengePlan, generate
from .scanline import lighting_area_start, make_screen_timeline
from .scenes import SCREEN_PRESETS, ScreenPreset, make_face_scene, make_flat_scene
from .session import (
    SceneRenderer,
    SessionConfig,
    SessionTrace,
    SessionVerdict,
    Verifier,
    challenge_emissions,
    screen_events,
    screen_timeline_for,
    simulate_session,
)


class Strategy(enum.Enum):
    REPLAY = "replay"
    DELAYED_FORGERY = "delayed-forgery"
    FLAT_PRESENT = "flat-present"


@dataclass(frozen=True)
class AdversaryConfig:
    camera_fps: float = 240.0
    screen_hz: float = 240.0
    processing_delay: float = 0.0  # seconds per forged frame
    strategy: Strategy = Strategy.DELAYED_FORGERY
    guess_palette: int = 8

    def __post_init__(self) -> None:
        if self.camera_fps <= 0 or self.screen_hz <= 0:
            raise ValueError("adversary rates must be positive")
        if self.processing_delay < 0:
            raise ValueError("processing delay must be >= 0")


@dataclass
class AttackOutcome:
    verdict: SessionVerdict
    shifts: list[float] = field(default_factory=list)  # fraction of ROI width
    detection_stage: str = "none"

    @property
    def rejected(self) -> bool:
        return not self.verdict.accept


def delayed_display_events(
    events: tuple[np.ndarray, np.ndarray, np.ndarray],
    adversary: AdversaryConfig,
    duration: float,
    strips: int,
    rng: np.random.Generator,
    *,
    jitter: float = 0.005,
) -> tuple[tuple[np.ndarray, np.ndarray, np.ndarray], object]:
    """Remap screen events onto the forger's own display schedule.

    A strip change learned at ``t + processing_delay`` is latched into the
    first forger refresh starting at or after that instant and appears when
    that refresh's paint front reaches the strip.  The forger's clock has
    its own random phase and jitter.
    """
    adv_period = 1.0 / adversary.screen_hz
    n_frames = int(np.ceil(duration / adv_period)) + 3
    adv = make_screen_timeline(
        strips,
        adv_period,
        n_frames,
        start=float(rng.uniform(0.0, adv_period)) - adv_period,
        jitter=jitter,
        rng=rng,
    )
    times, strip_ids, colors = events
    out_t = np.empty_like(times)
    for i, (t, s) in enumerate(zip(times, strip_ids)):
        learn = t + adversary.processing_delay
        m = int(np.searchsorted(adv.t_begin, learn, side="left"))
        if m >= adv.n_frames:
            m = adv.n_frames - 1
        out_t[i] = adv.t_begin[m] + (s / strips) * adv.periods[m]
    order = np.argsort(out_t, kind="stable")
    return (out_t[order], strip_ids[order], colors[order]), adv


def realized_shifts(
    plan: ChallengePlan,
    screen,
    display_events: tuple[np.ndarray, np.ndarray, np.ndarray],
    strips: int,
) -> list[float]:
    """Per lighting challenge: forged belt onset lag as ROI-width fraction."""
    times, strip_ids, _ = display_events
    shifts = []
    for ch in plan.lighting():
        t_u = lighting_area_start(ch.u, screen, ch.display_frame)
        roi_seconds = BELT_HEIGHT * float(screen.periods[ch.display_frame])
        top_strip = int(ch.u * strips)
        # the forged display of the belt's top strip for this frame: first
        # event for that strip at or after the genuine paint time
        candidates = times[(strip_ids == top_strip) & (times >= t_u - 1e-12)]
        if len(candidates) == 0:
            shifts.append(float("inf"))
            continue
        shifts.append(float((candidates[0] - t_u) / roi_seconds))
    return shifts


def run_delayed_forgery(
    plan: ChallengePlan,
    adversary: AdversaryConfig,
    verifier: Verifier,
    *,
    seed: int,
    victim_seed: int = 0,
    renderer: SceneRenderer | None = None,
) -> AttackOutcome:
    """Full media-forgery session against the verifier.

    The captured subject is the forged rendering of the victim driven by
    the delayed display schedule; the verifier sees only the frame trace.
    """
    cfg = verifier.cfg
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(0xADF)))
    screen = screen_timeline_for(plan, cfg)
    emissions = challenge_emissions(
        plan, cfg, np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    )
    events = screen_events(emissions, screen)
    duration = float(screen.t_begin[-1] + screen.periods[-1])
    display, _ = delayed_display_events(
        events, adversary, duration, cfg.strips, rng, jitter=cfg.jitter
    )
    shifts = realized_shifts(plan, screen, display, cfg.strips)
    scene = make_face_scene(victim_seed, height=cfg.size, width=cfg.size)
    rend = renderer or SceneRenderer(scene, cfg)
    trace = simulate_session(scene, plan, cfg, seed, renderer=rend, event_override=display)
    verdict = verifier.verify(trace.frames, plan, screen=trace.screen, landmarks=scene.landmarks, seed=seed)
    return AttackOutcome(verdict=verdict, shifts=shifts, detection_stage=verdict.stage)


def run_flat_present(
    plan: ChallengePlan,
    preset: ScreenPreset,
    verifier: Verifier,
    *,
    seed: int,
    victim_seed: int = 0,
    heightfield: np.ndarray | None = None,
    specular_override: float | None = None,
) -> AttackOutcome:
    """Present a victim rendering on a flat panel, timing-perfect.

    The panel mirrors the challenge colors with zero delay (the best case
    for the attacker, and the published face-check evaluation bypassed the
    timing stage), so any rejection is the face stage's doing: the panel
    betrays itself by its flat geometry and the screen's mirror glints.
    """
    cfg = verifier.cfg
    panel = make_flat_scene(
        victim_seed,
        preset,
        height=cfg.size,
        width=cfg.size,
        heightfield=heightfield,
        specular_override=specular_override,
    )
    victim = make_face_scene(victim_seed, height=cfg.size, width=cfg.size)
    renderer = SceneRenderer(
        panel,
        cfg,
        display_victim=victim,
        pixel_block=max(1, int(round(440 / preset.ppi))),
        brightness=preset.brightness,
    )
    trace = simulate_session(panel, plan, cfg, seed, renderer=renderer)
    verdict = verifier.verify(
        trace.frames, plan, screen=trace.screen, landmarks=victim.landmarks, seed=seed
    )
    return AttackOutcome(verdict=verdict, shifts=[0.0], detection_stage=verdict.stage)


def plans_coincide(old: ChallengePlan, new: ChallengePlan) -> bool:
    """Replay succeeds only if every lighting challenge color pair matches."""
    a, b = old.lighting(), new.lighting()
    if len(a) != len(b):
        return False
    return all(
        x.background_color == y.background_color and x.belt_color == y.belt_color
        for x, y in zip(a, b)
    )


def coincidence_rate(colors: int, lighting_challenges: int, trials: int, seed: int) -> float:
    """Monte Carlo probability that two independent plans share all lighting
    colors, restricted to a reduced palette of ``colors`` entries."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    hits = 0
    n = lighting_challenges
    for _ in range(trials):
        a = rng.integers(0, colors, size=n)
        b = rng.integers(0, colors, size=n)
        hits += int(np.array_equal(a, b))
    return hits / trials


def run_replay(
    plan: ChallengePlan,
    recorded_plan: ChallengePlan,
    verifier: Verifier,
    *,
    seed: int,
    victim_seed: int = 0,
    preset: ScreenPreset | None = None,
) -> AttackOutcome:
    """Replay a recorded session's responses against a fresh plan.

    The recording is shown on a flat panel, so its content follows the
    recorded plan's schedule while the verifier checks the current plan.
    Unless every lighting color pair coincides, the belts are wrong and the
    timing stage fires; a forced coincidence still leaves the panel's
    specular signature for the face stage.
    """
    cfg = verifier.cfg
    preset = preset or SCREEN_PRESETS[0]
    panel = make_flat_scene(victim_seed, preset, height=cfg.size, width=cfg.size)
    victim = make_face_scene(victim_seed, height=cfg.size, width=cfg.size)
    renderer = SceneRenderer(
        panel,
        cfg,
        display_victim=victim,
        pixel_block=max(1, int(round(440 / preset.ppi))),
        brightness=preset.brightness,
    )
    # the panel replays the recorded session's screen schedule
    rec_screen = screen_timeline_for(recorded_plan, cfg)
    emissions = challenge_emissions(
        recorded_plan, cfg, np.random.Generator(np.random.Philox(key=np.uint64(recorded_plan.seed)))
    )
    events = screen_events(emissions, rec_screen)
    trace = simulate_session(panel, plan, cfg, seed, renderer=renderer, event_override=events)
    verdict = verifier.verify(
        trace.frames, plan, screen=trace.screen, landmarks=victim.landmarks, seed=seed
    )
    return AttackOutcome(verdict=verdict, shifts=[], detection_stage=verdict.stage)


@dataclass
class SweepRow:
    shift: float
    mean_deviation: float
    std_deviation: float
    criterion: float
    accepted_fraction: float
    n_challenges: int


def sweep_shift(
    verifier: Verifier,
    *,
    seed: int,
    shifts: tuple[float, ...] = tuple(np.round(np.arange(0.0, 0.51, 0.05), 2)),
    sessions_per_shift: int = 12,
    victim_seeds: tuple[int, ...] = (0, 1, 2),
) -> list[SweepRow]:
    """Deviation statistics with forged belts injected at the distillation
    input, displaced by a controlled fraction of the ROI width."""
    cfg = verifier.cfg
    scenes = [make_face_scene(v, height=cfg.size, width=cfg.size) for v in victim_seeds]
    renderers = [SceneRenderer(s, cfg) for s in scenes]
    rows: list[SweepRow] = []
    for shift in shifts:
        devs: list[float] = []
        accepted = 0
        decided = 0
        for i in range(sessions_per_shift):
            session_seed = seed + 104729 * i
            plan = generate(session_seed, cfg.n_challenges)
            trace = simulate_session(
                scenes[i % len(scenes)], plan, cfg, session_seed, renderer=renderers[i % len(renderers)]
            )
            stats, outcomes = verifier.verify_timing(
                trace.frames, plan, trace.screen, inject_shift=float(shift)
            )
            devs.extend(o.deviation for o in outcomes if o.used)
            if stats is not None:
                decided += 1
                accepted += int(stats.accept)
        arr = np.asarray(devs)
        rows.append(
            SweepRow(
                shift=float(shift),
                mean_deviation=float(np.abs(arr).mean()) if len(arr) else float("nan"),
                std_deviation=float(arr.std(ddof=1)) if len(arr) > 1 else float("nan"),
                criterion=float(np.abs(arr.mean()) * arr.std(ddof=1)) if len(arr) > 1 else float("nan"),
                accepted_fraction=accepted / decided if decided else float("nan"),
                n_challenges=len(arr),
            )
        )
    return rows


SWEEP_CSV_HEADER = ["strategy", "shift", "mean_d", "std_d", "criterion", "accepted", "stage"]


def sweep_to_csv(rows: list[SweepRow], strategy: str = "delayed-forgery") -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(SWEEP_CSV_HEADER)
    for r in rows:
        writer.writerow(
            [
                strategy,
                f"{r.shift:.2f}",
                f"{r.mean_deviation:.6f}",
                f"{r.std_deviation:.6f}",
                f"{r.criterion:.6f}",
                f"{r.accepted_fraction:.4f}",
                "timing",
            ]
        )
    return buf.getvalue()
