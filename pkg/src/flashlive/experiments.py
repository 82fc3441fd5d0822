"""Dataset builders and batch experiments over the simulated lab.

The face classifier trains on anchor-normalized reflection abstractions:
genuine samples come from seeded 3D faces under solid background
illumination, attack samples from the four flat-panel presets replaying
victim renderings.  Scenario presets reproduce the robustness study's
spread of illumination and vibration conditions at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn, timing
from .challenges import PALETTE, generate
from .facecheck import abstract, abstract_to_input, build_net, train_classifier
from .optics import FaceScene, FormFactors, ViewGeometry, midterm_result, pick_anchor
from .scenes import SCREEN_PRESETS, make_face_scene, make_flat_scene
from .session import (
    SceneRenderer,
    SessionConfig,
    Verifier,
    anchor_region,
    regularize_trace,
    simulate_session,
)

#: Background colors usable by the face stage (anything but black).
_LIT_BACKGROUNDS = tuple(i for i, rgb in enumerate(PALETTE) if max(rgb) > 0)


def _static_sample(
    base: np.ndarray,
    landmarks: np.ndarray,
    cfg: SessionConfig,
    rng: np.random.Generator,
    *,
    smear: float = 0.0,
) -> np.ndarray | None:
    """Midterm -> abstraction -> net input from a static radiance grid.

    Deployment midterms come from the columns a rolling-shutter frame
    exposed while the screen was a solid background, so training samples
    get a random contiguous valid-column window to match.
    """
    from .session import _warp_pose

    pixels = base
    if smear > 0:
        pixels = _warp_pose(
            pixels, float(rng.normal(0, smear)), float(rng.normal(0, smear)), float(rng.normal(0, smear * 0.004))
        )
    pixels = pixels + rng.normal(0.0, cfg.noise * cfg.sensor_gain, size=pixels.shape)
    saturated = pixels >= 1.0
    pixels = np.clip(pixels, 0.0, 1.0)
    h, w = pixels.shape[:2]
    invalid = saturated.copy()
    c_lo, c_hi = 0, w
    if rng.uniform() < 0.8:
        width = int(w * rng.uniform(0.35, 1.0))
        c_lo = int(rng.integers(0, w - width + 1))
        c_hi = c_lo + width
        invalid[:, :c_lo, :] = True
        invalid[:, c_hi:, :] = True
    region = anchor_region((h, w), (c_lo, c_hi))
    try:
        anchor = pick_anchor(pixels, rng, invalid=invalid, region=region)
        mid = midterm_result(pixels, anchor, invalid=invalid)
        return abstract_to_input(abstract(mid, landmarks))
    except ValueError:
        return None


def _genuine_radiance(ff: FormFactors, scene: FaceScene, cfg: SessionConfig, color: np.ndarray) -> np.ndarray:
    emission = np.tile(color * cfg.illum_scale, (ff.geometry.strips, 1))
    return (ff.irradiance(emission) + cfg.ambient) * scene.reflectance.values * cfg.sensor_gain


def _panel_radiance(
    panel: FaceScene,
    victim: FaceScene,
    ff_victim: FormFactors,
    ff_panel: FormFactors,
    cfg: SessionConfig,
    color: np.ndarray,
    pixel_block: int,
    brightness: float,
) -> np.ndarray:
    emission = np.tile(color * cfg.illum_scale, (ff_victim.geometry.strips, 1))
    shown = (ff_victim.irradiance(emission) + cfg.ambient) * victim.reflectance.values
    if pixel_block > 1:
        h, w, _ = shown.shape
        hh, ww = h // pixel_block * pixel_block, w // pixel_block * pixel_block
        small = shown[:hh, :ww].reshape(
            hh // pixel_block, pixel_block, ww // pixel_block, pixel_block, 3
        ).mean(axis=(1, 3))
        shown = shown.copy()
        shown[:hh, :ww] = np.repeat(np.repeat(small, pixel_block, axis=0), pixel_block, axis=1)
    spec = np.tensordot(ff_panel.specular, emission, axes=([2], [0]))
    return (shown * brightness + panel.specular_weight * spec) * cfg.sensor_gain


def build_face_dataset(
    cfg: SessionConfig,
    *,
    n_genuine: int,
    n_attack: int,
    seed: int,
    n_persons: int = 10,
    smear: float = 0.3,
) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (n, 20, 20, 3) and labels (0 genuine, 1 attack)."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    geometry = ViewGeometry(strips=cfg.strips)
    persons = [make_face_scene(seed + 31 * i, height=cfg.size, width=cfg.size) for i in range(n_persons)]
    ffs = [FormFactors(p, geometry) for p in persons]

    inputs: list[np.ndarray] = []
    labels: list[int] = []
    while sum(1 for v in labels if v == 0) < n_genuine:
        i = int(rng.integers(0, n_persons))
        color = np.asarray(PALETTE[int(rng.choice(_LIT_BACKGROUNDS))])
        scale_cfg = replace(cfg, illum_scale=cfg.illum_scale * float(rng.uniform(0.8, 1.2)))
        base = _genuine_radiance(ffs[i], persons[i], scale_cfg, color)
        sample = _static_sample(base, persons[i].landmarks, cfg, rng, smear=smear)
        if sample is not None:
            inputs.append(sample)
            labels.append(0)

    panels = []
    for preset in SCREEN_PRESETS:
        for i in range(n_persons):
            victim = persons[i]
            panel = make_flat_scene(seed + 31 * i, preset, height=cfg.size, width=cfg.size)
            panels.append(
                (
                    panel,
                    victim,
                    ffs[i],
                    FormFactors(panel, geometry),
                    max(1, int(round(440 / preset.ppi))),
                    preset.brightness,
                )
            )
    while sum(labels) < n_attack:
        panel, victim, ffv, ffp, block, bright = panels[int(rng.integers(0, len(panels)))]
        color = np.asarray(PALETTE[int(rng.choice(_LIT_BACKGROUNDS))])
        scale_cfg = replace(cfg, illum_scale=cfg.illum_scale * float(rng.uniform(0.8, 1.2)))
        base = _panel_radiance(panel, victim, ffv, ffp, scale_cfg, color, block, bright)
        sample = _static_sample(base, victim.landmarks, cfg, rng, smear=smear)
        if sample is not None:
            inputs.append(sample)
            labels.append(1)
    return np.stack(inputs), np.asarray(labels)


def train_face_net(
    cfg: SessionConfig,
    *,
    seed: int,
    n_train: int = 1200,
    n_holdout: int = 400,
    sgd: nn.SGDConfig | None = None,
):
    """Train the face verifier with a held-out split; returns (net, result)."""
    x, y = build_face_dataset(
        cfg, n_genuine=(n_train + n_holdout) // 2, n_attack=(n_train + n_holdout) // 2, seed=seed
    )
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed) ^ np.uint64(0x5EED)))
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    net = build_net(seed=seed)
    result = train_classifier(
        net,
        x[:n_train],
        y[:n_train],
        config=sgd or nn.SGDConfig(),
        seed=seed,
        holdout=(x[n_train:], y[n_train:]),
    )
    return net, result


@dataclass(frozen=True)
class ScenarioPreset:
    """Desk-scale analogue of one robustness scenario."""

    name: str
    illumination: str  # good | varying | intense | normal | dark
    vibration: str  # none | intermittent | normal | intense
    illum_scale: float
    illum_drift: float
    sensor_gain: float
    vibration_px: float
    vibration_intermittent: bool = False


SCENARIOS: tuple[ScenarioPreset, ...] = (
    ScenarioPreset("scenario-1", "good", "none", 1.0, 0.0, 1.0, 0.0),
    ScenarioPreset("scenario-2", "varying", "intermittent", 1.0, 0.2, 1.0, 1.1, True),
    ScenarioPreset("scenario-3", "intense", "normal", 2.0, 0.0, 1.0, 0.55),
    ScenarioPreset("scenario-4", "normal", "normal", 1.0, 0.0, 1.0, 0.55),
    ScenarioPreset("scenario-5", "normal", "intense", 1.0, 0.0, 1.0, 1.4),
    ScenarioPreset("scenario-6", "dark", "intense", 0.45, 0.0, 1.8, 1.4),
)


def scenario_config(base: SessionConfig, preset: ScenarioPreset) -> SessionConfig:
    return replace(
        base,
        illum_scale=preset.illum_scale,
        illum_drift=preset.illum_drift,
        sensor_gain=preset.sensor_gain,
        vibration=preset.vibration_px,
        vibration_intermittent=preset.vibration_intermittent,
    )


@dataclass
class ScenarioResult:
    preset: ScenarioPreset
    accuracy: float
    n_sessions: int
    vibrations: list[float]
    accepted: list[bool]
    stages: list[str]


def run_scenario(
    preset: ScenarioPreset,
    verifier: Verifier,
    *,
    seed: int,
    n_sessions: int = 200,
    n_persons: int = 4,
) -> ScenarioResult:
    """Genuine sessions under a scenario; accuracy is the accept rate."""
    base_cfg = verifier.cfg
    cfg = scenario_config(base_cfg, preset)
    persons = [make_face_scene(seed + 977 * i, height=cfg.size, width=cfg.size) for i in range(n_persons)]
    renderers = [SceneRenderer(p, cfg) for p in persons]
    accepted: list[bool] = []
    vibrations: list[float] = []
    stages: list[str] = []
    scenario_verifier = Verifier(verifier.models, verifier.net, cfg)
    for i in range(n_sessions):
        session_seed = seed + 6007 * i
        plan = generate(session_seed, cfg.n_challenges)
        scene = persons[i % n_persons]
        trace = simulate_session(scene, plan, cfg, session_seed, renderer=renderers[i % n_persons])
        nu = 0.0
        frames = trace.frames
        if cfg.vibration > 0:
            try:
                frames, nu = regularize_trace(trace, cfg, session_seed)
            except ValueError:
                accepted.append(False)
                vibrations.append(float("nan"))
                stages.append("extraction")
                continue
        verdict = scenario_verifier.verify(
            frames, plan, screen=trace.screen, landmarks=scene.landmarks, seed=session_seed
        )
        accepted.append(verdict.accept)
        vibrations.append(nu)
        stages.append(verdict.stage)
    return ScenarioResult(
        preset=preset,
        accuracy=float(np.mean(accepted)),
        n_sessions=n_sessions,
        vibrations=vibrations,
        accepted=accepted,
        stages=stages,
    )


def vibration_accuracy(
    results: list[ScenarioResult], quantiles: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
) -> list[tuple[float, float, int]]:
    """Accuracy bucketed by normalized vibration intensity quantile."""
    nus, oks = [], []
    for r in results:
        for nu, ok in zip(r.vibrations, r.accepted):
            if np.isfinite(nu):
                nus.append(nu)
                oks.append(ok)
    nus = np.asarray(nus)
    oks = np.asarray(oks)
    if nus.max() > 0:
        norm = nus / nus.max()
    else:
        norm = nus
    out = []
    lo = 0.0
    for q in quantiles:
        sel = (norm > lo) & (norm <= q) if lo > 0 else (norm <= q)
        if sel.any():
            out.append((q, float(oks[sel].mean()), int(sel.sum())))
        else:
            out.append((q, float("nan"), 0))
        lo = q
    return out
