"""Scratch: inspect genuine session signal and residuals (not shipped)."""
import time

import numpy as np

from flashlive import timing
from flashlive.challenges import generate
from flashlive.scenes import make_face_scene
from flashlive.session import (
    SceneRenderer,
    SessionConfig,
    SessionTrace,
    Verifier,
    collect_training_samples,
    simulate_session,
    train_timing_models,
)

cfg = SessionConfig()

t0 = time.time()
models, report = train_timing_models(cfg, seed=1000, n_sessions=40)
print(f"training ({time.time()-t0:.1f}s):")
print(report.summary())

# held-out evaluation
scenes = [make_face_scene(5000 + i) for i in range(2)]
rends = [SceneRenderer(s, cfg) for s in scenes]
samples = collect_training_samples(scenes, cfg, 20, seed=77777, renderers=rends)
for part, (x, y) in sorted(samples.items()):
    pred = np.array([models[part].predict(f) for f in x])
    resid = pred - y
    print(
        f"held-out part {part}: n={len(x)} mae={np.abs(resid).mean():.4f} "
        f"std={resid.std(ddof=1):.4f}"
    )

# flat-input prediction (what a fully delayed window maps to)
flat = np.ones(64)
print("flat-input predictions:", [round(models[p].predict(flat), 4) for p in sorted(models)])

# full genuine verification pass
verifier = Verifier(models, net=None, cfg=cfg)
t0 = time.time()
n_ok, criteria, used = 0, [], []
for i in range(50):
    seed = 300000 + i
    plan = generate(seed, cfg.n_challenges)
    trace = simulate_session(scenes[i % 2], plan, cfg, seed, renderer=rends[i % 2])
    stats, outcomes = verifier.verify_timing(trace.frames, plan, trace.screen)
    used.append(sum(1 for o in outcomes if o.used))
    if stats is None:
        continue
    criteria.append(stats.criterion)
    if stats.accept:
        n_ok += 1
print(f"\ngenuine: accept {n_ok}/50 in {time.time()-t0:.1f}s; used/session mean {np.mean(used):.1f} min {min(used)}")
print(f"criteria: median {np.median(criteria):.2e} max {np.max(criteria):.2e} thresh {np.exp(-5):.2e}")

# sweep injection
print("\nshift sweep:")
for shift in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
    devs = []
    for i in range(12):
        seed = 400000 + i
        plan = generate(seed, cfg.n_challenges)
        trace = simulate_session(scenes[i % 2], plan, cfg, seed, renderer=rends[i % 2])
        stats, outcomes = verifier.verify_timing(trace.frames, plan, trace.screen, inject_shift=shift)
        devs.extend([o.deviation for o in outcomes if o.used])
    print(f"  shift {shift:.2f}: mean|dev|={np.mean(np.abs(devs)):.4f} n={len(devs)}")
