"""Command-line batch driver for the liveness-detection laboratory.

Subcommands cover model training, the shift sweep, scenario robustness,
attack batches, trace verification and the device/server protocol ends.
Every subcommand is deterministic under a fixed ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import facecheck, nn, timing
from .attacks import (
    AdversaryConfig,
    Strategy,
    run_delayed_forgery,
    run_flat_present,
    run_replay,
    sweep_shift,
    sweep_to_csv,
)
from .challenges import generate
from .protocol import SocketTransport, device_session, server_session
from .scanline import read_trace
from .scenes import SCREEN_PRESETS
from .session import SessionConfig, Verifier, train_timing_models
from .experiments import SCENARIOS, run_scenario, train_face_net, vibration_accuracy

DEFAULT_MODELS_PREFIX = "models/flashlive"


def _ensure_dir(path: str) -> None:
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)


def _load_verifier(args, *, need_net: bool = True) -> Verifier:
    cfg = SessionConfig(th=args.th) if hasattr(args, "th") else SessionConfig()
    models = timing.load_models(args.models)
    net = None
    net_path = args.models + ".ffnn"
    if os.path.exists(net_path):
        net = facecheck.load_weights(net_path)
    elif need_net:
        raise SystemExit(f"face net not found at {net_path}; run train-face first")
    return Verifier(models, net, cfg)


def cmd_train_timing(args) -> int:
    cfg = SessionConfig()
    models, report = train_timing_models(
        cfg, args.seed, n_sessions=args.sessions, lam=args.ridge_lambda
    )
    _ensure_dir(args.models)
    paths = timing.save_models(models, args.models)
    report_path = args.models + ".timing-report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n", "residual_mean", "residual_std", "condition"])
        for part, s in sorted(report.per_part.items()):
            writer.writerow(
                [part, int(s["n"]), f"{s['residual_mean']:.6f}", f"{s['residual_std']:.6f}", f"{s['condition']:.3e}"]
            )
    print(report.summary())
    for p in paths:
        print(f"wrote {p}")
    print(f"wrote {report_path}")
    return 0


def cmd_train_face(args) -> int:
    cfg = SessionConfig()
    sgd = nn.SGDConfig(max_iter=args.iterations)
    net, result = train_face_net(cfg, seed=args.seed, sgd=sgd)
    _ensure_dir(args.models)
    path = args.models + ".ffnn"
    facecheck.save_weights(net, path)
    report_path = args.models + ".face-report.csv"
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iterations", "train_accuracy", "holdout_accuracy", "attack_accept_rate"])
        writer.writerow(
            [
                result.report.iterations,
                f"{result.report.train_accuracy:.4f}",
                f"{result.holdout_accuracy:.4f}",
                f"{result.attack_accept_rate:.4f}",
            ]
        )
    print(
        f"train acc {result.report.train_accuracy:.4f}, holdout {result.holdout_accuracy:.4f}, "
        f"attack accept {result.attack_accept_rate:.4f}"
    )
    print(f"wrote {path}")
    print(f"wrote {report_path}")
    return 0


def cmd_sweep_shift(args) -> int:
    verifier = _load_verifier(args, need_net=False)
    shifts = tuple(np.round(np.arange(0.0, 0.501, args.step), 3))
    rows = sweep_shift(verifier, seed=args.seed, shifts=shifts, sessions_per_shift=args.sessions)
    text = sweep_to_csv(rows)
    if args.out:
        _ensure_dir(args.out)
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_scenarios(args) -> int:
    verifier = _load_verifier(args)
    results = []
    for preset in SCENARIOS:
        res = run_scenario(preset, verifier, seed=args.seed, n_sessions=args.sessions)
        results.append(res)
        print(f"{preset.name}: accuracy {res.accuracy:.4f} ({res.n_sessions} sessions)")
    buckets = vibration_accuracy(results)
    lines = [["scenario", "illumination", "vibration", "accuracy", "sessions"]]
    for res in results:
        lines.append(
            [
                res.preset.name,
                res.preset.illumination,
                res.preset.vibration,
                f"{res.accuracy:.4f}",
                res.n_sessions,
            ]
        )
    lines.append([])
    lines.append(["vibration_quantile", "accuracy", "sessions"])
    for q, acc, n in buckets:
        lines.append([f"{q:.2f}", f"{acc:.4f}", n])
        print(f"vibration quantile <= {q:.2f}: accuracy {acc:.4f} over {n}")
    if args.out:
        _ensure_dir(args.out)
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(lines)
        print(f"wrote {args.out}")
    return 0


def cmd_attack(args) -> int:
    verifier = _load_verifier(args, need_net=args.strategy != "delayed-forgery")
    outcomes = []
    for i in range(args.sessions):
        seed = args.seed + 7919 * i
        plan = generate(seed, verifier.cfg.n_challenges)
        if args.strategy == "delayed-forgery":
            adv = AdversaryConfig(
                camera_fps=args.adversary_fps,
                screen_hz=args.adversary_hz,
                processing_delay=args.processing_delay,
            )
            out = run_delayed_forgery(plan, adv, verifier, seed=seed)
        elif args.strategy == "flat-present":
            preset = SCREEN_PRESETS[i % len(SCREEN_PRESETS)]
            out = run_flat_present(plan, preset, verifier, seed=seed)
        elif args.strategy == "replay":
            recorded = generate(seed + 1, verifier.cfg.n_challenges)
            out = run_replay(plan, recorded, verifier, seed=seed)
        else:
            raise SystemExit(f"unknown strategy {args.strategy}")
        outcomes.append(out)
    rows = [["strategy", "shift", "mean_d", "std_d", "criterion", "accepted", "stage"]]
    for out in outcomes:
        stats = out.verdict.stats
        finite = [s for s in out.shifts if np.isfinite(s)]
        rows.append(
            [
                args.strategy,
                f"{np.mean(finite):.4f}" if finite else "",
                f"{out.verdict.mean_d:.6f}" if np.isfinite(out.verdict.mean_d) else "",
                f"{out.verdict.std_d:.6f}" if np.isfinite(out.verdict.std_d) else "",
                f"{stats.criterion:.6f}" if stats else "",
                int(out.verdict.accept),
                out.detection_stage,
            ]
        )
    rejected = sum(1 for o in outcomes if o.rejected)
    print(f"{args.strategy}: rejected {rejected}/{len(outcomes)}")
    if args.out:
        _ensure_dir(args.out)
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
        print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    try:
        frames = read_trace(args.trace)
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": f"malformed trace: {exc}"}))
        return 2
    try:
        verifier = _load_verifier(args)
        plan = generate(args.seed, verifier.cfg.n_challenges)
        verdict = verifier.verify(frames, plan, seed=args.seed)
    except Exception as exc:  # noqa: BLE001 - reported as exit code 2
        print(json.dumps({"error": str(exc)}))
        return 2
    print(
        json.dumps(
            {
                "accept": verdict.accept,
                "stage": verdict.stage,
                "mean_d": None if not np.isfinite(verdict.mean_d) else verdict.mean_d,
                "std_d": None if not np.isfinite(verdict.std_d) else verdict.std_d,
                "criterion": None if verdict.stats is None else verdict.stats.criterion,
                "threshold": float(np.exp(verifier.cfg.th)),
                "face_score": None if not np.isfinite(verdict.face_score) else verdict.face_score,
                "challenges_used": verdict.n_used,
            }
        )
    )
    return 0 if verdict.accept else 1


def cmd_serve(args) -> int:
    import socket as socket_mod

    verifier = _load_verifier(args)
    host, port = args.listen.split(":")
    listener = socket_mod.create_server((host, int(port)))
    print(f"listening on {host}:{listener.getsockname()[1]}")
    try:
        while True:
            conn, peer = listener.accept()
            with conn:
                verdict = server_session(SocketTransport(conn), verifier, seed=args.seed)
                print(f"{peer}: accept={verdict.accept} stage={verdict.stage}")
            if args.once:
                return 0
    finally:
        listener.close()


def cmd_device(args) -> int:
    import socket as socket_mod

    host, port = args.server.split(":")
    sock = socket_mod.create_connection((host, int(port)))
    reply = device_session(SocketTransport(sock), scene_seed=args.scene_seed)
    print(f"verdict: accept={reply.accept} stage={reply.stage}")
    return 0 if reply.accept else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flashlive", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--models", default=DEFAULT_MODELS_PREFIX, help="model file prefix")
    parser.add_argument("--out", default=None, help="output file path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-timing", help="train the four timing regression models")
    p.add_argument("--sessions", type=int, default=120)
    p.add_argument("--ridge-lambda", type=float, default=timing.RIDGE_LAMBDA)
    p.set_defaults(func=cmd_train_timing)

    p = sub.add_parser("train-face", help="train the face verification network")
    p.add_argument("--iterations", type=int, default=nn.SGDConfig().max_iter)
    p.set_defaults(func=cmd_train_face)

    p = sub.add_parser("sweep-shift", help="forged-belt shift sweep (deviation curve)")
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--sessions", type=int, default=12, help="sessions per shift value")
    p.set_defaults(func=cmd_sweep_shift)

    p = sub.add_parser("scenarios", help="robustness scenarios accuracy table")
    p.add_argument("--sessions", type=int, default=200, help="sessions per scenario")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("attack", help="run an adversary batch")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="delayed-forgery")
    p.add_argument("--sessions", type=int, default=50)
    p.add_argument("--adversary-fps", type=float, default=240.0)
    p.add_argument("--adversary-hz", type=float, default=240.0)
    p.add_argument("--processing-delay", type=float, default=0.0)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("verify", help="verify a recorded frame trace")
    p.add_argument("trace", help="frame-trace file")
    p.add_argument("--th", type=float, default=-5.0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="run the back-end verification server")
    p.add_argument("--listen", default="127.0.0.1:4870")
    p.add_argument("--once", action="store_true", help="exit after one session")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("device", help="run the front-end device simulator")
    p.add_argument("--server", default="127.0.0.1:4870")
    p.add_argument("--scene-seed", type=int, default=0)
    p.set_defaults(func=cmd_device)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
