"""Device/server challenge-response protocol with a byte-exact wire format.

Framing: u32 little-endian payload length, u8 type tag, payload.  The
server sends the session parameters; the device regenerates the plan from
the seed, runs the challenges, uploads its frame trace in batches (one per
second of capture, ending with an empty batch), and receives the verdict.
Verification order is timing, then face shape, then the expression stage,
which an external capability would provide and which here always passes.

Timestamps are device-local throughout, so a device clock offset shifts
its screen and camera together and cancels out of the timing math.
"""

from __future__ import annotations

import math
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field, replace

import numpy as np

from .challenges import ChallengePlan, generate
from .scanline import Frame, decode_trace, encode_trace
from .scenes import make_face_scene
from .session import (
    SceneRenderer,
    SessionConfig,
    SessionVerdict,
    Verifier,
    screen_timeline_for,
    simulate_session,
)

MAX_PAYLOAD = 1 << 28  # 256 MiB guards against hostile length prefixes


class ProtocolError(Exception):
    """Malformed or out-of-order protocol traffic."""


# -- wire messages ----------------------------------------------------------


@dataclass(frozen=True)
class Params:
    seed: int
    n: int
    th: float


@dataclass(frozen=True)
class ChallengeAck:
    index: int


@dataclass(frozen=True)
class ResponseFrames:
    trace: bytes  # frame-trace bytes; empty trace marks end of upload


@dataclass(frozen=True)
class Verdict:
    accept: bool
    mean_d: float
    std_d: float
    face_score: float
    stage: int


WireMessage = Params | ChallengeAck | ResponseFrames | Verdict

_TAG_PARAMS = 1
_TAG_ACK = 2
_TAG_FRAMES = 3
_TAG_VERDICT = 4

_PARAMS_STRUCT = struct.Struct("<QHd")
_ACK_STRUCT = struct.Struct("<H")
_VERDICT_STRUCT = struct.Struct("<BdddB")

STAGE_CODES = {"none": 0, "timing": 1, "face": 2, "expression": 3, "transport": 4, "protocol": 5}
STAGE_NAMES = {v: k for k, v in STAGE_CODES.items()}


def encode_message(msg: WireMessage) -> bytes:
    if isinstance(msg, Params):
        payload = _PARAMS_STRUCT.pack(msg.seed, msg.n, msg.th)
        tag = _TAG_PARAMS
    elif isinstance(msg, ChallengeAck):
        payload = _ACK_STRUCT.pack(msg.index)
        tag = _TAG_ACK
    elif isinstance(msg, ResponseFrames):
        payload = msg.trace
        tag = _TAG_FRAMES
    elif isinstance(msg, Verdict):
        payload = _VERDICT_STRUCT.pack(
            int(msg.accept), msg.mean_d, msg.std_d, msg.face_score, msg.stage
        )
        tag = _TAG_VERDICT
    else:
        raise ProtocolError(f"unknown message type {type(msg)!r}")
    if len(payload) > MAX_PAYLOAD:
        raise ProtocolError("payload too large")
    return struct.pack("<IB", len(payload), tag) + payload


def decode_message(data: bytes) -> WireMessage:
    if len(data) < 5:
        raise ProtocolError("message shorter than framing header")
    length, tag = struct.unpack_from("<IB", data, 0)
    if length > MAX_PAYLOAD:
        raise ProtocolError("length overflow")
    payload = data[5:]
    if len(payload) != length:
        raise ProtocolError("payload length mismatch")
    if tag == _TAG_PARAMS:
        if length != _PARAMS_STRUCT.size:
            raise ProtocolError("bad PARAMS payload")
        seed, n, th = _PARAMS_STRUCT.unpack(payload)
        return Params(seed=seed, n=n, th=th)
    if tag == _TAG_ACK:
        if length != _ACK_STRUCT.size:
            raise ProtocolError("bad CHALLENGE_ACK payload")
        (index,) = _ACK_STRUCT.unpack(payload)
        return ChallengeAck(index=index)
    if tag == _TAG_FRAMES:
        return ResponseFrames(trace=payload)
    if tag == _TAG_VERDICT:
        if length != _VERDICT_STRUCT.size:
            raise ProtocolError("bad VERDICT payload")
        accept, mean_d, std_d, face_score, stage = _VERDICT_STRUCT.unpack(payload)
        return Verdict(
            accept=bool(accept), mean_d=mean_d, std_d=std_d, face_score=face_score, stage=stage
        )
    raise ProtocolError(f"unknown message tag {tag}")


# -- transports --------------------------------------------------------------


class Transport:
    """One endpoint of a bidirectional message channel."""

    def send(self, msg: WireMessage) -> None:
        raise NotImplementedError

    def recv(self, timeout: float | None = None) -> WireMessage:
        raise NotImplementedError

    def close(self) -> None:
        pass


class InProcessTransport(Transport):
    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]") -> None:
        self._inbox = inbox
        self._outbox = outbox

    def send(self, msg: WireMessage) -> None:
        self._outbox.put(encode_message(msg))

    def recv(self, timeout: float | None = None) -> WireMessage:
        try:
            data = self._inbox.get(timeout=timeout)
        except queue.Empty as exc:
            raise TimeoutError("transport receive timed out") from exc
        return decode_message(data)


def in_process_pair() -> tuple[InProcessTransport, InProcessTransport]:
    a: "queue.Queue[bytes]" = queue.Queue()
    b: "queue.Queue[bytes]" = queue.Queue()
    return InProcessTransport(a, b), InProcessTransport(b, a)


class SocketTransport(Transport):
    """Stream-socket endpoint speaking the same length-prefixed framing."""

    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock

    def send(self, msg: WireMessage) -> None:
        self._sock.sendall(encode_message(msg))

    def _read_exact(self, n: int, timeout: float | None) -> bytes:
        self._sock.settimeout(timeout)
        chunks = []
        remaining = n
        while remaining:
            chunk = self._sock.recv(remaining)
            if not chunk:
                raise ProtocolError("connection closed mid-message")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def recv(self, timeout: float | None = None) -> WireMessage:
        header = self._read_exact(5, timeout)
        length, _tag = struct.unpack_from("<IB", header, 0)
        if length > MAX_PAYLOAD:
            raise ProtocolError("length overflow")
        payload = self._read_exact(length, timeout) if length else b""
        return decode_message(header + payload)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


# -- session state machine ---------------------------------------------------

PHASES = (
    "Idle",
    "ParamsSent",
    "Challenging",
    "Collecting",
    "VerifyTiming",
    "VerifyFace",
    "Done",
)

_LEGAL = {
    "Idle": {"ParamsSent"},
    "ParamsSent": {"Challenging", "Collecting"},
    "Challenging": {"Challenging", "Collecting"},
    "Collecting": {"Collecting", "VerifyTiming"},
    "VerifyTiming": {"VerifyFace", "Done"},
    "VerifyFace": {"Done"},
    "Done": set(),
}


@dataclass
class SessionState:
    """Server-side session phase tracking; transitions follow step order."""

    phase: str = "Idle"
    plan: ChallengePlan | None = None
    challenge_index: int = -1
    trace_parts: list[bytes] = field(default_factory=list)
    verdict: SessionVerdict | None = None

    def advance(self, phase: str) -> None:
        if phase not in PHASES:
            raise ProtocolError(f"unknown phase {phase}")
        if phase not in _LEGAL[self.phase]:
            raise ProtocolError(f"illegal transition {self.phase} -> {phase}")
        self.phase = phase

    def on_ack(self, index: int) -> None:
        if self.plan is None or index >= self.plan.n:
            raise ProtocolError("challenge index out of range")
        if index < self.challenge_index:
            raise ProtocolError("challenge index went backwards")
        self.challenge_index = index
        self.advance("Challenging")


# -- server and device -------------------------------------------------------


def server_session(
    transport: Transport,
    verifier: Verifier,
    *,
    seed: int,
    timeout: float = 10.0,
) -> SessionVerdict:
    """Run one verification session over a transport.

    Emits the parameters, collects acknowledgements and trace batches,
    verifies timing then face, and answers with the verdict.  Transport
    timeouts yield a reject verdict; malformed traffic aborts the session
    with a protocol error.
    """
    cfg = verifier.cfg
    state = SessionState()
    plan = generate(seed, cfg.n_challenges)
    state.plan = plan
    transport.send(Params(seed=seed, n=cfg.n_challenges, th=cfg.th))
    state.advance("ParamsSent")

    try:
        while True:
            try:
                msg = transport.recv(timeout=timeout)
            except TimeoutError:
                return SessionVerdict(accept=False, stage="transport")
            if isinstance(msg, ChallengeAck):
                state.on_ack(msg.index)
            elif isinstance(msg, ResponseFrames):
                state.advance("Collecting")
                if not msg.trace:
                    raise ProtocolError("empty RESPONSE_FRAMES batch")
                frames = decode_trace(msg.trace)  # raises ValueError if malformed
                if not frames:
                    break  # valid empty trace: end of upload
                state.trace_parts.append(msg.trace)
            else:
                raise ProtocolError(f"unexpected message {type(msg).__name__}")
    except ValueError as exc:
        raise ProtocolError(f"malformed trace: {exc}") from exc

    frames = [fr for part in state.trace_parts for fr in decode_trace(part)]
    if not frames:
        raise ProtocolError("device uploaded no frames")
    state.advance("VerifyTiming")
    verdict = verifier.verify(frames, plan, seed=seed)
    if verdict.stage != "timing":
        state.advance("VerifyFace")
    state.advance("Done")
    state.verdict = verdict
    transport.send(
        Verdict(
            accept=verdict.accept,
            mean_d=float(verdict.mean_d) if math.isfinite(verdict.mean_d) else 0.0,
            std_d=float(verdict.std_d) if math.isfinite(verdict.std_d) else 0.0,
            face_score=float(verdict.face_score) if math.isfinite(verdict.face_score) else -1.0,
            stage=STAGE_CODES.get(verdict.stage, 5),
        )
    )
    return verdict


def device_session(
    transport: Transport,
    *,
    scene_seed: int = 0,
    cfg: SessionConfig | None = None,
    renderer: SceneRenderer | None = None,
    event_override=None,
    timeout: float = 10.0,
) -> Verdict:
    """Simulated front-end device: regenerate the plan, capture, upload."""
    msg = transport.recv(timeout=timeout)
    if not isinstance(msg, Params):
        raise ProtocolError("expected PARAMS first")
    device_cfg = replace(cfg or SessionConfig(), n_challenges=msg.n, th=msg.th)
    plan = generate(msg.seed, msg.n)
    scene = make_face_scene(scene_seed, height=device_cfg.size, width=device_cfg.size)
    trace = simulate_session(
        scene, plan, device_cfg, msg.seed, renderer=renderer, event_override=event_override
    )
    for ch in plan.sequence:
        transport.send(ChallengeAck(index=ch.display_frame))
    # one batch per second of simulated capture
    batches: dict[int, list[Frame]] = {}
    for fr in trace.frames:
        batches.setdefault(int(fr.capture_start), []).append(fr)
    for _, frames in sorted(batches.items()):
        transport.send(ResponseFrames(trace=encode_trace(frames)))
    transport.send(ResponseFrames(trace=encode_trace([])))
    reply = transport.recv(timeout=timeout)
    if not isinstance(reply, Verdict):
        raise ProtocolError("expected VERDICT")
    return reply


def serve_loopback(
    verifier: Verifier,
    *,
    seed: int,
    host: str = "127.0.0.1",
    port: int = 0,
) -> tuple[threading.Thread, int, list[SessionVerdict]]:
    """Accept one socket session in a background thread; returns the port."""
    listener = socket.create_server((host, port))
    actual_port = listener.getsockname()[1]
    results: list[SessionVerdict] = []

    def run() -> None:
        conn, _ = listener.accept()
        with conn:
            results.append(server_session(SocketTransport(conn), verifier, seed=seed))
        listener.close()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return thread, actual_port, results
