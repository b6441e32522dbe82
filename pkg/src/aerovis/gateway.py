"""Browser gateway: serves the UI bundle and bridges one WebSocket operator
to a drone session.

HTTP surface: `/` (static UI), `/healthz`. WebSocket `/ws` carries JSON
envelopes (commands in; acks, errors, telemetry and tracking updates out)
as text frames, and video as binary frames (u16 width, u16 height, u32
sequence number, little-endian, then raw RGB bytes).

Single-operator policy: the first connector owns the session until it
disconnects; later connectors receive an "occupied" error and are closed.
The session object is produced by an injectable factory so tests can run
the gateway against a stub instead of a live drone link.

A session must provide: connect_video(frame_cb), disconnect(),
telemetry_snapshot(), a `state` attribute with a `.value` name, and the
flight verbs takeoff/land/hover/emergency/reset_emergency/flat_trim/move.
`DroneClient` satisfies this; `drone_session_factory` builds one.
"""
from __future__ import annotations

import asyncio
import collections
import json
import logging
import queue
import struct
import threading
from pathlib import Path

import uvicorn
from fastapi import FastAPI, WebSocket
from fastapi.responses import HTMLResponse, PlainTextResponse
from fastapi.staticfiles import StaticFiles

from .client import ClientError, DroneClient, DroneEndpoint
from .control import TrackAction, TrackerConfig, track_step
from .vision.detector import BlobDetector, Frame

log = logging.getLogger(__name__)

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8642
TELEMETRY_PERIOD_S = 0.1
# undelivered frames kept per operator; older ones are dropped so a slow
# socket shows sequence gaps instead of unbounded memory growth
FRAME_BACKLOG = 2

_FRAME_HEADER = struct.Struct("<HHI")


def pack_frame_message(width: int, height: int, seq: int, rgb: bytes) -> bytes:
    if len(rgb) != width * height * 3:
        raise ValueError(f"payload length {len(rgb)} != {width}x{height}x3")
    return _FRAME_HEADER.pack(width, height, seq) + rgb


def unpack_frame_message(data: bytes):
    """Inverse of pack_frame_message; returns (width, height, seq, rgb)."""
    width, height, seq = _FRAME_HEADER.unpack_from(data)
    rgb = data[_FRAME_HEADER.size:]
    if len(rgb) != width * height * 3:
        raise ValueError(f"payload length {len(rgb)} != {width}x{height}x3")
    return width, height, seq, rgb


# command name -> session call; params already validated where needed
_COMMANDS = {
    "takeoff": lambda s, p: s.takeoff(wait=False),
    "land": lambda s, p: s.land(wait=False),
    "hover": lambda s, p: s.hover(),
    "emergency": lambda s, p: s.emergency(),
    "reset": lambda s, p: s.reset_emergency(),
    "trim": lambda s, p: s.flat_trim(),
    "move": lambda s, p: s.move(p["direction"], float(p["speed"])),
}


class _Operator:
    """Per-connection state: outbound queues, command worker, tracking."""

    def __init__(self, session, loop: asyncio.AbstractEventLoop):
        self.session = session
        self.loop = loop
        self._texts: collections.deque[str] = collections.deque()
        self._frames: collections.deque[bytes] = collections.deque(
            maxlen=FRAME_BACKLOG)
        self._ready = asyncio.Event()
        self._commands: queue.Queue[dict] = queue.Queue()
        self._stopped = threading.Event()
        self._worker = threading.Thread(
            target=self._work, name="gateway-commands", daemon=True)
        self._frame_seq = 0
        self.tracking = False
        self.track_config = TrackerConfig()
        self.detector = BlobDetector()
        self.last_action = TrackAction.HOVER

    def start(self):
        self._worker.start()

    def stop(self):
        self._stopped.set()
        self._worker.join(timeout=1.0)

    # -- outbound fan-out (text preferred over frames so acks and telemetry
    # -- stay timely while large frames queue)

    async def next_outbound(self):
        while not self._texts and not self._frames:
            self._ready.clear()
            await self._ready.wait()
        if self._texts:
            return "text", self._texts.popleft()
        return "bytes", self._frames.popleft()

    def post_text(self, payload: dict):
        self._post(self._enqueue_text, json.dumps(payload))

    def _post(self, fn, payload):
        try:
            self.loop.call_soon_threadsafe(fn, payload)
        except RuntimeError:
            pass  # loop already closed; connection is going away

    def _enqueue_text(self, payload: str):
        self._texts.append(payload)
        self._ready.set()

    def _enqueue_frame(self, payload: bytes):
        self._frames.append(payload)  # maxlen drops the oldest
        self._ready.set()

    # -- video path (called from the session's video thread; must not block)

    def on_frame(self, frame: Frame):
        self._frame_seq += 1
        if self.tracking:
            self._track_step(frame)
        payload = pack_frame_message(
            frame.width, frame.height, self._frame_seq, frame.to_bytes())
        self._post(self._enqueue_frame, payload)

    def _track_step(self, frame: Frame):
        detections = self.detector.detect(frame)
        box = detections[0].box if detections else None
        try:
            self.last_action = track_step(
                detections, self.track_config, self.session)
        except ClientError as e:
            log.debug("tracking step skipped: %s", e)
        self.post_text({
            "type": "track",
            "action": self.last_action.value,
            "box": None if box is None else
            {"x": box.x, "y": box.y, "w": box.w, "h": box.h},
        })

    # -- command lane

    def submit(self, envelope: dict):
        self._commands.put(envelope)

    def execute(self, envelope: dict):
        """Run one command envelope; posts exactly one ack or error."""
        cid = envelope.get("id")
        name = envelope.get("name")
        params = envelope.get("params") or {}
        try:
            if name == "track":
                self.tracking = bool(params.get("enabled"))
            elif name == "move":
                if "direction" not in params or "speed" not in params:
                    raise ValueError("move requires direction and speed params")
                _COMMANDS["move"](self.session, params)
            elif name in _COMMANDS:
                _COMMANDS[name](self.session, params)
            else:
                raise ValueError(f"unknown command {name!r}")
        except (ClientError, ValueError) as e:
            self.post_text({"type": "error", "id": cid, "message": str(e)})
            return
        self.post_text({"type": "ack", "id": cid})

    def _work(self):
        while not self._stopped.is_set():
            try:
                envelope = self._commands.get(timeout=0.1)
            except queue.Empty:
                continue
            self.execute(envelope)

    def telemetry_payload(self) -> dict:
        snap = self.session.telemetry_snapshot()
        return {
            "type": "telemetry",
            "state": self.session.state.value,
            "track_action": self.last_action.value,
            "battery_percent": snap.battery_percent,
            "pitch_deg": snap.pitch_deg,
            "roll_deg": snap.roll_deg,
            "yaw_deg": snap.yaw_deg,
            "altitude_m": snap.altitude_m,
            "vx_m_s": snap.vx_m_s,
            "vy_m_s": snap.vy_m_s,
            "vz_m_s": snap.vz_m_s,
            "state_mask": snap.state_mask,
            "link_ok": snap.link_ok,
        }


_FALLBACK_PAGE = """<!doctype html>
<html><head><title>aerovis gateway</title></head>
<body><h1>aerovis gateway</h1>
<p>The gateway is running, but no UI bundle was found. Build the frontend
(<code>npm run build</code> in <code>frontend/</code>) or pass
<code>static_dir</code> to <code>serve()</code>.</p>
<p>WebSocket endpoint: <code>/ws</code> &middot;
health check: <a href="/healthz">/healthz</a></p>
</body></html>
"""


def _default_static_dir():
    # editable installs run from the repo, where the built UI lives in
    # frontend/dist; installed wheels have no bundle and get the fallback
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if (candidate / "index.html").is_file() else None


def drone_session_factory(host: str = "127.0.0.1", ports_base: int = 5554,
                          link_timeout_s: float = 2.0):
    """Factory producing connected DroneClient sessions for real serving."""

    def factory() -> DroneClient:
        endpoint = DroneEndpoint.from_ports_base(host, ports_base)
        return DroneClient(endpoint, link_timeout_s=link_timeout_s).connect()

    return factory


def create_app(session_factory, static_dir=None) -> FastAPI:
    app = FastAPI(title="aerovis gateway")
    app.state.session_factory = session_factory
    app.state.operator = None

    @app.get("/healthz")
    def healthz():
        return PlainTextResponse("ok")

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        if app.state.operator is not None:
            await ws.send_text(json.dumps(
                {"type": "error", "message": "occupied"}))
            await ws.close(code=1008)
            return
        app.state.operator = "pending"  # reserve before awaiting the factory
        try:
            session = await asyncio.to_thread(app.state.session_factory)
        except Exception as e:
            app.state.operator = None
            await ws.send_text(json.dumps(
                {"type": "error", "message": f"session unavailable: {e}"}))
            await ws.close(code=1011)
            return
        operator = _Operator(session, asyncio.get_running_loop())
        app.state.operator = operator
        operator.start()
        try:
            session.connect_video(operator.on_frame)
        except ClientError as e:
            log.warning("video stream unavailable: %s", e)
        sender = asyncio.create_task(_send_loop(ws, operator))
        telemetry = asyncio.create_task(_telemetry_loop(operator))
        try:
            await _receive_loop(ws, operator)
        finally:
            # no awaits here: the endpoint task may itself be cancelled at
            # any await point, which would strand the operator slot
            app.state.operator = None
            operator.stop()
            sender.cancel()
            telemetry.cancel()
            threading.Thread(target=session.disconnect,
                             name="gateway-session-close", daemon=True).start()

    static = static_dir if static_dir is not None else _default_static_dir()
    if static is not None:
        app.mount("/", StaticFiles(directory=static, html=True), name="ui")
    else:
        @app.get("/")
        def index():
            return HTMLResponse(_FALLBACK_PAGE)

    return app


async def _receive_loop(ws: WebSocket, operator: _Operator):
    while True:
        message = await ws.receive()
        if message["type"] == "websocket.disconnect":
            return
        raw = message.get("text")
        if raw is None:
            log.debug("ignoring binary frame from operator")
            continue
        try:
            envelope = json.loads(raw)
            if not isinstance(envelope, dict):
                raise ValueError("envelope must be a JSON object")
        except ValueError as e:
            operator.post_text({"type": "error", "id": None,
                                "message": f"malformed envelope: {e}"})
            continue
        if envelope.get("type") != "command":
            operator.post_text({
                "type": "error", "id": envelope.get("id"),
                "message": f"unsupported envelope type "
                           f"{envelope.get('type')!r}"})
        elif envelope.get("name") == "emergency":
            # priority lane: never sits behind queued commands
            await asyncio.to_thread(operator.execute, envelope)
        else:
            operator.submit(envelope)


async def _send_loop(ws: WebSocket, operator: _Operator):
    try:
        while True:
            kind, payload = await operator.next_outbound()
            if kind == "text":
                await ws.send_text(payload)
            else:
                await ws.send_bytes(payload)
    except (RuntimeError, OSError) as e:
        log.debug("send loop ended: %s", e)


async def _telemetry_loop(operator: _Operator):
    while True:
        await asyncio.sleep(TELEMETRY_PERIOD_S)
        try:
            operator.post_text(operator.telemetry_payload())
        except ClientError:
            continue  # session dropped; the receive loop will tear down


def serve(host: str = DEFAULT_HOST, port: int = DEFAULT_PORT, *,
          drone_host: str = "127.0.0.1", ports_base: int = 5554,
          session_factory=None, static_dir=None):
    """Run the gateway until interrupted. Bind failure raises at startup."""
    factory = session_factory or drone_session_factory(drone_host, ports_base)
    app = create_app(factory, static_dir=static_dir)
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    log.info("gateway on http://%s:%d (drone %s:%d)",
             host, port, drone_host, ports_base)
    server.run()
