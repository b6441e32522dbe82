"""High-level flight client: three channel loops per session.

* command loop, 30 ms period: re-sends the latest stick command (or a
  keepalive when idle) with a fresh sequence number, so the on-drone
  watchdog never fires while a session is up
* navdata loop: triggers the telemetry stream, switches it to the DEMO
  payload, and folds packets into an immutable snapshot swapped
  atomically under readers
* video loop: dormant until connect_video, then decodes the framed
  stream and hands frames to a callback on the video thread

The session object is safe to share between threads; blocking calls are
rejected on the video thread (callbacks must stay non-blocking).
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import socket
import threading
import time
from dataclasses import dataclass

from . import protocol
from .protocol import AtCommand, ParseError, PcmdArgs
from .vision.detector import Frame

log = logging.getLogger(__name__)

COMMAND_PERIOD_S = 0.030
LINK_TIMEOUT_S = 2.0
FLYING_ALTITUDE_M = 0.5
LANDED_ALTITUDE_M = 0.05


class ClientError(Exception):
    pass


class StateError(ClientError):
    """Operation not allowed in the current flight state."""


class FlightState(enum.Enum):
    DISCONNECTED = "Disconnected"
    LANDED = "Landed"
    TAKING_OFF = "TakingOff"
    FLYING = "Flying"
    HOVERING = "Hovering"
    LANDING = "Landing"
    EMERGENCY = "Emergency"


class MoveDirection(enum.Enum):
    RIGHT = "right"
    LEFT = "left"
    UP = "up"
    DOWN = "down"
    FORWARD = "forward"
    BACKWARD = "backward"


# stick deflections per direction at speed s: (roll, pitch, gaz)
_STICKS = {
    MoveDirection.RIGHT: (1, 0, 0),
    MoveDirection.LEFT: (-1, 0, 0),
    MoveDirection.FORWARD: (0, -1, 0),
    MoveDirection.BACKWARD: (0, 1, 0),
    MoveDirection.UP: (0, 0, 1),
    MoveDirection.DOWN: (0, 0, -1),
}


@dataclass(frozen=True)
class DroneEndpoint:
    host: str = "127.0.0.1"
    command_port: int = protocol.COMMAND_PORT
    navdata_port: int = protocol.NAVDATA_PORT
    video_port: int = protocol.VIDEO_PORT

    def __post_init__(self):
        ports = (self.command_port, self.navdata_port, self.video_port)
        if len(set(ports)) != 3:
            raise ValueError(f"ports must be distinct, got {ports}")

    @classmethod
    def from_ports_base(cls, host: str = "127.0.0.1",
                        ports_base: int = protocol.NAVDATA_PORT) -> "DroneEndpoint":
        return cls(host=host, navdata_port=ports_base, video_port=ports_base + 1,
                   command_port=ports_base + 2)


@dataclass(frozen=True)
class TelemetrySnapshot:
    battery_percent: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    yaw_deg: float = 0.0
    altitude_m: float = 0.0
    vx_m_s: float = 0.0
    vy_m_s: float = 0.0
    vz_m_s: float = 0.0
    state_mask: int = 0
    last_update: float = 0.0
    link_ok: bool = False


def parse_video_stream(buf: bytes):
    """Pull complete (header, payload) frames off a stream buffer.

    Returns (frames, remainder, dropped). Unknown bytes before a
    signature are dropped (resync); a frame is only consumed once its
    whole payload has arrived.
    """
    frames = []
    dropped = 0
    while True:
        sig = buf.find(protocol.VIDEO_SIGNATURE)
        if sig < 0:
            # keep a partial signature tail, drop the rest
            keep = min(len(buf), len(protocol.VIDEO_SIGNATURE) - 1)
            dropped += len(buf) - keep
            return frames, buf[-keep:] if keep else b"", dropped
        if sig > 0:
            dropped += sig
            buf = buf[sig:]
        if len(buf) < protocol.VIDEO_HEADER_LEN:
            return frames, buf, dropped
        try:
            header = protocol.parse_video_header(buf[:protocol.VIDEO_HEADER_LEN])
        except ParseError:
            # signature was a payload coincidence; skip it and rescan
            dropped += 1
            buf = buf[1:]
            continue
        total = header.header_size + header.payload_size
        if len(buf) < total:
            return frames, buf, dropped
        frames.append((header, buf[header.header_size:total]))
        buf = buf[total:]


class DroneClient:
    """One drone session. Construct, connect(), fly, disconnect()."""

    def __init__(self, endpoint: DroneEndpoint = DroneEndpoint(),
                 link_timeout_s: float = LINK_TIMEOUT_S):
        self.endpoint = endpoint
        self.link_timeout_s = link_timeout_s
        self._lock = threading.RLock()
        self._state_cond = threading.Condition(self._lock)
        self._state = FlightState.DISCONNECTED
        self._snapshot = TelemetrySnapshot()
        self._seq = 0
        self._repeat = ("comwdg",)
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._cmd_sock = self._nav_sock = self._video_sock = None
        self._video_thread = None
        self._last_nav_monotonic = 0.0
        self._emergency_seen = False

    # -- lifecycle -----------------------------------------------------

    @property
    def state(self) -> FlightState:
        return self._state

    def connect(self) -> "DroneClient":
        with self._lock:
            if self._state is not FlightState.DISCONNECTED:
                raise ClientError(f"already connected (state {self._state.value})")
            try:
                self._cmd_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                self._cmd_sock.connect((self.endpoint.host, self.endpoint.command_port))
                self._nav_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                self._nav_sock.bind(("0.0.0.0", 0))
                self._nav_sock.settimeout(0.1)
            except OSError as e:
                self._close_sockets()
                raise ClientError(f"cannot open drone sockets: {e}") from e
            self._stop.clear()
            self._seq = 0
            self._repeat = ("comwdg",)
            self._snapshot = TelemetrySnapshot()
            self._last_nav_monotonic = 0.0
            self._set_state(FlightState.LANDED)
            for name, fn in (("drone-cmd", self._command_loop),
                             ("drone-nav", self._navdata_loop)):
                t = threading.Thread(target=fn, name=name, daemon=True)
                t.start()
                self._threads.append(t)
        deadline = time.monotonic() + self.link_timeout_s
        while time.monotonic() < deadline:
            if self._snapshot.link_ok:
                return self
            time.sleep(0.01)
        log.warning("no telemetry within %.1f s, continuing with link_ok=False",
                    self.link_timeout_s)
        return self

    def disconnect(self):
        with self._lock:
            if self._state is FlightState.DISCONNECTED:
                return
            self._guard_video_thread("disconnect")
            self._stop.set()
            self._set_state(FlightState.DISCONNECTED)
        # closing first wakes any loop blocked in recv
        self._close_sockets()
        for t in self._threads:
            t.join(timeout=1.0)
        self._threads.clear()

    def _close_sockets(self):
        for s in (self._cmd_sock, self._nav_sock, self._video_sock):
            if s is not None:
                try:
                    s.close()
                except OSError:
                    pass
        self._cmd_sock = self._nav_sock = self._video_sock = None

    def __enter__(self):
        return self.connect()

    def __exit__(self, *exc):
        self.disconnect()

    # -- flight commands -----------------------------------------------

    def takeoff(self, wait: bool = True, timeout: float = 5.0):
        with self._lock:
            self._require(FlightState.LANDED, op="takeoff")
            self._repeat = ("ref", True, False)
            self._set_state(FlightState.TAKING_OFF)
            self._send_repeat_now()
        if wait:
            self._wait_blocking(FlightState.FLYING, timeout, "takeoff")

    def land(self, wait: bool = True, timeout: float = 5.0):
        with self._lock:
            self._require(FlightState.FLYING, FlightState.HOVERING,
                          FlightState.TAKING_OFF, op="land")
            self._repeat = ("ref", False, False)
            self._set_state(FlightState.LANDING)
            self._send_repeat_now()
        if wait:
            self._wait_blocking(FlightState.LANDED, timeout, "land")

    def hover(self):
        with self._lock:
            self._require(FlightState.FLYING, FlightState.HOVERING, op="hover")
            self._repeat = ("pcmd", PcmdArgs(progressive=False))
            self._set_state(FlightState.HOVERING)
            self._send_repeat_now()

    def move(self, direction, speed: float):
        direction = MoveDirection(direction)
        if not 0.0 < speed <= 1.0:
            clamped = min(max(speed, 0.0), 1.0)
            log.warning("move speed %.3f outside (0, 1], clamped to %.3f",
                        speed, clamped)
            speed = clamped
        roll, pitch, gaz = (axis * speed for axis in _STICKS[direction])
        with self._lock:
            self._require(FlightState.FLYING, FlightState.HOVERING, op="move")
            self._repeat = ("pcmd", PcmdArgs(True, roll=roll, pitch=pitch, gaz=gaz))
            self._set_state(FlightState.FLYING)
            self._send_repeat_now()

    def emergency(self):
        with self._lock:
            if self._state is FlightState.DISCONNECTED:
                raise StateError("not connected (state Disconnected)")
            if self._snapshot.state_mask & protocol.STATE_EMERGENCY:
                # drone is already there; just follow it
                self._repeat = ("comwdg",)
                self._set_state(FlightState.EMERGENCY)
                return
            # the drone reacts to the 0 -> 1 transition, so clear the bit
            # once before repeating it (a stale 1 would mask the edge)
            self._send(protocol.ref_command(self._next_seq()))
            self._repeat = ("ref", False, True)
            self._set_state(FlightState.EMERGENCY)
            self._send_repeat_now()

    def reset_emergency(self, timeout: float = 3.0):
        with self._lock:
            self._require(FlightState.EMERGENCY, op="reset_emergency")
            self._guard_video_thread("reset_emergency")
            self._repeat = ("comwdg",)
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            # arm the edge, raise it, then re-arm for the next emergency
            with self._lock:
                self._send(protocol.ref_command(self._next_seq()))
                self._send(protocol.ref_command(self._next_seq(), emergency=True))
                self._send(protocol.ref_command(self._next_seq()))
            time.sleep(0.15)
            if self._snapshot.state_mask & protocol.STATE_EMERGENCY == 0:
                with self._lock:
                    self._set_state(FlightState.LANDED)
                return
        raise ClientError("drone still reports emergency after reset")

    def flat_trim(self):
        with self._lock:
            self._require(FlightState.LANDED, op="flat_trim")
            self._send(AtCommand("FTRIM", self._next_seq()))

    def set_config(self, key: str, value: str):
        with self._lock:
            if self._state is FlightState.DISCONNECTED:
                raise StateError("not connected (state Disconnected)")
            self._send(protocol.config_command(self._next_seq(), key, value))

    # -- telemetry and video -------------------------------------------

    def telemetry_snapshot(self) -> TelemetrySnapshot:
        if self._state is FlightState.DISCONNECTED:
            raise StateError("not connected (state Disconnected)")
        return self._snapshot

    def wait_for_state(self, *states: FlightState, timeout: float = 5.0) -> bool:
        self._guard_video_thread("wait_for_state")
        with self._state_cond:
            return self._state_cond.wait_for(
                lambda: self._state in states, timeout=timeout)

    def connect_video(self, frame_callback, close_callback=None):
        with self._lock:
            if self._state is FlightState.DISCONNECTED:
                raise StateError("not connected (state Disconnected)")
            if self._video_thread is not None:
                raise ClientError("video already connected")
            try:
                self._video_sock = socket.create_connection(
                    (self.endpoint.host, self.endpoint.video_port), timeout=2.0)
                self._video_sock.settimeout(0.1)
            except OSError as e:
                raise ClientError(f"cannot open video stream: {e}") from e
            t = threading.Thread(
                target=self._video_loop, args=(frame_callback, close_callback),
                name="drone-video", daemon=True)
            self._video_thread = t
            t.start()

    # -- internals -----------------------------------------------------

    def _require(self, *allowed: FlightState, op: str):
        if self._state not in allowed:
            raise StateError(f"{op} not allowed in state {self._state.value}")

    def _guard_video_thread(self, op: str):
        if self._video_thread is not None and \
                threading.current_thread() is self._video_thread:
            raise ClientError(f"{op} would block the video loop; "
                              "use wait=False or defer to another thread")

    def _wait_blocking(self, target: FlightState, timeout: float, op: str):
        self._guard_video_thread(op)
        if not self.wait_for_state(target, FlightState.EMERGENCY, timeout=timeout):
            raise ClientError(f"{op} timed out after {timeout:.1f} s "
                              f"(state {self._state.value})")
        if target is not FlightState.EMERGENCY and self._state is FlightState.EMERGENCY:
            raise StateError(f"{op} aborted by emergency")

    def _set_state(self, state: FlightState):
        self._state = state
        self._state_cond.notify_all()

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _send(self, cmd: AtCommand):
        sock = self._cmd_sock
        if sock is None:
            return
        try:
            sock.send(protocol.encode_at(cmd))
        except OSError as e:
            log.debug("command send failed: %s", e)

    def _build_repeat(self) -> AtCommand:
        kind = self._repeat[0]
        seq = self._next_seq()
        if kind == "pcmd":
            return AtCommand("PCMD", seq, pcmd=self._repeat[1])
        if kind == "ref":
            return protocol.ref_command(seq, takeoff=self._repeat[1],
                                        emergency=self._repeat[2])
        return AtCommand("COMWDG", seq)

    def _send_repeat_now(self):
        self._send(self._build_repeat())

    def _command_loop(self):
        while not self._stop.is_set():
            with self._lock:
                if self._state is FlightState.DISCONNECTED:
                    return
                self._send_repeat_now()
                snap = self._snapshot
                if snap.link_ok and \
                        time.monotonic() - self._last_nav_monotonic > LINK_TIMEOUT_S:
                    self._snapshot = dataclasses.replace(snap, link_ok=False)
            self._stop.wait(COMMAND_PERIOD_S)

    def _navdata_loop(self):
        sock = self._nav_sock
        trigger_sent = 0.0
        configured = False
        while not self._stop.is_set():
            now = time.monotonic()
            if now - self._last_nav_monotonic > 1.0 and now - trigger_sent > 1.0:
                trigger_sent = now
                try:
                    sock.sendto(b"\x01\x00\x00\x00",
                                (self.endpoint.host, self.endpoint.navdata_port))
                except OSError:
                    return
                if not configured:
                    with self._lock:
                        self._send(protocol.config_command(
                            self._next_seq(), "general:navdata_demo", "TRUE"))
            try:
                data, _ = sock.recvfrom(4096)
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                packet = protocol.parse_navdata(data)
            except ParseError as e:
                log.warning("dropping bad navdata: %s", e)
                continue
            configured = packet.demo() is not None
            self._ingest(packet)

    def _ingest(self, packet: protocol.NavdataPacket):
        demo = packet.demo()
        with self._lock:
            self._last_nav_monotonic = time.monotonic()
            old = self._snapshot
            if demo is not None:
                self._snapshot = TelemetrySnapshot(
                    battery_percent=min(max(float(demo.battery_percent), 0.0), 100.0),
                    pitch_deg=demo.pitch_mdeg / 1000.0,
                    roll_deg=demo.roll_mdeg / 1000.0,
                    yaw_deg=demo.yaw_mdeg / 1000.0,
                    altitude_m=max(demo.altitude_mm / 1000.0, 0.0),
                    vx_m_s=demo.vx_mm_s / 1000.0,
                    vy_m_s=demo.vy_mm_s / 1000.0,
                    vz_m_s=demo.vz_mm_s / 1000.0,
                    state_mask=packet.state_mask,
                    last_update=time.time(),
                    link_ok=True)
            else:
                self._snapshot = dataclasses.replace(
                    old, state_mask=packet.state_mask,
                    last_update=time.time(), link_ok=True)
            self._advance_state_machine()

    def _advance_state_machine(self):
        mask = self._snapshot.state_mask
        alt = self._snapshot.altitude_m
        if mask & protocol.STATE_EMERGENCY:
            self._emergency_seen = True
            if self._state is not FlightState.EMERGENCY:
                self._repeat = ("comwdg",)
                self._set_state(FlightState.EMERGENCY)
            elif self._repeat == ("ref", False, True):
                # drone confirmed the emergency; stop repeating the bit
                self._repeat = ("comwdg",)
            return
        if self._state is FlightState.TAKING_OFF:
            if mask & protocol.STATE_FLYING and alt >= FLYING_ALTITUDE_M:
                self._repeat = ("pcmd", PcmdArgs(progressive=False))
                self._set_state(FlightState.FLYING)
        elif self._state is FlightState.LANDING:
            if alt <= LANDED_ALTITUDE_M and not mask & protocol.STATE_FLYING:
                self._repeat = ("comwdg",)
                self._set_state(FlightState.LANDED)

    def _video_loop(self, frame_callback, close_callback):
        buf = b""
        reason = None
        sock = self._video_sock
        while not self._stop.is_set():
            try:
                data = sock.recv(65536)
            except socket.timeout:
                continue
            except OSError as e:
                reason = None if self._stop.is_set() else str(e)
                break
            if not data:
                break
            buf += data
            frames, buf, dropped = parse_video_stream(buf)
            if dropped:
                log.warning("video resync dropped %d bytes", dropped)
            for header, payload in frames:
                if header.codec != protocol.CODEC_RAW_RGB24:
                    continue
                try:
                    frame = Frame.from_bytes(
                        header.display_width, header.display_height, payload)
                    frame_callback(frame)
                except Exception:
                    log.exception("frame callback failed; continuing")
        with self._lock:
            self._video_thread = None
            if self._video_sock is not None:
                try:
                    self._video_sock.close()
                except OSError:
                    pass
                self._video_sock = None
        if close_callback is not None:
            try:
                close_callback(reason)
            except Exception:
                log.exception("close callback failed")


def connect(endpoint: DroneEndpoint = DroneEndpoint(), **kwargs) -> DroneClient:
    return DroneClient(endpoint, **kwargs).connect()
