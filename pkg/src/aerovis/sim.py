"""Software drone: speaks the wire protocol over real sockets and flies
first-order kinematics around a single-target scene.

Split in two layers so tests can pick their clock:

* SimCore owns all mutable state and is driven by explicit step(dt)
  calls: same seed + same timed command trace gives a byte-identical
  telemetry trace.
* SimServer wraps a core with the three sockets (command/navdata UDP,
  video TCP) and a realtime 30 Hz loop; network receivers only enqueue,
  the loop is the single writer.
"""

from __future__ import annotations

import enum
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import protocol
from .protocol import AtCommand, DemoOption, ParseError
from .vision.detector import NormalizedBox

log = logging.getLogger(__name__)

NAVDATA_TRIGGER = b"\x01\x00\x00\x00"
WATCHDOG_TIMEOUT_S = 2.0
TAKEOFF_ALTITUDE_M = 1.0
EMERGENCY_DESCENT_M_S = 2.0
TILT_MAX_DEG = 12.0  # reported attitude per full stick deflection


class SimError(Exception):
    pass


class SimMode(enum.Enum):
    LANDED = "landed"
    TAKING_OFF = "taking_off"
    FLYING = "flying"
    LANDING = "landing"
    EMERGENCY = "emergency"

    @property
    def airborne(self) -> bool:
        return self in (SimMode.TAKING_OFF, SimMode.FLYING, SimMode.LANDING)


# rough AR.Drone control-state codes for the DEMO ctrl_state high word
_CTRL_CODES = {
    SimMode.LANDED: 2,
    SimMode.FLYING: 3,
    SimMode.TAKING_OFF: 6,
    SimMode.LANDING: 8,
    SimMode.EMERGENCY: 0,
}


@dataclass(frozen=True)
class SimConfig:
    frame_width: int = 640
    frame_height: int = 360
    video_rate_hz: float = 10.0
    navdata_rate_hz: float = 30.0
    physics_dt: float = 1.0 / 30.0
    v_max: float = 2.0        # m/s at full pitch/roll stick
    vz_max: float = 1.0       # m/s at full gaz stick
    yaw_max: float = 100.0    # deg/s at full yaw stick
    battery_drain: float = 0.1  # %/s while airborne
    link_range_m: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValueError("frame dimensions must be positive")
        for name in ("video_rate_hz", "navdata_rate_hz", "physics_dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SimScene:
    target_x: float = 4.0
    target_y: float = 0.0
    target_z: float = 0.85
    target_height: float = 1.7
    target_color: tuple = (220, 60, 60)
    background_color: tuple = (24, 24, 24)

    def __post_init__(self):
        if self.target_height <= 0:
            raise ValueError("target_height must be positive")
        if tuple(self.target_color) == tuple(self.background_color):
            raise ValueError("target and background colors must differ")


_SCENE_FLOAT_KEYS = ("target_x", "target_y", "target_z", "target_height")
_SCENE_COLOR_KEYS = ("target_color", "background_color")
_SCENE_FRAME_KEYS = ("frame_width", "frame_height")


def parse_scene_text(text: str) -> tuple[SimScene, dict]:
    """Parse flat key=value scene text. Returns the scene plus any
    frame-size overrides ({} when the file does not set them)."""
    fields: dict = {}
    overrides: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SimError(f"scene line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key in _SCENE_FLOAT_KEYS:
                fields[key] = float(value)
            elif key in _SCENE_COLOR_KEYS:
                parts = [int(p) for p in value.split(",")]
                if len(parts) != 3 or not all(0 <= p <= 255 for p in parts):
                    raise ValueError(value)
                fields[key] = tuple(parts)
            elif key in _SCENE_FRAME_KEYS:
                overrides[key] = int(value)
            else:
                raise SimError(f"scene line {lineno}: unknown key {key!r}")
        except SimError:
            raise
        except ValueError:
            raise SimError(f"scene line {lineno}: bad value {value!r} for {key}") from None
    return SimScene(**fields), overrides


def load_scene(path) -> tuple[SimScene, dict]:
    with open(path, "r", encoding="ascii") as f:
        return parse_scene_text(f.read())


@dataclass
class SimDrone:
    px: float = 0.0
    py: float = 0.0
    pz: float = 0.0
    yaw_deg: float = 0.0
    # commanded sticks, [-1, 1]
    roll: float = 0.0
    pitch: float = 0.0
    gaz: float = 0.0
    yaw_rate: float = 0.0
    # last step's body-frame velocities, m/s
    v_fwd: float = 0.0
    v_lat: float = 0.0
    v_z: float = 0.0
    mode: SimMode = SimMode.LANDED
    battery: float = 100.0
    watchdog_s: float = 0.0
    watchdog_latched: bool = False
    last_seq: int = 0
    pitch_bias_deg: float = 0.0
    roll_bias_deg: float = 0.0

    def zero_sticks(self):
        self.roll = self.pitch = self.gaz = self.yaw_rate = 0.0


class SimCore:
    """Deterministic drone state machine, one instance per sim."""

    def __init__(self, config: SimConfig = SimConfig(), scene: SimScene = SimScene()):
        self.config = config
        self.scene = scene
        self.drone = SimDrone()
        rng = np.random.default_rng(config.seed)
        # uncalibrated attitude reference; FTRIM zeroes it
        self.drone.pitch_bias_deg = float(rng.uniform(-1.0, 1.0))
        self.drone.roll_bias_deg = float(rng.uniform(-1.0, 1.0))
        self.time_s = 0.0
        self.demo_enabled = False
        self.navdata_seq = 0
        self.frame_number = 0
        # REF emergency acts on 0 -> 1 transitions only, so the 30 ms
        # command repetition cannot oscillate the state
        self._ref_emergency_prev = False

    # -- commands ------------------------------------------------------

    def apply_command(self, cmd: AtCommand) -> bool:
        """Apply one parsed command. Returns False for dropped (stale)
        commands. seq 1 always starts a fresh session window."""
        d = self.drone
        if cmd.seq == 1:
            d.last_seq = 0
        if cmd.seq <= d.last_seq:
            return False
        d.last_seq = cmd.seq
        # any accepted command proves the link is alive
        d.watchdog_s = 0.0
        if d.watchdog_latched:
            d.watchdog_latched = False
        if cmd.kind == "REF":
            self._apply_ref(cmd.ref.takeoff, cmd.ref.emergency)
        elif cmd.kind == "PCMD":
            if cmd.pcmd.progressive:
                p = cmd.pcmd.clamped()
                d.roll, d.pitch, d.gaz, d.yaw_rate = p.roll, p.pitch, p.gaz, p.yaw
            else:
                d.zero_sticks()
        elif cmd.kind == "FTRIM":
            if d.mode is SimMode.LANDED:
                d.pitch_bias_deg = 0.0
                d.roll_bias_deg = 0.0
        elif cmd.kind == "CONFIG":
            if cmd.config_key == "general:navdata_demo":
                self.demo_enabled = cmd.config_value == "TRUE"
        # COMWDG needs nothing beyond the watchdog reset above
        return True

    def _apply_ref(self, takeoff: bool, emergency: bool):
        d = self.drone
        edge = emergency and not self._ref_emergency_prev
        self._ref_emergency_prev = emergency
        if edge:
            if d.mode is SimMode.EMERGENCY:
                if d.pz <= 0.0:
                    d.mode = SimMode.LANDED
            else:
                d.mode = SimMode.EMERGENCY
                d.zero_sticks()
            return
        if d.mode is SimMode.EMERGENCY:
            return
        if takeoff:
            if d.mode is SimMode.LANDED:
                d.mode = SimMode.TAKING_OFF
                d.zero_sticks()
        else:
            if d.mode in (SimMode.TAKING_OFF, SimMode.FLYING):
                d.mode = SimMode.LANDING
                d.zero_sticks()

    # -- physics -------------------------------------------------------

    def step(self, dt: float):
        c, d = self.config, self.drone
        d.watchdog_s += dt
        if d.watchdog_s > WATCHDOG_TIMEOUT_S and not d.watchdog_latched:
            d.watchdog_latched = True
        if d.watchdog_latched or d.mode is SimMode.EMERGENCY:
            d.zero_sticks()
        d.v_fwd = d.v_lat = d.v_z = 0.0
        if d.mode is SimMode.TAKING_OFF:
            d.v_z = c.vz_max
            d.pz = min(d.pz + c.vz_max * dt, TAKEOFF_ALTITUDE_M)
            if d.pz >= TAKEOFF_ALTITUDE_M:
                d.mode = SimMode.FLYING
        elif d.mode is SimMode.FLYING:
            d.v_fwd = -d.pitch * c.v_max
            d.v_lat = d.roll * c.v_max
            d.v_z = d.gaz * c.vz_max
            psi = math.radians(d.yaw_deg)
            d.px += (d.v_fwd * math.cos(psi) - d.v_lat * math.sin(psi)) * dt
            d.py += (d.v_fwd * math.sin(psi) + d.v_lat * math.cos(psi)) * dt
            d.pz = max(d.pz + d.v_z * dt, 0.0)
            d.yaw_deg += d.yaw_rate * c.yaw_max * dt
            d.yaw_deg = (d.yaw_deg + 180.0) % 360.0 - 180.0
        elif d.mode is SimMode.LANDING:
            d.v_z = -c.vz_max
            d.pz = max(d.pz - c.vz_max * dt, 0.0)
            if d.pz <= 0.0:
                d.mode = SimMode.LANDED
                d.zero_sticks()
        elif d.mode is SimMode.EMERGENCY and d.pz > 0.0:
            d.pz = max(d.pz - EMERGENCY_DESCENT_M_S * dt, 0.0)
        if d.mode.airborne:
            d.battery = max(d.battery - c.battery_drain * dt, 0.0)
        self.time_s += dt

    # -- outputs -------------------------------------------------------

    def state_mask(self) -> int:
        d = self.drone
        mask = 0
        if d.mode.airborne:
            mask |= protocol.STATE_FLYING
        if d.battery < 20.0:
            mask |= protocol.STATE_BATTERY_LOW
        if d.watchdog_latched:
            mask |= protocol.STATE_WATCHDOG
        if d.mode is SimMode.EMERGENCY:
            mask |= protocol.STATE_EMERGENCY
        return mask

    def navdata_packet(self) -> bytes:
        d = self.drone
        self.navdata_seq += 1
        options = []
        if self.demo_enabled:
            options.append(DemoOption(
                ctrl_state=_CTRL_CODES[d.mode] << 16,
                battery_percent=int(round(d.battery)),
                pitch_mdeg=(d.pitch * TILT_MAX_DEG + d.pitch_bias_deg) * 1000.0,
                roll_mdeg=(d.roll * TILT_MAX_DEG + d.roll_bias_deg) * 1000.0,
                yaw_mdeg=d.yaw_deg * 1000.0,
                altitude_mm=int(round(d.pz * 1000.0)),
                vx_mm_s=d.v_fwd * 1000.0,
                vy_mm_s=d.v_lat * 1000.0,
                vz_mm_s=d.v_z * 1000.0,
            ).to_option())
        return protocol.build_navdata(self.state_mask(), self.navdata_seq, options)

    def link_alive(self) -> bool:
        d = self.drone
        return math.hypot(d.px, d.py, d.pz) <= self.config.link_range_m

    def project_target(self) -> NormalizedBox | None:
        """Pinhole projection of the scene target onto the image plane.
        None when behind/too close (forward distance <= 0.5 m) or when
        the projected center leaves the frame."""
        d, s = self.drone, self.scene
        psi = math.radians(d.yaw_deg)
        dx, dy = s.target_x - d.px, s.target_y - d.py
        d_f = math.cos(psi) * dx + math.sin(psi) * dy
        if d_f <= 0.5:
            return None
        d_l = -math.sin(psi) * dx + math.cos(psi) * dy
        d_v = s.target_z - d.pz
        x = 0.5 + d_l / d_f
        y = 0.5 - d_v / d_f
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            return None
        h = min(1.0, s.target_height / d_f)
        return NormalizedBox(x=x, y=y, w=0.4 * h, h=h)

    def render_frame(self) -> np.ndarray:
        c, s = self.config, self.scene
        frame = np.empty((c.frame_height, c.frame_width, 3), dtype=np.uint8)
        frame[:] = np.array(s.background_color, dtype=np.uint8)
        box = self.project_target()
        if box is not None:
            w, h = c.frame_width, c.frame_height
            left = int(round((box.x - box.w / 2) * w))
            right = int(round((box.x + box.w / 2) * w))
            top = int(round((box.y - box.h / 2) * h))
            bottom = int(round((box.y + box.h / 2) * h))
            left, right = max(left, 0), min(right, w)
            top, bottom = max(top, 0), min(bottom, h)
            if right > left and bottom > top:
                frame[top:bottom, left:right] = np.array(s.target_color, dtype=np.uint8)
        return frame

    def video_chunk(self) -> bytes:
        """One header+payload unit for the TCP stream."""
        frame = self.render_frame()
        self.frame_number += 1
        header = protocol.raw_frame_header(
            self.config.frame_width, self.config.frame_height, self.frame_number)
        return protocol.encode_video_header(header) + frame.tobytes()


def _parse_command_datagram(data: bytes) -> list[AtCommand]:
    """A datagram may carry several CR-terminated lines; bad lines are
    logged and skipped (robustness over strictness on this path)."""
    commands = []
    for line in data.split(b"\r"):
        if not line:
            continue
        try:
            commands.append(protocol.parse_at(line + b"\r"))
        except ParseError as e:
            log.warning("dropping unparseable command %r: %s", line[:60], e)
    return commands


class SimServer:
    """Realtime wrapper: three sockets, one 30 Hz physics/IO thread.

    Port layout from ports_base B: navdata UDP on B, video TCP on B+1,
    commands UDP on B+2 (base 5554 gives the standard 5554/5555/5556).
    """

    def __init__(self, config: SimConfig = SimConfig(), scene: SimScene = SimScene(),
                 host: str = "127.0.0.1", ports_base: int = protocol.NAVDATA_PORT):
        self.core = SimCore(config, scene)
        self.host = host
        self.navdata_port = ports_base
        self.video_port = ports_base + 1
        self.command_port = ports_base + 2
        self._lock = threading.Lock()
        self._commands: queue.Queue = queue.Queue()
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._navdata_target = None
        self._video_clients: list[socket.socket] = []
        self._cmd_sock = self._nav_sock = self._video_sock = None
        self._running = False

    # -- lifecycle -----------------------------------------------------

    def start(self):
        if self._running:
            raise SimError("sim already running")
        try:
            self._nav_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._nav_sock.bind((self.host, self.navdata_port))
            self._cmd_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._cmd_sock.bind((self.host, self.command_port))
            self._video_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._video_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._video_sock.bind((self.host, self.video_port))
            self._video_sock.listen(4)
        except OSError:
            self._close_sockets()
            raise
        self._stop.clear()
        self._running = True
        for name, fn in (("sim-cmd", self._command_recv_loop),
                         ("sim-nav", self._navdata_recv_loop),
                         ("sim-accept", self._video_accept_loop),
                         ("sim-physics", self._physics_loop)):
            t = threading.Thread(target=fn, name=name, daemon=True)
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        if not self._running:
            return
        self._stop.set()
        # unblock the receivers: a closed fd does not wake a thread that
        # is already parked in recvfrom/accept, so poke each socket first
        for port in (self.command_port, self.navdata_port):
            try:
                poke = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
                poke.sendto(b"", (self.host, port))
                poke.close()
            except OSError:
                pass
        try:
            socket.create_connection((self.host, self.video_port), timeout=0.5).close()
        except OSError:
            pass
        self._close_sockets()
        for t in self._threads:
            t.join(timeout=2.0)
        self._threads.clear()
        with self._lock:
            for s in self._video_clients:
                try:
                    s.close()
                except OSError:
                    pass
            self._video_clients.clear()
        self._running = False

    def _close_sockets(self):
        for s in (self._cmd_sock, self._nav_sock, self._video_sock):
            if s is not None:
                try:
                    s.close()
                except OSError:
                    pass
        self._cmd_sock = self._nav_sock = self._video_sock = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- state access for tests ---------------------------------------

    def drone_snapshot(self) -> dict:
        with self._lock:
            d = self.core.drone
            return {
                "px": d.px, "py": d.py, "pz": d.pz, "yaw_deg": d.yaw_deg,
                "mode": d.mode.value, "battery": d.battery,
                "watchdog_latched": d.watchdog_latched,
                "state_mask": self.core.state_mask(),
                "time_s": self.core.time_s,
            }

    def place_drone(self, px=None, py=None, pz=None, yaw_deg=None, battery=None):
        """Test/scenario hook: teleport state between steps."""
        with self._lock:
            d = self.core.drone
            if px is not None:
                d.px = px
            if py is not None:
                d.py = py
            if pz is not None:
                d.pz = pz
            if yaw_deg is not None:
                d.yaw_deg = yaw_deg
            if battery is not None:
                d.battery = battery

    # -- network loops -------------------------------------------------

    def _command_recv_loop(self):
        while not self._stop.is_set():
            try:
                data, _addr = self._cmd_sock.recvfrom(4096)
            except OSError:
                return
            if data:
                for cmd in _parse_command_datagram(data):
                    self._commands.put(cmd)

    def _navdata_recv_loop(self):
        while not self._stop.is_set():
            try:
                data, addr = self._nav_sock.recvfrom(64)
            except OSError:
                return
            if data[:1] == NAVDATA_TRIGGER[:1]:
                with self._lock:
                    self._navdata_target = addr

    def _video_accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _addr = self._video_sock.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._video_clients.append(conn)

    def _physics_loop(self):
        dt = self.core.config.physics_dt
        nav_period = 1.0 / self.core.config.navdata_rate_hz
        video_period = 1.0 / self.core.config.video_rate_hz
        next_tick = time.monotonic()
        nav_due = video_due = 0.0
        while not self._stop.is_set():
            with self._lock:
                while True:
                    try:
                        self.core.apply_command(self._commands.get_nowait())
                    except queue.Empty:
                        break
                self.core.step(dt)
                emitting = self.core.link_alive()
                nav_due += dt
                video_due += dt
                navdata = None
                if emitting and nav_due >= nav_period and self._navdata_target:
                    nav_due = 0.0
                    navdata = (self.core.navdata_packet(), self._navdata_target)
                chunk = None
                if emitting and video_due >= video_period and self._video_clients:
                    video_due = 0.0
                    chunk = self.core.video_chunk()
            if navdata is not None:
                try:
                    self._nav_sock.sendto(*navdata)
                except OSError:
                    pass
            if chunk is not None:
                self._send_video(chunk)
            next_tick += dt
            delay = next_tick - time.monotonic()
            if delay > 0:
                self._stop.wait(delay)
            else:
                next_tick = time.monotonic()

    def _send_video(self, chunk: bytes):
        with self._lock:
            clients = list(self._video_clients)
        dead = []
        for s in clients:
            try:
                s.sendall(chunk)
            except OSError:
                dead.append(s)
        if dead:
            with self._lock:
                for s in dead:
                    if s in self._video_clients:
                        self._video_clients.remove(s)
                    try:
                        s.close()
                    except OSError:
                        pass
