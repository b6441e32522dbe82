"""Text interface: one binary with subcommands plus an interactive loop.

`aerovis` with no arguments drops into the command loop; flight verbs
there act on the loop's live session. The same verbs invoked as
subcommands have no session to act on and fail with "not connected"
(the simulator, trainer, and gateway verbs are self-contained and work
either way).

Exit codes: 0 success, 1 command error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time

import numpy as np

from .client import ClientError, DroneClient, DroneEndpoint, StateError
from .control import TrackAction, TrackerConfig, track_step
from .vision.detector import BlobDetector
from .vision.gestures import (
    GESTURE_NAMES,
    GestureError,
    TrainConfig,
    as_keypoints,
    load_model,
    predict_gesture,
    save_model,
    synth_gesture_dataset,
    train_gestures,
)

log = logging.getLogger(__name__)

SESSION_VERBS = ("connect", "takeoff", "land", "hover", "emergency", "reset",
                 "trim", "move", "track", "telemetry", "disconnect")
MOVE_DIRECTIONS = ("right", "left", "up", "down", "forward", "backward")

_USAGE = {
    "connect": "connect [--host HOST] [--ports-base N]",
    "takeoff": "takeoff",
    "land": "land",
    "hover": "hover",
    "emergency": "emergency",
    "reset": "reset",
    "trim": "trim",
    "move": "move {right|left|up|down|forward|backward} [SPEED]",
    "track": "track {start|stop} [--speed S]",
    "telemetry": "telemetry",
    "disconnect": "disconnect",
    "quit": "quit",
    "help": "help",
}


def _setup_logging():
    level = os.environ.get("AEROVIS_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


class _Tracker:
    """Video-thread tracking loop, toggled from the command loop."""

    def __init__(self, client: DroneClient, cfg: TrackerConfig):
        self.client = client
        self.cfg = cfg
        self.detector = BlobDetector()
        self.enabled = False
        self.video_connected = False
        self.last_action = TrackAction.HOVER

    def start(self):
        if not self.video_connected:
            self.client.connect_video(self._on_frame, lambda reason: None)
            self.video_connected = True
        self.enabled = True

    def stop(self):
        self.enabled = False

    def _on_frame(self, frame):
        if not self.enabled:
            return
        try:
            detections = self.detector.detect(frame)
            self.last_action = track_step(detections, self.cfg, self.client)
        except StateError as e:
            # not airborne yet; keep the loop alive until it is
            log.debug("tracking step skipped: %s", e)


class Repl:
    """Line-at-a-time command interpreter over one drone session."""

    def __init__(self, host: str = "127.0.0.1", ports_base: int = 5554):
        self.host = host
        self.ports_base = ports_base
        self.client: DroneClient | None = None
        self.tracker: _Tracker | None = None
        self.done = False

    def execute(self, line: str) -> str:
        """Run one command line; always returns a one-line response."""
        tokens = line.split()
        if not tokens:
            return ""
        verb, args = tokens[0], tokens[1:]
        handler = getattr(self, f"_cmd_{verb.replace('-', '_')}", None)
        if handler is None:
            return f"unknown command {verb!r}; try: " + " ".join(sorted(_USAGE))
        try:
            return handler(args)
        except _Usage as e:
            return f"usage: {e}"
        except (ClientError, GestureError, OSError) as e:
            return f"error: {e}"
        except Exception as e:  # the loop must survive anything
            log.exception("command failed")
            return f"error: {e}"

    # -- session management -------------------------------------------

    def _need_client(self) -> DroneClient:
        if self.client is None:
            raise ClientError("not connected")
        return self.client

    def _cmd_connect(self, args):
        opts = _parse_kv(args, {"--host": str, "--ports-base": int}, "connect")
        if self.client is not None:
            return "error: already connected"
        host = opts.get("--host", self.host)
        base = opts.get("--ports-base", self.ports_base)
        client = DroneClient(DroneEndpoint.from_ports_base(host=host, ports_base=base))
        client.connect()
        self.client = client
        link = "link ok" if client.telemetry_snapshot().link_ok else "no telemetry"
        return f"connected to {host} (state {client.state.value}, {link})"

    def _cmd_disconnect(self, args):
        if self.client is None:
            return "not connected"
        if self.tracker is not None:
            self.tracker.stop()
            self.tracker = None
        self.client.disconnect()
        self.client = None
        return "disconnected"

    def _cmd_quit(self, args):
        self._cmd_disconnect(args)
        self.done = True
        return "bye"

    # -- flight verbs --------------------------------------------------

    def _cmd_takeoff(self, args):
        c = self._need_client()
        c.takeoff()
        return f"state: {c.state.value}"

    def _cmd_land(self, args):
        c = self._need_client()
        c.land()
        return f"state: {c.state.value}"

    def _cmd_hover(self, args):
        c = self._need_client()
        c.hover()
        return f"state: {c.state.value}"

    def _cmd_emergency(self, args):
        c = self._need_client()
        c.emergency()
        return f"state: {c.state.value}"

    def _cmd_reset(self, args):
        c = self._need_client()
        c.reset_emergency()
        return f"state: {c.state.value}"

    def _cmd_trim(self, args):
        c = self._need_client()
        c.flat_trim()
        return "flat trim sent"

    def _cmd_move(self, args):
        if not args or args[0] not in MOVE_DIRECTIONS:
            raise _Usage(_USAGE["move"])
        speed = 0.2
        if len(args) > 1:
            try:
                speed = float(args[1])
            except ValueError:
                raise _Usage(_USAGE["move"]) from None
        if len(args) > 2:
            raise _Usage(_USAGE["move"])
        c = self._need_client()
        c.move(args[0], speed)
        return f"moving {args[0]} at {speed:g}"

    def _cmd_telemetry(self, args):
        c = self._need_client()
        s = c.telemetry_snapshot()
        return (f"battery {s.battery_percent:.0f}% alt {s.altitude_m:.2f}m "
                f"pitch {s.pitch_deg:.1f} roll {s.roll_deg:.1f} yaw {s.yaw_deg:.1f} "
                f"v ({s.vx_m_s:.2f},{s.vy_m_s:.2f},{s.vz_m_s:.2f}) "
                f"state {c.state.value} link {'ok' if s.link_ok else 'down'}")

    def _cmd_track(self, args):
        if not args or args[0] not in ("start", "stop"):
            raise _Usage(_USAGE["track"])
        opts = _parse_kv(args[1:], {"--speed": float}, "track")
        c = self._need_client()
        if args[0] == "start":
            if self.tracker is None:
                cfg = TrackerConfig(move_speed=opts.get("--speed", 0.2))
                self.tracker = _Tracker(c, cfg)
            self.tracker.start()
            return "tracking started (blob detector)"
        if self.tracker is None or not self.tracker.enabled:
            return "tracking not running"
        self.tracker.stop()
        return f"tracking stopped (last action {self.tracker.last_action.value})"

    # -- non-session verbs keep working inside the loop ----------------

    def _cmd_train_gestures(self, args):
        opts = _parse_kv(args, {"--seed": int, "--out": str}, "train-gestures")
        return _train_gestures(opts.get("--seed", 0), opts.get("--out"))

    def _cmd_predict_gesture(self, args):
        opts = _parse_kv(args, {"--model": str, "--keypoints": str}, "predict-gesture")
        if "--model" not in opts or "--keypoints" not in opts:
            raise _Usage("predict-gesture --model FILE --keypoints FILE")
        return _predict_gesture(opts["--model"], opts["--keypoints"])

    def _cmd_sim(self, args):
        return "run 'aerovis sim' in its own terminal; the loop stays interactive"

    def _cmd_gui(self, args):
        return "run 'aerovis gui' in its own terminal; the loop stays interactive"

    def _cmd_help(self, args):
        return "commands: " + "; ".join(sorted(_USAGE.values()))


class _Usage(Exception):
    pass


def _parse_kv(args, spec: dict, verb: str) -> dict:
    """Parse --flag value pairs for the command loop."""
    out = {}
    i = 0
    while i < len(args):
        flag = args[i]
        if flag not in spec or i + 1 >= len(args):
            raise _Usage(_USAGE.get(verb, verb))
        try:
            out[flag] = spec[flag](args[i + 1])
        except ValueError:
            raise _Usage(_USAGE.get(verb, verb)) from None
        i += 2
    return out


def _train_gestures(seed: int, out_path) -> str:
    X, y = synth_gesture_dataset(seed=seed)
    params, metrics = train_gestures(X, y, TrainConfig(seed=seed))
    sizes = metrics["split_sizes"]
    lines = [
        f"train      {sizes[0]:4d} samples  accuracy {metrics['train_accuracy']:.3f}",
        f"validation {sizes[1]:4d} samples  accuracy {metrics['val_accuracy']:.3f}",
        f"test       {sizes[2]:4d} samples  accuracy {metrics['test_accuracy']:.3f}",
    ]
    if out_path:
        save_model(out_path, params)
        lines.append(f"model written to {out_path}")
    return "\n".join(lines)


def _predict_gesture(model_path, keypoints_path) -> str:
    params = load_model(model_path)
    raw = open(keypoints_path, "r", encoding="ascii").read().replace(",", " ")
    keypoints = as_keypoints(np.array([float(t) for t in raw.split()]))
    label, conf = predict_gesture(params, keypoints)
    return f"{GESTURE_NAMES[label]} ({conf:.3f})"


_default_repl: Repl | None = None


def repl_execute(line: str) -> str:
    """Run one command line against the process-wide session."""
    global _default_repl
    if _default_repl is None:
        _default_repl = Repl()
    return _default_repl.execute(line)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="aerovis",
        description="Ground control for AR.Drone-class quadrotors: flight, "
                    "tracking, gesture training, and a software drone.")
    sub = p.add_subparsers(dest="verb")

    def add(name, **kwargs):
        sp = sub.add_parser(name, **kwargs)
        return sp

    con = add("connect", help="connect and enter the interactive loop")
    con.add_argument("--host", default="127.0.0.1")
    con.add_argument("--ports-base", type=int, default=5554)

    for verb in ("takeoff", "land", "hover", "emergency", "reset", "trim",
                 "telemetry", "disconnect", "quit"):
        add(verb, help=f"{verb} (interactive loop verb)")
    mv = add("move", help="move (interactive loop verb)")
    mv.add_argument("direction", choices=MOVE_DIRECTIONS)
    mv.add_argument("speed", nargs="?", type=float, default=0.2)
    tr = add("track", help="toggle tracking (interactive loop verb)")
    tr.add_argument("mode", choices=("start", "stop"))
    tr.add_argument("--speed", type=float, default=0.2)

    sim = add("sim", help="run the software drone")
    sim.add_argument("--host", default="127.0.0.1")
    sim.add_argument("--ports-base", type=int, default=5554)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--scene", help="key=value scene file")

    tg = add("train-gestures", help="train the gesture classifier")
    tg.add_argument("--seed", type=int, default=0)
    tg.add_argument("--out", help="model output path")

    pg = add("predict-gesture", help="classify one keypoint vector")
    pg.add_argument("--model", required=True)
    pg.add_argument("--keypoints", required=True,
                    help="file with 63 numbers (comma or space separated)")

    gui = add("gui", help="serve the browser ground station")
    gui.add_argument("--host", default="127.0.0.1")
    gui.add_argument("--port", type=int, default=8642)
    gui.add_argument("--drone-host", default="127.0.0.1")
    gui.add_argument("--ports-base", type=int, default=5554)
    return p


def _run_sim(args) -> int:
    from .sim import SimConfig, SimScene, SimServer, load_scene

    config = SimConfig(seed=args.seed)
    scene = SimScene()
    if args.scene:
        scene, overrides = load_scene(args.scene)
        if overrides:
            config = dataclasses.replace(config, **overrides)
    server = SimServer(config, scene, host=args.host, ports_base=args.ports_base)
    server.start()
    print(f"sim up: navdata {server.navdata_port}, video {server.video_port}, "
          f"commands {server.command_port} (Ctrl-C stops)")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _run_interactive(repl: Repl, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    print("aerovis command loop; 'help' lists commands, 'quit' exits.",
          file=stdout)
    while not repl.done:
        print("aerovis> ", end="", file=stdout, flush=True)
        line = stdin.readline()
        if not line:
            print(repl.execute("quit"), file=stdout)
            break
        response = repl.execute(line.strip())
        if response:
            print(response, file=stdout)
    return 0


def main(argv=None) -> int:
    _setup_logging()
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.verb is None:
        return _run_interactive(Repl())
    try:
        if args.verb == "sim":
            return _run_sim(args)
        if args.verb == "train-gestures":
            print(_train_gestures(args.seed, args.out))
            return 0
        if args.verb == "predict-gesture":
            print(_predict_gesture(args.model, args.keypoints))
            return 0
        if args.verb == "gui":
            from .gateway import serve
            serve(host=args.host, port=args.port, drone_host=args.drone_host,
                  ports_base=args.ports_base)
            return 0
        if args.verb == "connect":
            repl = Repl(host=args.host, ports_base=args.ports_base)
            response = repl.execute(
                f"connect --host {args.host} --ports-base {args.ports_base}")
            print(response)
            if response.startswith("error"):
                return 1
            return _run_interactive(repl)
        if args.verb == "quit":
            return 0
        # flight verbs without a session cannot do anything useful
        print("error: not connected (run 'aerovis' for the interactive loop)",
              file=sys.stderr)
        return 1
    except (ClientError, GestureError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
