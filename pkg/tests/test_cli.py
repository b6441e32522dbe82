import io
import logging
import time

import numpy as np
import pytest

from aerovis.cli import Repl, _run_interactive, build_parser, main, repl_execute
from aerovis.sim import SimServer
from aerovis.vision.gestures import gesture_template, load_model

_BASE = [19000]


@pytest.fixture
def ports_base():
    _BASE[0] += 10
    return _BASE[0]


@pytest.fixture
def server(ports_base):
    with SimServer(ports_base=ports_base) as srv:
        yield srv


@pytest.fixture
def repl(server, ports_base):
    r = Repl(ports_base=ports_base)
    yield r
    r.execute("quit")


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "aerovis" in capsys.readouterr().out


def test_unknown_verb_is_usage_error(capsys):
    assert main(["warp-drive"]) == 2


def test_one_shot_flight_verb_without_session(capsys):
    assert main(["move", "up", "0.2"]) == 1
    assert "not connected" in capsys.readouterr().err


def test_one_shot_takeoff_without_session(capsys):
    assert main(["takeoff"]) == 1
    assert "not connected" in capsys.readouterr().err


def test_train_gestures_writes_model_and_metrics(tmp_path, capsys):
    out = tmp_path / "model.avmlp"
    assert main(["train-gestures", "--seed", "7", "--out", str(out)]) == 0
    printed = capsys.readouterr().out
    assert "train" in printed and "test" in printed
    assert "accuracy" in printed
    assert out.exists()
    load_model(out)  # parses back


def test_predict_gesture_end_to_end(tmp_path, capsys):
    model = tmp_path / "model.avmlp"
    assert main(["train-gestures", "--seed", "0", "--out", str(model)]) == 0
    capsys.readouterr()
    points = tmp_path / "points.csv"
    points.write_text(",".join(f"{v:.9f}" for v in gesture_template(0)))
    assert main(["predict-gesture", "--model", str(model),
                 "--keypoints", str(points)]) == 0
    assert "takeoff" in capsys.readouterr().out


def test_predict_gesture_missing_model_fails(tmp_path, capsys):
    points = tmp_path / "p.csv"
    points.write_text("0 " * 63)
    assert main(["predict-gesture", "--model", str(tmp_path / "nope.avmlp"),
                 "--keypoints", str(points)]) == 1
    assert "error" in capsys.readouterr().err


def test_repl_empty_line_is_quiet():
    assert Repl().execute("") == ""
    assert Repl().execute("   ") == ""


def test_repl_unknown_verb_lists_commands():
    out = Repl().execute("teleport")
    assert "unknown command" in out
    assert "takeoff" in out


def test_repl_flight_verb_before_connect():
    r = Repl()
    assert r.execute("takeoff") == "error: not connected"
    assert r.execute("telemetry") == "error: not connected"


def test_repl_move_usage_error_keeps_loop_alive():
    r = Repl()
    assert r.execute("move sideways 0.2").startswith("usage: move")
    assert r.execute("move forward fast").startswith("usage: move")
    # loop still works afterwards
    assert "unknown command" in r.execute("warp")


def test_repl_full_flight_session(repl):
    out = repl.execute("connect")
    assert out.startswith("connected")
    assert "link ok" in out
    assert repl.execute("trim") == "flat trim sent"
    assert repl.execute("takeoff") == "state: Flying"
    assert repl.execute("move right 0.2") == "moving right at 0.2"
    assert repl.execute("hover") == "state: Hovering"
    tele = repl.execute("telemetry")
    assert "battery 100%" in tele
    assert "link ok" in tele
    assert repl.execute("land") == "state: Landed"
    assert repl.execute("quit") == "bye"
    assert repl.done


def test_repl_connect_twice_is_error(repl):
    assert repl.execute("connect").startswith("connected")
    assert repl.execute("connect") == "error: already connected"


def test_repl_state_errors_are_reported_not_raised(repl):
    repl.execute("connect")
    out = repl.execute("move forward 0.2")
    assert out.startswith("error:")
    assert "Landed" in out


def test_repl_emergency_and_reset(repl):
    repl.execute("connect")
    repl.execute("takeoff")
    assert repl.execute("emergency") == "state: Emergency"
    time.sleep(0.5)
    assert repl.execute("reset") == "state: Landed"


def test_repl_tracking_toggles_and_reaches_hover(repl):
    repl.execute("connect")
    repl.execute("takeoff")
    assert repl.execute("track start") == "tracking started (blob detector)"
    # default scene target sits in the hover band dead ahead
    deadline = time.monotonic() + 3.0
    while time.monotonic() < deadline:
        if repl.tracker.last_action.value == "hover":
            break
        time.sleep(0.05)
    out = repl.execute("track stop")
    assert out == "tracking stopped (last action hover)"
    assert repl.execute("track stop") == "tracking not running"


def test_repl_track_requires_mode(repl):
    assert repl.execute("track").startswith("usage: track")
    assert repl.execute("track sideways").startswith("usage: track")


def test_repl_help_lists_usage():
    out = Repl().execute("help")
    assert "move" in out and "track" in out


def test_repl_execute_module_function_smoke():
    assert "unknown command" in repl_execute("warp")
    assert repl_execute("help").startswith("commands:")


def test_interactive_loop_reads_until_quit(capsys):
    stdin = io.StringIO("help\nbogus\nquit\n")
    stdout = io.StringIO()
    assert _run_interactive(Repl(), stdin=stdin, stdout=stdout) == 0
    text = stdout.getvalue()
    assert "commands:" in text
    assert "unknown command" in text
    assert "bye" in text


def test_interactive_loop_handles_eof(capsys):
    stdin = io.StringIO("help\n")
    stdout = io.StringIO()
    assert _run_interactive(Repl(), stdin=stdin, stdout=stdout) == 0
    assert "bye" in stdout.getvalue()


def test_parser_covers_all_verbs():
    parser = build_parser()
    text = parser.format_help()
    for verb in ("connect", "takeoff", "land", "hover", "emergency", "reset",
                 "trim", "move", "track", "telemetry", "sim", "train-gestures",
                 "predict-gesture", "gui", "disconnect", "quit"):
        assert verb in text


def test_log_level_env(monkeypatch):
    calls = {}
    monkeypatch.setenv("AEROVIS_LOG", "debug")
    monkeypatch.setattr(logging, "basicConfig",
                        lambda **kw: calls.update(kw))
    from aerovis.cli import _setup_logging
    _setup_logging()
    assert calls["level"] == logging.DEBUG
