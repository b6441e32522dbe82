"""Image-space tracking control law and the gesture command table.

The tracker steers the drone so the selected detection sits inside the
hover band |x-0.5| <= 0.1, |y-0.5| <= 0.3, |h-0.5| <= 0.3 (all in
normalized image coordinates). Outside the band a single corrective
action is chosen by a fixed decision ladder: hover band first, then
horizontal error, vertical error, and box height. Box width never
influences the decision.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .vision.detector import Detection, NormalizedBox
from .vision.gestures import GESTURE_NAMES


class TrackAction(enum.Enum):
    """The one corrective action chosen per control step."""

    HOVER = "hover"
    RIGHT = "right"
    LEFT = "left"
    DOWN = "down"
    UP = "up"
    BACKWARD = "backward"
    FORWARD = "forward"


# ladder order: index i is the i-th rule tested by take_action
LADDER = (
    TrackAction.HOVER,
    TrackAction.RIGHT,
    TrackAction.LEFT,
    TrackAction.DOWN,
    TrackAction.UP,
    TrackAction.BACKWARD,
    TrackAction.FORWARD,
)


@dataclass(frozen=True)
class TrackerConfig:
    eps_horizontal: float = 0.1
    eps_vertical: float = 0.3
    eps_height: float = 0.3
    target_class: int = 0
    move_speed: float = 0.2
    # with the default rule backward fires at h >= 1 + eps_height, which
    # no normalized h <= 1 can reach; the corrected rule centres the
    # test on the hover band instead (h >= 0.5 + eps_height)
    corrected_height_rule: bool = False
    hover_on_no_detection: bool = True

    def __post_init__(self):
        for name in ("eps_horizontal", "eps_vertical", "eps_height"):
            v = getattr(self, name)
            if not 0.0 < v < 0.5:
                raise ValueError(f"{name} must be in (0, 0.5), got {v}")
        if not 0.0 < self.move_speed <= 1.0:
            raise ValueError(f"move_speed must be in (0, 1], got {self.move_speed}")

    @property
    def backward_threshold(self) -> float:
        if self.corrected_height_rule:
            return 0.5 + self.eps_height
        return 1.0 + self.eps_height


def take_action(box: NormalizedBox, cfg: TrackerConfig = TrackerConfig()) -> TrackAction:
    """Pick the corrective action for one detection box.

    The ladder is order-sensitive and every comparison is inclusive, so
    at a shared boundary the earlier rule wins (the hover band beats
    right at x = 0.6 exactly). Total: every box maps to exactly one
    action.
    """
    x, y, h = box.x, box.y, box.h
    if (
        abs(x - 0.5) <= cfg.eps_horizontal
        and abs(y - 0.5) <= cfg.eps_vertical
        and abs(h - 0.5) <= cfg.eps_height
    ):
        return TrackAction.HOVER
    if x >= 0.5 + cfg.eps_horizontal:
        return TrackAction.RIGHT
    if x <= 0.5 - cfg.eps_horizontal:
        return TrackAction.LEFT
    if y >= 0.5 + cfg.eps_vertical:
        return TrackAction.DOWN
    if y <= 0.5 - cfg.eps_vertical:
        return TrackAction.UP
    if h >= cfg.backward_threshold:
        return TrackAction.BACKWARD
    return TrackAction.FORWARD


def take_action_grid(x, y, h, cfg: TrackerConfig = TrackerConfig()) -> np.ndarray:
    """Vectorized ladder over parallel coordinate arrays.

    Returns int8 indices into LADDER; semantics match take_action
    applied elementwise (np.select keeps the first true condition).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    eh, ev, ez = cfg.eps_horizontal, cfg.eps_vertical, cfg.eps_height
    conds = [
        (np.abs(x - 0.5) <= eh) & (np.abs(y - 0.5) <= ev) & (np.abs(h - 0.5) <= ez),
        x >= 0.5 + eh,
        x <= 0.5 - eh,
        y >= 0.5 + ev,
        y <= 0.5 - ev,
        h >= cfg.backward_threshold,
    ]
    return np.select(conds, np.arange(6, dtype=np.int8), default=np.int8(6))


def track_step(detections: Sequence[Detection], cfg: TrackerConfig, session) -> TrackAction:
    """Run one control step over a frame's detections.

    Detections of other classes are ignored; with none left the step
    hovers (the wire command gated by hover_on_no_detection). Otherwise
    the first detection drives the ladder and the session receives
    hover() or move(direction, move_speed). The chosen action is
    returned for annotation and telemetry; session state errors
    propagate.
    """
    targets = [d for d in detections if d.class_id == cfg.target_class]
    if not targets:
        if cfg.hover_on_no_detection:
            session.hover()
        return TrackAction.HOVER
    action = take_action(targets[0].box, cfg)
    if action is TrackAction.HOVER:
        session.hover()
    else:
        session.move(action.value, cfg.move_speed)
    return action


def gesture_to_command(label, session, speed: float = 0.2) -> str:
    """Dispatch a classified gesture to the matching flight command.

    Fixed table: takeoff and land drive the state machine directly; the
    four directional gestures map to move() at a fixed speed. Accepts a
    label index or name; session state errors propagate unchanged.
    """
    if isinstance(label, str):
        name = label
    else:
        idx = int(label)
        if not 0 <= idx < len(GESTURE_NAMES):
            raise ValueError(f"gesture label {label} out of range")
        name = GESTURE_NAMES[idx]
    if name not in GESTURE_NAMES:
        raise ValueError(f"unknown gesture {name!r}")
    if name == "takeoff":
        session.takeoff()
    elif name == "land":
        session.land()
    else:
        session.move(name, speed)
    return name
