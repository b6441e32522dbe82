"""Frame/box types, the detector interface, and the color-blob reference
detector.

The blob detector is written from scratch: channel-tolerance matching, then
4-connected component labeling via run-length union-find (rows are split
into runs of matching pixels; runs in adjacent rows that overlap in columns
are merged). numpy is used for the pixel mask and run extraction only.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Frame:
    """RGB8 image, row-major."""
    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3):
            raise ValueError(f"pixel buffer shape {self.pixels.shape} does not match "
                             f"{self.height}x{self.width}x3")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "Frame":
        if len(data) != width * height * 3:
            raise ValueError(f"expected {width * height * 3} bytes, got {len(data)}")
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3).copy()
        return cls(width, height, arr)

    def to_bytes(self) -> bytes:
        return self.pixels.tobytes()


@dataclass(frozen=True)
class NormalizedBox:
    """Center-format bounding box in frame-relative units."""
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.x <= 1.0 and 0.0 <= self.y <= 1.0):
            raise ValueError(f"box center ({self.x}, {self.y}) outside [0, 1]^2")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box extent must be positive")


@dataclass(frozen=True)
class Detection:
    box: NormalizedBox
    class_id: int = 0
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


class Detector(ABC):
    """Anything that turns a frame into detections."""

    @abstractmethod
    def detect(self, frame: Frame) -> list[Detection]: ...


def _match_runs(mask: np.ndarray):
    """Split a boolean mask into per-row runs. Returns (rows, col_start,
    col_end) with end exclusive; runs are ordered by (row, col)."""
    h, w = mask.shape
    padded = np.zeros((h, w + 1), dtype=bool)
    padded[:, :w] = mask
    flat = padded.ravel()
    d = np.diff(flat.astype(np.int8), prepend=np.int8(0))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    rows = starts // (w + 1)
    return rows, starts - rows * (w + 1), ends - rows * (w + 1)


class _RunUnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def union(self, a: int, b: int):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def detect_blob(frame: Frame, target_color, tolerance: int = 30,
                min_area_px: int = 30) -> list[Detection]:
    """Find 4-connected components of pixels within per-channel `tolerance`
    of `target_color`; one Detection per component with area >= min_area_px,
    sorted by area descending. Box = the component's pixel bounding box
    normalized by the frame dimensions; confidence = matched pixels / box
    area in pixels."""
    if tolerance < 0:
        raise ValueError("tolerance must be >= 0")
    if frame.width == 0 or frame.height == 0:
        return []
    target = np.asarray(target_color, dtype=np.int16)
    diff = np.abs(frame.pixels.astype(np.int16) - target)
    mask = (diff <= tolerance).all(axis=2)
    if not mask.any():
        return []

    rows, c0, c1 = _match_runs(mask)
    n = len(rows)
    uf = _RunUnionFind(n)

    # row -> slice of run indices (runs are sorted by row)
    row_starts = np.searchsorted(rows, np.arange(frame.height + 1))
    for r in range(1, frame.height):
        a, a_end = row_starts[r - 1], row_starts[r]
        b, b_end = row_starts[r], row_starts[r + 1]
        # two-pointer sweep over the sorted runs of adjacent rows
        while a < a_end and b < b_end:
            if c0[a] < c1[b] and c0[b] < c1[a]:
                uf.union(a, b)
            if c1[a] <= c1[b]:
                a += 1
            else:
                b += 1

    comps: dict[int, list[int]] = {}  # root -> [min_row, max_row, min_col, max_col, area]
    for i in range(n):
        root = uf.find(i)
        length = int(c1[i] - c0[i])
        entry = comps.get(root)
        if entry is None:
            comps[root] = [int(rows[i]), int(rows[i]), int(c0[i]), int(c1[i]) - 1, length]
        else:
            entry[0] = min(entry[0], int(rows[i]))
            entry[1] = max(entry[1], int(rows[i]))
            entry[2] = min(entry[2], int(c0[i]))
            entry[3] = max(entry[3], int(c1[i]) - 1)
            entry[4] += length

    w, h = frame.width, frame.height
    detections = []
    for min_row, max_row, min_col, max_col, area in comps.values():
        if area < min_area_px:
            continue
        box = NormalizedBox(
            x=(min_col + max_col + 1) / (2 * w),
            y=(min_row + max_row + 1) / (2 * h),
            w=(max_col - min_col + 1) / w,
            h=(max_row - min_row + 1) / h,
        )
        box_pixels = (max_col - min_col + 1) * (max_row - min_row + 1)
        detections.append((area, Detection(box, class_id=0, confidence=area / box_pixels)))
    detections.sort(key=lambda t: t[0], reverse=True)
    return [d for _, d in detections]


class BlobDetector(Detector):
    """Reference detector: single color blob, class id 0. Immutable after
    construction; safe to share across threads."""

    def __init__(self, target_color=(220, 60, 60), tolerance: int = 30,
                 min_area_px: int = 30):
        self.target_color = tuple(int(c) for c in target_color)
        self.tolerance = int(tolerance)
        self.min_area_px = int(min_area_px)

    def detect(self, frame: Frame) -> list[Detection]:
        return detect_blob(frame, self.target_color, self.tolerance, self.min_area_px)
