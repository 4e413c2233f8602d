"""Scripted stand-in for the camera + object detector.

Targets follow waypoint trajectories; every video frame each target is
projected into the image, perturbed with seeded pixel and depth noise,
randomly dropped, and stamped with the frame time plus a fixed detection
latency.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .scene import Trajectory
from .vision import CameraModel, DetectionEvent, project_to_pixel

CSV_COLUMNS = ("t_s", "x_px", "y_px", "w_px", "h_px", "depth_m", "target_label")


@dataclass(frozen=True)
class TargetScript:
    label: str
    trajectory: Trajectory
    fps: float = 30.0
    pixel_noise: float = 2.0
    depth_noise: float = 0.02
    dropout: float = 0.0
    latency: float = 0.064
    # bounding box (width, height) in pixels at 1 m; scales with 1/depth
    box_size: tuple[float, float] = (160.0, 320.0)

    def __post_init__(self) -> None:
        if not self.fps > 0:
            raise ValueError(f"{self.label}: fps must be > 0")
        if self.pixel_noise < 0 or self.depth_noise < 0:
            raise ValueError(f"{self.label}: noise levels must be >= 0")
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"{self.label}: dropout must lie in [0, 1]")


@dataclass(frozen=True)
class TrajectoryScript:
    targets: tuple[TargetScript, ...]
    duration: float

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ValueError("script duration must be > 0")
        object.__setattr__(self, "targets", tuple(self.targets))


def generate_detections(
    script: TrajectoryScript, camera: CameraModel, seed: int = 0
) -> list[DetectionEvent]:
    """Render the script into a time-ordered list of detections (deterministic per seed)."""
    rng = np.random.default_rng(seed)
    events: list[DetectionEvent] = []
    for target in script.targets:
        n_frames = int(np.floor(script.duration * target.fps + 1e-9))
        frame_times = np.arange(n_frames) / target.fps
        # validate the whole path up front so a bad waypoint fails before any output
        for p in target.trajectory.positions:
            project_to_pixel(camera, p)
        positions = target.trajectory.position_at(frame_times)
        pixel_jitter = rng.standard_normal((n_frames, 2)) * target.pixel_noise
        depth_jitter = rng.standard_normal(n_frames) * target.depth_noise
        keep = rng.random(n_frames) >= target.dropout
        for t, p, dpx, dz, ok in zip(frame_times, positions, pixel_jitter, depth_jitter, keep):
            if not ok:
                continue
            pixel, depth = project_to_pixel(camera, p)
            w, h = target.box_size
            events.append(
                DetectionEvent(
                    x=float(pixel[0] + dpx[0]),
                    y=float(pixel[1] + dpx[1]),
                    width=w / depth,
                    height=h / depth,
                    depth=float(depth * max(1.0 + dz, 1e-3)),
                    timestamp=float(t + target.latency),
                    label=target.label,
                    capture_time=float(t),
                )
            )
    events.sort(key=lambda e: e.timestamp)
    return events


def write_detections_csv(events: Iterable[DetectionEvent], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for e in events:
            writer.writerow([repr(e.timestamp), repr(e.x), repr(e.y), repr(e.width),
                             repr(e.height), repr(e.depth), e.label])


def read_detections_csv(path: str | os.PathLike) -> list[DetectionEvent]:
    """Load events written by :func:`write_detections_csv` (capture time is not stored)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return [
            DetectionEvent(
                x=float(row["x_px"]),
                y=float(row["y_px"]),
                width=float(row["w_px"]),
                height=float(row["h_px"]),
                depth=float(row["depth_m"]),
                timestamp=float(row["t_s"]),
                label=row["target_label"],
            )
            for row in reader
        ]


def filter_label(events: Sequence[DetectionEvent], label: str) -> list[DetectionEvent]:
    return [e for e in events if e.label == label]
