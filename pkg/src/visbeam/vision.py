"""Camera-side geometry: stereo depth, pixel back-projection and DoA extraction.

Camera frame: +x right, +y down, +z forward.  The microphone array shares the
camera's axes and sits at world position ``(0, -h, 0)``, so the array-frame
direction of a world point ``p`` is ``p + (0, h, 0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import DirectionError, DoaAngles


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera with extrinsics mapping camera coordinates to world coordinates."""

    intrinsics: np.ndarray = field(default_factory=lambda: np.eye(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    focal_length: float | None = None
    baseline: float | None = None

    def __post_init__(self) -> None:
        K = np.array(self.intrinsics, dtype=float).reshape(3, 3)
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if K[2, 2] != 1.0:
            raise ValueError("intrinsics must have K[2][2] == 1")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ValueError("intrinsics matrix is singular")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-10, rtol=0) or np.linalg.det(R) <= 0:
            raise ValueError("rotation must be orthonormal with det +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        f = float(K[0, 0]) if self.focal_length is None else float(self.focal_length)
        if not f > 0:
            raise ValueError("focal length must be > 0")
        if self.baseline is not None and not self.baseline > 0:
            raise ValueError("stereo baseline must be > 0")
        for name, arr in (("intrinsics", K), ("rotation", R), ("translation", t)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "focal_length", f)
        object.__setattr__(self, "_K_inv", np.linalg.inv(K))

    @property
    def K_inv(self) -> np.ndarray:
        return self._K_inv  # type: ignore[attr-defined]


@dataclass(frozen=True)
class DetectionEvent:
    """One detected object in one video frame.

    ``timestamp`` is when the detection becomes available on the shared
    clock; ``capture_time`` is when the frame was exposed (defaults to
    ``timestamp``).
    """

    x: float
    y: float
    width: float
    height: float
    depth: float
    timestamp: float
    label: str = "target"
    capture_time: float | None = None

    def __post_init__(self) -> None:
        if not self.depth > 0:
            raise ValueError(f"depth must be > 0, got {self.depth}")
        if self.width < 0 or self.height < 0:
            raise ValueError("bounding box size must be non-negative")
        if not np.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        if self.capture_time is None:
            object.__setattr__(self, "capture_time", self.timestamp)

    @property
    def centroid(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class MountingOffset:
    """Vertical offset ``h`` (metres) between camera and array origins."""

    h: float = 0.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.h):
            raise ValueError("mounting offset must be finite")

    @property
    def array_origin(self) -> np.ndarray:
        """World position of the array origin."""
        return np.array([0.0, -self.h, 0.0])


def triangulate_depth(f: float, baseline: float, disparity: float) -> float:
    """Stereo depth ``f * B / d``."""
    if not disparity > 0:
        raise ValueError(f"disparity must be > 0, got {disparity}")
    if not (f > 0 and baseline > 0):
        raise ValueError("focal length and baseline must be > 0")
    return f * baseline / disparity


def back_project(camera: CameraModel, pixel: Sequence[float], depth: float) -> np.ndarray:
    """Camera-frame point for ``pixel`` at ``depth`` (scales the normalized ray)."""
    if not depth > 0:
        raise ValueError(f"depth must be > 0, got {depth}")
    x, y = pixel
    return depth * (camera.K_inv @ np.array([x, y, 1.0]))


def to_world(camera: CameraModel, p_cam: Sequence[float]) -> np.ndarray:
    return camera.rotation @ np.asarray(p_cam, dtype=float) + camera.translation


def project_to_pixel(camera: CameraModel, p_world: Sequence[float]) -> tuple[np.ndarray, float]:
    """Inverse of ``to_world(back_project(...))``: returns ``(pixel, depth)``."""
    p_cam = camera.rotation.T @ (np.asarray(p_world, dtype=float) - camera.translation)
    # back_project computes depth * K^-1 [x, y, 1], so K p_cam = depth * [x, y, 1]
    hom = camera.intrinsics @ p_cam
    if not (p_cam[2] > 0 and hom[2] > 0):
        raise DirectionError(f"point {tuple(p_world)} is behind the camera")
    return hom[:2] / hom[2], float(hom[2])


def doa_from_position(p_world: Sequence[float], offset: MountingOffset | float = 0.0) -> DoaAngles:
    """Elevation and azimuth of a world point as seen from the array."""
    h = offset.h if isinstance(offset, MountingOffset) else float(offset)
    x, y, z = (float(c) for c in p_world)
    if not z > 0:
        raise DirectionError(f"target z = {z} is not in front of the array")
    return DoaAngles(theta=float(np.arctan((y + h) / z)), phi=float(np.pi - np.arctan(x / z)))


def detection_to_doa(
    event: DetectionEvent, camera: CameraModel, offset: MountingOffset | float = 0.0
) -> DoaAngles:
    """Centroid + depth of a detection to array DoA (bounding-box size is unused)."""
    p_world = to_world(camera, back_project(camera, event.centroid, event.depth))
    return doa_from_position(p_world, offset)
