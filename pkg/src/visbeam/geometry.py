"""Planar concentric microphone array, steering delays and array factor.

Directions use the elevation/azimuth pair produced by
:func:`visbeam.vision.doa_from_position`.  The matching unit vector is
``normalize((-tan(phi), tan(theta), 1))`` so both functions are exact
inverses of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_SOUND = 343.0
REFERENCE_RING_RADII = (0.0, 0.025, 0.045)
REFERENCE_MICS_PER_RING = (1, 4, 8)


class DirectionError(ValueError):
    """Raised when a direction does not point into the half-space in front of the array."""


@dataclass(frozen=True)
class DoaAngles:
    """Elevation ``theta`` and azimuth ``phi`` in radians."""

    theta: float
    phi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise DirectionError(f"non-finite direction: {self}")


@dataclass(frozen=True)
class PropagationConfig:
    speed_of_sound: float = SPEED_OF_SOUND
    sample_rate: float = 8000.0

    def __post_init__(self) -> None:
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be > 0")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")


@dataclass(frozen=True, eq=False)
class MicArray:
    """Microphone positions in metres, one row per microphone, all with z = 0."""

    positions: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        pos = np.array(self.positions, dtype=float, copy=True)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError(f"positions must have shape (M, 3) with M >= 1, got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions must be finite")
        if np.any(pos[:, 2] != 0.0):
            raise ValueError("array must be planar (z = 0 for every microphone)")
        if len(np.unique(pos, axis=0)) != len(pos):
            raise ValueError("microphone positions must be pairwise distinct")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def aperture_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.positions, axis=1)))

    def center_index(self) -> int | None:
        """Index of the microphone at the origin, if there is one."""
        at_origin = np.flatnonzero(np.all(self.positions == 0.0, axis=1))
        return int(at_origin[0]) if at_origin.size else None

    def __repr__(self) -> str:
        return f"MicArray(M={self.count}, aperture_radius={self.aperture_radius:.4g} m)"


def build_concentric_array(ring_radii: Sequence[float], mics_per_ring: Sequence[int]) -> MicArray:
    """Place ``mics_per_ring[i]`` microphones evenly on a ring of radius ``ring_radii[i]``.

    The first microphone of each ring sits on the +x axis; the remaining ones
    follow counterclockwise.  Ordering is ring-major.
    """
    radii = [float(r) for r in ring_radii]
    counts = [int(n) for n in mics_per_ring]
    if len(radii) != len(counts):
        raise ValueError(f"got {len(radii)} ring radii but {len(counts)} ring counts")
    if not radii:
        raise ValueError("at least one ring is required")
    for i, (r, n) in enumerate(zip(radii, counts)):
        if not np.isfinite(r) or r < 0:
            raise ValueError(f"ring {i}: radius must be finite and non-negative, got {r}")
        if n < 1:
            raise ValueError(f"ring {i}: microphone count must be >= 1, got {n}")
        if r == 0 and n != 1:
            raise ValueError(f"ring {i}: a radius of 0 holds exactly one microphone, got {n}")
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"ring radii must be strictly increasing (no duplicates): {radii}")

    rows = []
    for r, n in zip(radii, counts):
        angles = 2.0 * np.pi * np.arange(n) / n
        rows.append(np.column_stack([r * np.cos(angles), r * np.sin(angles), np.zeros(n)]))
    return MicArray(np.vstack(rows))


def reference_array() -> MicArray:
    """The 13-microphone, 9 cm diameter three-ring array."""
    return build_concentric_array(REFERENCE_RING_RADII, REFERENCE_MICS_PER_RING)


def unit_vector(doa: DoaAngles) -> np.ndarray:
    """Unit vector toward ``doa``; always has a positive z component."""
    cos_phi = np.cos(doa.phi)
    cos_theta = np.cos(doa.theta)
    # tan() blows up where the direction would lie in (or behind) the array plane
    if abs(cos_phi) < 1e-12 or abs(cos_theta) < 1e-12:
        raise DirectionError(f"{doa} does not point in front of the array (z <= 0)")
    v = np.array([-np.tan(doa.phi), np.tan(doa.theta), 1.0])
    return v / np.linalg.norm(v)


def direction_from_vector(v: Sequence[float]) -> DoaAngles:
    """Inverse of :func:`unit_vector` for any vector with a positive z component."""
    x, y, z = (float(c) for c in v)
    if not z > 0:
        raise DirectionError(f"vector {v} does not point in front of the array (z <= 0)")
    return DoaAngles(theta=float(np.arctan(y / z)), phi=float(np.pi - np.arctan(x / z)))


def steering_delays(array: MicArray, doa: DoaAngles, prop: PropagationConfig) -> np.ndarray:
    """Per-microphone delays ``tau_m = -(r_m . u) / c`` in seconds."""
    u = unit_vector(doa)
    return -(array.positions @ u) / prop.speed_of_sound


def separation_angle(a: DoaAngles, b: DoaAngles) -> float:
    """Great-circle angle between two directions, radians."""
    cos = float(np.clip(unit_vector(a) @ unit_vector(b), -1.0, 1.0))
    return float(np.arccos(cos))


def beampattern(
    array: MicArray,
    look: DoaAngles,
    source: DoaAngles,
    freq: float,
    prop: PropagationConfig,
) -> complex:
    """Complex delay-and-sum gain toward ``source`` when steered at ``look``."""
    if not 0 <= freq <= prop.sample_rate / 2:
        raise ValueError(f"freq {freq} Hz outside [0, {prop.sample_rate / 2}]")
    diff = steering_delays(array, look, prop) - steering_delays(array, source, prop)
    return complex(np.mean(np.exp(2j * np.pi * freq * diff)))


def beampattern_grid(
    array: MicArray,
    look: DoaAngles,
    freq: float,
    prop: PropagationConfig,
    n_phi: int = 360,
    n_theta: int = 1,
) -> np.ndarray:
    """Sweep |B| over an azimuth/elevation grid in front of the array.

    The grid is uniform over the open ranges phi in (pi/2, 3pi/2) and
    theta in (-pi/2, pi/2); the point nearest the look direction is snapped
    onto it, so the sweep always contains the main-lobe peak.  With
    ``n_theta == 1`` the look elevation is used.

    Returns an array of rows ``(phi, theta, freq, magnitude, magnitude_db)``.
    """
    if n_phi < 1 or n_theta < 1:
        raise ValueError("grid dimensions must be >= 1")
    phis = np.pi / 2 + np.pi * (np.arange(n_phi) + 0.5) / n_phi
    phis[np.argmin(np.abs(phis - look.phi))] = look.phi
    if n_theta == 1:
        thetas = np.array([look.theta])
    else:
        thetas = -np.pi / 2 + np.pi * (np.arange(n_theta) + 0.5) / n_theta
        thetas[np.argmin(np.abs(thetas - look.theta))] = look.theta

    rows = []
    for theta in thetas:
        for phi in phis:
            mag = abs(beampattern(array, look, DoaAngles(float(theta), float(phi)), freq, prop))
            with np.errstate(divide="ignore"):
                mag_db = 20 * np.log10(mag)
            rows.append((phi, theta, freq, mag, mag_db))
    return np.array(rows)
