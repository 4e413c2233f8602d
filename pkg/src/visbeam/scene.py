"""Plane-wave synthesis of microphone array signals.

A microphone at ``r_m`` hears a far-field source from direction ``u`` as
``s(t + r_m . u / c)``: the wave reaches microphones closer to the source
earlier.  Steering with :func:`visbeam.geometry.steering_delays` toward the
true direction undoes exactly this advance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .geometry import MicArray, PropagationConfig

BLOCK_HOP = 128
_SINC_HALF_WIDTH = 32
_SINC_BETA = 9.0


@dataclass(frozen=True)
class Tone:
    freq: float
    amplitude: float = 1.0
    phase: float = 0.0

    def at(self, t: np.ndarray) -> np.ndarray:
        return self.amplitude * np.sin(2 * np.pi * self.freq * t + self.phase)

    def render(self, n: int, fs: float) -> np.ndarray:
        return self.at(np.arange(n) / fs)

    def max_slew(self, fs: float) -> float:
        """Largest possible sample-to-sample difference."""
        return 2 * abs(self.amplitude) * abs(np.sin(np.pi * self.freq / fs))


@dataclass(frozen=True)
class WhiteNoise:
    amplitude: float = 1.0
    seed: int = 0

    def render(self, n: int, fs: float) -> np.ndarray:
        return self.amplitude * np.random.default_rng(self.seed).standard_normal(n)


@dataclass(frozen=True)
class SampleFile:
    path: str
    gain: float = 1.0

    def render(self, n: int, fs: float) -> np.ndarray:
        from .wavio import read_wav

        sig = read_wav(self.path)
        if sig.sample_rate != fs:
            raise ValueError(f"{self.path}: sample rate {sig.sample_rate} != scene rate {fs}")
        mono = sig.channels[0] * self.gain
        out = np.zeros(n)
        out[: min(n, mono.size)] = mono[:n]
        return out


Waveform = Union[Tone, WhiteNoise, SampleFile]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-linear path; positions are held constant outside the time span."""

    times: np.ndarray
    positions: np.ndarray

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if times.size != positions.shape[0] or times.size == 0:
            raise ValueError("trajectory needs one position per time and at least one waypoint")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not np.all(np.isfinite(positions)):
            raise ValueError("trajectory positions must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", positions)

    @classmethod
    def static(cls, position: Sequence[float]) -> "Trajectory":
        return cls(np.array([0.0]), np.array([position], dtype=float))

    @classmethod
    def from_waypoints(cls, waypoints: Sequence[tuple[float, Sequence[float]]]) -> "Trajectory":
        return cls(np.array([w[0] for w in waypoints]), np.array([w[1] for w in waypoints]))

    @property
    def is_static(self) -> bool:
        return bool(np.all(self.positions == self.positions[0]))

    def position_at(self, t: float | np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        cols = [np.interp(t, self.times, self.positions[:, k]) for k in range(3)]
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class SourceSpec:
    waveform: Waveform
    trajectory: Trajectory
    label: str = "source"


@dataclass(eq=False)
class MultichannelSignal:
    channels: np.ndarray
    sample_rate: float
    start_time: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        ch = np.asarray(self.channels, dtype=float)
        if ch.ndim == 1:
            ch = ch[None, :]
        if ch.ndim != 2 or ch.shape[0] < 1:
            raise ValueError(f"channels must have shape (M, L) with M >= 1, got {ch.shape}")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        self.channels = ch

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]

    @property
    def duration(self) -> float:
        return self.num_samples / self.sample_rate

    def __len__(self) -> int:
        return self.num_samples


def fractional_shift(x: np.ndarray, advance: float | np.ndarray, fs: float) -> np.ndarray:
    """Advance ``x`` by ``advance`` seconds with a circular spectral phase shift.

    ``advance`` may be an array; the result then has one row per value.  The
    Nyquist bin is dropped so that shifting back is an exact inverse.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    spec = np.fft.rfft(x)
    if n % 2 == 0:
        spec[..., -1] = 0.0
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    adv = np.atleast_1d(np.asarray(advance, dtype=float))[:, None]
    out = np.fft.irfft(spec * np.exp(2j * np.pi * freqs * adv), n)
    return out if np.ndim(advance) else out[0]


def _sinc_kernel(frac: np.ndarray) -> np.ndarray:
    """Kaiser-windowed sinc taps for taps at offsets -K+1..K around each fractional position."""
    offsets = np.arange(-_SINC_HALF_WIDTH + 1, _SINC_HALF_WIDTH + 1)
    arg = offsets[None, :] - frac[:, None]
    win = np.i0(_SINC_BETA * np.sqrt(np.clip(1 - (arg / _SINC_HALF_WIDTH) ** 2, 0, None)))
    return np.sinc(arg) * win / np.i0(_SINC_BETA)


def _interp_segment(s: np.ndarray, start: int, count: int, advance_samples: np.ndarray) -> np.ndarray:
    """Band-limited values of ``s`` at ``start + k + advance`` for each advance (one row each)."""
    whole = np.floor(advance_samples).astype(int)
    frac = advance_samples - whole
    taps = _sinc_kernel(frac)
    offsets = np.arange(-_SINC_HALF_WIDTH + 1, _SINC_HALF_WIDTH + 1)
    idx = start + np.arange(count)[None, :, None] + whole[:, None, None] + offsets[None, None, :]
    valid = (idx >= 0) & (idx < s.size)
    vals = np.where(valid, s[np.clip(idx, 0, s.size - 1)], 0.0)
    return np.einsum("mkj,mj->mk", vals, taps)


def _directions(positions: np.ndarray, origin: np.ndarray) -> np.ndarray:
    v = np.atleast_2d(positions) - origin
    if np.any(v[:, 2] <= 0):
        raise ValueError("source positions must lie in front of the array (z > 0)")
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _render_static(
    array: MicArray, src: SourceSpec, prop: PropagationConfig, n: int, origin: np.ndarray
) -> np.ndarray:
    u = _directions(src.trajectory.positions[0], origin)[0]
    advance = array.positions @ u / prop.speed_of_sound
    fs = prop.sample_rate
    if isinstance(src.waveform, Tone):
        t = np.arange(n) / fs
        return src.waveform.at(t[None, :] + advance[:, None])
    return fractional_shift(src.waveform.render(n, fs), advance, fs)


def _render_moving(
    array: MicArray,
    src: SourceSpec,
    prop: PropagationConfig,
    n: int,
    origin: np.ndarray,
    hop: int,
) -> np.ndarray:
    fs = prop.sample_rate
    block = 2 * hop
    window = 0.5 * (1 - np.cos(2 * np.pi * np.arange(block) / block))
    out = np.zeros((array.count, n + 2 * block))
    base = None if isinstance(src.waveform, Tone) else src.waveform.render(n, fs)

    n_blocks = -(-n // hop) + 1
    starts = (np.arange(n_blocks) - 1) * hop
    centers = (starts + hop) / fs
    dirs = _directions(src.trajectory.position_at(centers), origin)
    for start, u in zip(starts, dirs):
        advance = array.positions @ u / prop.speed_of_sound
        if base is None:
            t = (start + np.arange(block)) / fs
            seg = src.waveform.at(t[None, :] + advance[:, None])
        else:
            seg = _interp_segment(base, start, block, advance * fs)
        out[:, block + start : 2 * block + start] += seg * window
    return out[:, block : block + n]


def synthesize_scene(
    array: MicArray,
    sources: Sequence[SourceSpec],
    prop: PropagationConfig,
    duration: float,
    array_origin: Sequence[float] = (0.0, 0.0, 0.0),
    block_hop: int = BLOCK_HOP,
) -> MultichannelSignal:
    """Render every source at every microphone and sum.

    Sources whose trajectory never moves are delayed exactly over the whole
    signal.  Moving sources are rendered in ``2 * block_hop`` blocks with one
    direction per block, joined by a 50% Hann crossfade.  ``array_origin``
    is the array position in the frame the trajectories are given in.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    n = int(round(duration * prop.sample_rate))
    origin = np.asarray(array_origin, dtype=float)
    channels = np.zeros((array.count, n))
    seeds = {}
    for src in sources:
        if isinstance(src.waveform, Tone) and not src.waveform.freq < prop.sample_rate / 2:
            raise ValueError(f"source {src.label!r}: tone {src.waveform.freq} Hz is not below Nyquist")
        if isinstance(src.waveform, WhiteNoise):
            seeds[src.label] = src.waveform.seed
        if src.trajectory.is_static:
            channels += _render_static(array, src, prop, n, origin)
        else:
            channels += _render_moving(array, src, prop, n, origin, block_hop)

    peak = float(np.max(np.abs(channels))) if n else 0.0
    metadata = {"seeds": seeds, "peak": peak, "clipping": peak > 1.0}
    if peak > 1.0:
        warnings.warn(f"synthesized scene peaks at {peak:.3f} (> 1.0)", stacklevel=2)
    return MultichannelSignal(channels, prop.sample_rate, metadata=metadata)


def add_diffuse_noise(
    signal: MultichannelSignal, snr_db: float, seed: int = 0, reference_channel: int = 0
) -> MultichannelSignal:
    """Add independent white noise to each channel at ``snr_db`` below the reference channel power."""
    ref_power = float(np.mean(signal.channels[reference_channel] ** 2))
    sigma = np.sqrt(ref_power / 10 ** (snr_db / 10))
    noise = np.random.default_rng(seed).standard_normal(signal.channels.shape) * sigma
    metadata = dict(signal.metadata, diffuse_snr_db=snr_db, diffuse_seed=seed)
    return MultichannelSignal(signal.channels + noise, signal.sample_rate, signal.start_time, metadata)
