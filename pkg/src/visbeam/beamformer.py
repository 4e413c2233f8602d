"""Frequency-domain delay-and-sum beamforming with 50% overlap-add.

Each incoming chunk holds ``N`` samples per channel, consecutive chunks
overlapping by ``H = N / 2``.  A chunk is transformed with a rectangular
analysis window, phase-aligned, averaged over channels, transformed back,
tapered with a periodic Hann window and overlap-added.  Periodic Hann at 50%
hop sums to exactly one, so with zero delays the output is the input delayed
by ``H`` samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .geometry import DoaAngles, MicArray, PropagationConfig, steering_delays
from .scene import MultichannelSignal


@dataclass(frozen=True)
class FrameSpec:
    frame_length: int = 256
    hop: int = 128

    def __post_init__(self) -> None:
        if self.frame_length < 2 or self.frame_length % 2:
            raise ValueError(f"frame_length must be even and >= 2, got {self.frame_length}")
        if self.hop != self.frame_length // 2:
            raise ValueError(f"hop must equal frame_length / 2 = {self.frame_length // 2}, got {self.hop}")

    @property
    def window(self) -> np.ndarray:
        n = np.arange(self.frame_length)
        return 0.5 * (1 - np.cos(2 * np.pi * n / self.frame_length))

    def bin_frequencies(self, sample_rate: float) -> np.ndarray:
        return np.arange(self.frame_length // 2 + 1) * sample_rate / self.frame_length


@dataclass(frozen=True, eq=False)
class AudioChunk:
    samples: np.ndarray
    timestamp: float
    chunk_index: int

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]


def chunk_midpoint(chunk: AudioChunk, spec: FrameSpec, sample_rate: float) -> float:
    return chunk.timestamp + spec.frame_length / (2 * sample_rate)


def iter_chunks(
    channels: np.ndarray,
    spec: FrameSpec,
    sample_rate: float,
    start_time: float = 0.0,
    num_samples: int | None = None,
) -> Iterator[AudioChunk]:
    """Split ``(M, L)`` samples into 50%-overlapped chunks as a live stream would deliver them.

    Chunk ``i`` covers samples ``[(i - 1) H, (i + 1) H)``; samples before the
    start and past the end are zero.  There are ``ceil(L / H)`` chunks, one per
    ``H`` output samples.  A ``num_samples`` larger than ``L`` loops the input.
    """
    channels = np.atleast_2d(channels)
    length = channels.shape[1]
    total = length if num_samples is None else int(num_samples)
    H, N = spec.hop, spec.frame_length
    for i in range(-(-total // H)):
        idx = np.arange((i - 1) * H, (i - 1) * H + N)
        valid = (idx >= 0) & (idx < total)
        samples = np.where(valid[None, :], channels[:, np.where(valid, idx % max(length, 1), 0)], 0.0)
        yield AudioChunk(samples, start_time + (i - 1) * H / sample_rate, i)


class Beamformer:
    """Streaming delay-and-sum state for one array.

    Not thread-safe: one owner calls :meth:`steer` and :meth:`process_chunk`.
    """

    def __init__(
        self,
        num_channels: int,
        spec: FrameSpec = FrameSpec(),
        sample_rate: float = 8000.0,
    ):
        self.spec = spec
        self.sample_rate = float(sample_rate)
        self.num_channels = int(num_channels)
        self._freqs = spec.bin_frequencies(self.sample_rate)
        self._window = spec.window
        self.delays = np.zeros(self.num_channels)
        self._phase = np.ones((self.num_channels, self._freqs.size), dtype=complex)
        self.tail = np.zeros(spec.frame_length - spec.hop)
        self.frames_processed = 0

    @classmethod
    def for_array(cls, array: MicArray, spec: FrameSpec, prop: PropagationConfig) -> "Beamformer":
        return cls(array.count, spec, prop.sample_rate)

    def set_delays(self, delays: Sequence[float]) -> None:
        delays = np.asarray(delays, dtype=float)
        if delays.shape != (self.num_channels,):
            raise ValueError(f"expected {self.num_channels} delays, got shape {delays.shape}")
        if not np.all(np.isfinite(delays)):
            raise ValueError("delays must be finite")
        phase = np.exp(2j * np.pi * self._freqs[None, :] * delays[:, None])
        # DC and Nyquist bins must stay real for a real inverse transform
        phase[:, 0] = phase[:, 0].real
        phase[:, -1] = phase[:, -1].real
        self.delays, self._phase = delays.copy(), phase

    def steer(self, doa: DoaAngles, array: MicArray, prop: PropagationConfig) -> None:
        """Point the beam at ``doa``; applies from the next chunk on."""
        if array.count != self.num_channels:
            raise ValueError(f"array has {array.count} mics, beamformer expects {self.num_channels}")
        self.set_delays(steering_delays(array, doa, prop))

    def reset(self) -> None:
        self.tail[:] = 0.0
        self.frames_processed = 0

    def process_chunk(self, chunk: AudioChunk | np.ndarray) -> np.ndarray:
        """Beamform one ``(M, N)`` chunk and return the next ``H`` output samples."""
        x = chunk.samples if isinstance(chunk, AudioChunk) else np.asarray(chunk)
        N, H = self.spec.frame_length, self.spec.hop
        if x.shape != (self.num_channels, N):
            raise ValueError(f"chunk shape {x.shape} != ({self.num_channels}, {N})")
        if not np.all(np.isfinite(x)):
            raise ValueError("chunk contains non-finite samples")

        spectrum = np.fft.rfft(x, axis=1)
        combined = np.mean(spectrum * self._phase, axis=0)
        # real parts of the phase-rotated DC / Nyquist values
        combined[0] = combined[0].real
        combined[-1] = combined[-1].real
        frame = np.fft.irfft(combined, N) * self._window

        out = frame[:H].copy()
        out[: N - H] += self.tail
        self.tail = frame[H:].copy()
        self.frames_processed += 1
        return out


def process_offline(
    signal: MultichannelSignal,
    schedule: Sequence[tuple[float, DoaAngles]] = (),
    array: MicArray | None = None,
    prop: PropagationConfig | None = None,
    spec: FrameSpec = FrameSpec(),
) -> np.ndarray:
    """Beamform a whole recording, re-steering before each chunk.

    Each chunk uses the latest ``schedule`` entry whose time is at or before
    the chunk midpoint (broadside before the first entry).  The result has the
    input's length and lags it by ``H`` samples; the first ``H`` output samples
    only see the leading zero padding.
    """
    if signal.num_samples == 0:
        raise ValueError("cannot beamform an empty signal")
    times = [t for t, _ in schedule]
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("schedule times must be non-decreasing")
    if schedule and array is None:
        raise ValueError("an array is required to follow a steering schedule")
    prop = prop or PropagationConfig(sample_rate=signal.sample_rate)
    if prop.sample_rate != signal.sample_rate:
        raise ValueError("propagation sample rate does not match the signal")

    bf = Beamformer(signal.num_channels, spec, signal.sample_rate)
    out = []
    current = None
    k = 0
    for chunk in iter_chunks(signal.channels, spec, signal.sample_rate, signal.start_time):
        mid = chunk_midpoint(chunk, spec, signal.sample_rate)
        while k < len(schedule) and schedule[k][0] <= mid:
            k += 1
        if k and schedule[k - 1][1] != current:
            current = schedule[k - 1][1]
            bf.steer(current, array, prop)
        out.append(bf.process_chunk(chunk))
    return np.concatenate(out)[: signal.num_samples]
