"""Multichannel WAV I/O on top of :mod:`scipy.io.wavfile`."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .scene import MultichannelSignal


class WavFormatError(ValueError):
    pass


def write_wav(signal: MultichannelSignal, path: str | os.PathLike, encoding: str = "float32") -> None:
    """Write channels in array order; ``encoding`` is ``"float32"`` or ``"int16"``.

    The file is written to a temporary sibling and renamed into place.
    """
    data = np.asarray(signal.channels)
    if not np.all(np.isfinite(data)):
        raise WavFormatError("cannot write non-finite samples")
    if encoding == "float32":
        frames = data.T.astype(np.float32)
    elif encoding == "int16":
        frames = np.round(np.clip(data.T, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    else:
        raise WavFormatError(f"unsupported encoding {encoding!r}")
    rate = int(round(signal.sample_rate))
    if rate != signal.sample_rate:
        raise WavFormatError(f"WAV needs an integer sample rate, got {signal.sample_rate}")

    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        wavfile.write(tmp, rate, frames)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def read_wav(path: str | os.PathLike, expected_channels: int | None = None) -> MultichannelSignal:
    """Read a WAV file as floats in [-1, 1]; integer PCM is rescaled."""
    try:
        rate, data = wavfile.read(os.fspath(path))
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, ZeroDivisionError) as exc:
        raise WavFormatError(f"{path}: {exc}") from exc

    if data.ndim == 1:
        data = data[:, None]
    if data.ndim != 2 or data.shape[1] == 0:
        raise WavFormatError(f"{path}: file has no channels")
    if data.dtype == np.float32 or data.dtype == np.float64:
        channels = data.T.astype(np.float64)
    elif data.dtype == np.int16:
        channels = data.T.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        channels = data.T.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        channels = (data.T.astype(np.float64) - 128.0) / 128.0
    else:
        raise WavFormatError(f"{path}: unsupported sample type {data.dtype}")
    if expected_channels is not None and channels.shape[0] != expected_channels:
        raise WavFormatError(
            f"{path}: expected {expected_channels} channels, file has {channels.shape[0]}"
        )
    return MultichannelSignal(channels=channels, sample_rate=float(rate))
