"""Band power, signal-to-interference ratios and beamforming gain."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import welch

TONE_TONE = "tone_tone"
BROADBAND = "broadband"
VARIANTS = (TONE_TONE, BROADBAND)

DEFAULT_WINDOW = 1024
DEFAULT_HOP = 512
DEFAULT_BANDWIDTH = 100.0
# ratios whose denominator falls this far below the window power are treated as undefined
_DEGENERATE = 1e-9


def psd(signal: np.ndarray, fs: float, window_length: int = DEFAULT_WINDOW) -> tuple[np.ndarray, np.ndarray]:
    """One-sided Hann-windowed PSD (Welch average at 50% overlap)."""
    x = np.asarray(signal, dtype=float)
    if x.size < window_length:
        raise ValueError(f"signal has {x.size} samples, analysis window needs {window_length}")
    return welch(x, fs, window="hann", nperseg=window_length, noverlap=window_length // 2,
                 detrend=False, scaling="density")


def _band_weights(freqs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Fraction of each bin's [f - df/2, f + df/2] cell that lies inside [lo, hi]."""
    df = freqs[1] - freqs[0]
    left = np.maximum(freqs - df / 2, lo)
    right = np.minimum(freqs + df / 2, hi)
    return np.clip(right - left, 0, None) / df


def band_power(
    signal: np.ndarray,
    fs: float,
    center: float,
    bandwidth: float = DEFAULT_BANDWIDTH,
    window_length: int = DEFAULT_WINDOW,
) -> float:
    """Power in ``center +- bandwidth / 2`` by integrating the PSD.

    A sine of amplitude ``A`` at ``center`` gives ``A**2 / 2``.
    """
    lo, hi = center - bandwidth / 2, center + bandwidth / 2
    if not (0 < lo and hi < fs / 2):
        raise ValueError(f"band [{lo}, {hi}] Hz must lie strictly inside (0, {fs / 2})")
    freqs, pxx = psd(signal, fs, window_length)
    df = freqs[1] - freqs[0]
    return float(np.sum(pxx * _band_weights(freqs, lo, hi)) * df)


def total_power(signal: np.ndarray, fs: float, window_length: int = DEFAULT_WINDOW) -> float:
    freqs, pxx = psd(signal, fs, window_length)
    return float(np.sum(pxx) * (freqs[1] - freqs[0]))


@dataclass(eq=False)
class SirSeries:
    """SIR per analysis window; undefined windows hold NaN."""

    times: np.ndarray
    values: np.ndarray
    variant: str
    window: int = DEFAULT_WINDOW
    hop: int = DEFAULT_HOP
    bandwidth: float = DEFAULT_BANDWIDTH
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values must have equal length")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown SIR variant {self.variant!r}")
        if np.any(np.isinf(self.values)):
            raise ValueError("SIR values must be finite or NaN (absent)")

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def __len__(self) -> int:
        return self.times.size

    def mean(self) -> float:
        return float(np.nanmean(self.values)) if self.present.any() else float("nan")

    def median(self) -> float:
        return float(np.nanmedian(self.values)) if self.present.any() else float("nan")

    def std(self) -> float:
        return float(np.nanstd(self.values, ddof=1)) if self.present.sum() > 1 else float("nan")

    def trend(self, order: int = 5) -> np.ndarray:
        """Least-squares polynomial through the defined points, evaluated at every window."""
        ok = self.present
        if ok.sum() <= order:
            return np.full_like(self.values, np.nan)
        t0, scale = self.times[ok].mean(), np.ptp(self.times[ok]) or 1.0
        coef = np.polyfit((self.times[ok] - t0) / scale, self.values[ok], order)
        return np.polyval(coef, (self.times - t0) / scale)

    def write_csv(self, path: str | os.PathLike, trend_order: int | None = None) -> None:
        trend = self.trend(trend_order) if trend_order else None
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "sir_db", "variant"] + (["trend_db"] if trend is not None else []))
            for i, (t, v) in enumerate(zip(self.times, self.values)):
                row = [repr(float(t)), "" if np.isnan(v) else repr(float(v)), self.variant]
                if trend is not None:
                    row.append("" if np.isnan(trend[i]) else repr(float(trend[i])))
                writer.writerow(row)


def read_sir_csv(path: str | os.PathLike) -> SirSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no SIR rows")
    return SirSeries(
        times=[float(r["t_s"]) for r in rows],
        values=[float(r["sir_db"]) if r["sir_db"] else np.nan for r in rows],
        variant=rows[0]["variant"],
    )


def _windows(n: int, window: int, hop: int) -> np.ndarray:
    if n < window:
        raise ValueError(f"signal has {n} samples, analysis window needs {window}")
    return np.arange(0, n - window + 1, hop)


def _ratio_db(num: float, den: float, scale: float) -> float:
    if den <= _DEGENERATE * scale or num <= _DEGENERATE * scale:
        return np.nan
    return 10 * np.log10(num / den)


def sir_tone_tone(
    signal: np.ndarray,
    fs: float,
    f_target: float,
    f_int: float,
    window: int = DEFAULT_WINDOW,
    hop: int = DEFAULT_HOP,
    bandwidth: float = DEFAULT_BANDWIDTH,
    start_time: float = 0.0,
) -> SirSeries:
    """Per-window ratio of the band powers around two tones, in dB."""
    if f_target == f_int:
        raise ValueError("target and interference frequencies must differ")
    x = np.asarray(signal, dtype=float)
    times, values = [], []
    for s in _windows(x.size, window, hop):
        seg = x[s : s + window]
        scale = total_power(seg, fs, window)
        p_t = band_power(seg, fs, f_target, bandwidth, window)
        p_i = band_power(seg, fs, f_int, bandwidth, window)
        times.append(start_time + (s + window / 2) / fs)
        values.append(_ratio_db(p_t, p_i, scale))
    return SirSeries(np.array(times), np.array(values), TONE_TONE, window, hop, bandwidth)


def sir_broadband(
    signal: np.ndarray,
    fs: float,
    f_int: float,
    window: int = DEFAULT_WINDOW,
    hop: int = DEFAULT_HOP,
    bandwidth: float = DEFAULT_BANDWIDTH,
    start_time: float = 0.0,
) -> SirSeries:
    """Per-window ``10 log10((P_total - P_int) / P_int)`` with ``P_int`` the band power at ``f_int``."""
    x = np.asarray(signal, dtype=float)
    times, values = [], []
    for s in _windows(x.size, window, hop):
        seg = x[s : s + window]
        p_total = total_power(seg, fs, window)
        p_int = band_power(seg, fs, f_int, bandwidth, window)
        times.append(start_time + (s + window / 2) / fs)
        values.append(_ratio_db(p_total - p_int, p_int, p_total))
    return SirSeries(np.array(times), np.array(values), BROADBAND, window, hop, bandwidth)


def delta_sir(bf: SirSeries, nbf: SirSeries) -> SirSeries:
    """Beamformed minus reference SIR, window by window."""
    if bf.variant != nbf.variant:
        raise ValueError(f"cannot subtract {nbf.variant} from {bf.variant}")
    if bf.times.shape != nbf.times.shape or not np.allclose(bf.times, nbf.times, rtol=0, atol=1e-9):
        raise ValueError("SIR series are not aligned on the same windows")
    return SirSeries(bf.times.copy(), bf.values - nbf.values, bf.variant, bf.window, bf.hop, bf.bandwidth)
