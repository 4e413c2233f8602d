from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visbeam.geometry import DoaAngles, PropagationConfig, reference_array, steering_delays, unit_vector
from visbeam.scene import (
    MultichannelSignal,
    SourceSpec,
    Tone,
    Trajectory,
    WhiteNoise,
    add_diffuse_noise,
    fractional_shift,
    synthesize_scene,
)

PROP = PropagationConfig()
FS = PROP.sample_rate


def _parabolic_peak(r: np.ndarray, lags: np.ndarray) -> float:
    i = int(np.argmax(r))
    y0, y1, y2 = r[i - 1], r[i], r[i + 1]
    return lags[i] + 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)


def test_broadside_tone_identical_on_all_channels():
    src = SourceSpec(Tone(1234.5, 0.5, 0.3), Trajectory.static((0, 0, 2)))
    sig = synthesize_scene(reference_array(), [src], PROP, 0.5)
    assert sig.num_channels == 13
    for ch in sig.channels[1:]:
        np.testing.assert_array_equal(ch, sig.channels[0])


def test_no_sources_gives_silence():
    sig = synthesize_scene(reference_array(), [], PROP, 1.25)
    assert sig.channels.shape == (13, 10000)
    assert not sig.channels.any()


def test_inter_mic_lag_matches_steering_delay():
    array = reference_array()
    doa = DoaAngles(0, 3 * math.pi / 4)
    src = SourceSpec(Tone(2000, 0.5), Trajectory.static(2 * unit_vector(doa)))
    sig = synthesize_scene(array, [src], PROP, 1.0)
    mic = int(np.argmin(np.linalg.norm(array.positions - [0.045, 0, 0], axis=1)))
    x, ref = sig.channels[mic], sig.channels[0]
    lags = np.arange(-2, 3)
    n = x.size

    def corr(a, b):
        return np.array([np.dot(a[2 : n - 2], b[2 + k : n - 2 + k]) for k in lags])

    measured = _parabolic_peak(corr(x, ref), lags)
    tau = -steering_delays(array, doa, PROP)[mic]
    assert tau == pytest.approx(9.276e-5, abs=1e-8)
    # the same estimator applied to the ideal correlation of two tones offset by tau
    ideal = np.cos(2 * np.pi * 2000 * (lags / FS - tau))
    assert measured == pytest.approx(_parabolic_peak(ideal, lags), abs=1e-3)
    assert measured == pytest.approx(tau * FS, abs=0.06)


def test_static_tone_is_exact_plane_wave():
    array = reference_array()
    doa = DoaAngles(0.2, 2.6)
    src = SourceSpec(Tone(700, 0.8, 1.0), Trajectory.static(3 * unit_vector(doa)))
    sig = synthesize_scene(array, [src], PROP, 0.25)
    t = np.arange(sig.num_samples) / FS
    delays = steering_delays(array, doa, PROP)
    expected = 0.8 * np.sin(2 * np.pi * 700 * (t[None, :] - delays[:, None]) + 1.0)
    np.testing.assert_allclose(sig.channels, expected, atol=1e-12)


def test_static_noise_matches_spectral_shift():
    array = reference_array()
    doa = DoaAngles(-0.1, 3.5)
    noise = WhiteNoise(0.2, seed=4)
    sig = synthesize_scene(array, [SourceSpec(noise, Trajectory.static(2 * unit_vector(doa)))], PROP, 0.5)
    base = noise.render(sig.num_samples, FS)
    for m, tau in enumerate(steering_delays(array, doa, PROP)):
        np.testing.assert_allclose(sig.channels[m], fractional_shift(base, -tau, FS), atol=1e-12)
    assert sig.metadata["seeds"] == {"source": 4}


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0))
def test_fractional_shift_inverse(advance_samples):
    x = np.random.default_rng(1).standard_normal(512)
    y = fractional_shift(fractional_shift(x, advance_samples / FS, FS), -advance_samples / FS, FS)
    spec = np.fft.rfft(x)
    spec[-1] = 0
    np.testing.assert_allclose(y, np.fft.irfft(spec, 512), atol=1e-12)


def test_integer_shift_is_circular_roll():
    x = np.sin(2 * np.pi * np.arange(256) * 5 / 256)
    np.testing.assert_allclose(fractional_shift(x, 3 / FS, FS), np.roll(x, -3), atol=1e-12)


def test_moving_tone_follows_direction():
    # while the source holds still, a moving-source render agrees with the exact plane wave
    array = reference_array()
    a, b = 2 * unit_vector(DoaAngles(0, 2.8)), 2 * unit_vector(DoaAngles(0, 3.4))
    traj = Trajectory(np.array([0.0, 0.5, 1.0]), np.array([a, a, b]))
    sig = synthesize_scene(array, [SourceSpec(Tone(1500, 0.5), traj)], PROP, 1.0)
    t = np.arange(sig.num_samples) / FS
    delays = steering_delays(array, DoaAngles(0, 2.8), PROP)
    expected = 0.5 * np.sin(2 * np.pi * 1500 * (t[None, :] - delays[:, None]))
    seg = slice(400, 3600)
    np.testing.assert_allclose(sig.channels[:, seg], expected[:, seg], atol=1e-9)


def test_moving_noise_holds_level():
    array = reference_array()
    traj = Trajectory.from_waypoints([(0.0, (-1, 0, 2)), (1.0, (1, 0, 2))])
    sig = synthesize_scene(array, [SourceSpec(WhiteNoise(0.2, 3), traj)], PROP, 1.0)
    rms = np.sqrt(np.mean(sig.channels[:, 500:-500] ** 2, axis=1))
    np.testing.assert_allclose(rms, 0.2, rtol=0.05)


def test_tone_above_nyquist_rejected():
    with pytest.raises(ValueError, match="Nyquist"):
        synthesize_scene(reference_array(), [SourceSpec(Tone(5000), Trajectory.static((0, 0, 1)))], PROP, 0.1)


def test_source_behind_array_rejected():
    with pytest.raises(ValueError):
        synthesize_scene(reference_array(), [SourceSpec(Tone(500), Trajectory.static((0, 0, -1)))], PROP, 0.1)


def test_clipping_is_flagged():
    src = SourceSpec(Tone(500, 1.5), Trajectory.static((0, 0, 1)))
    with pytest.warns(UserWarning):
        sig = synthesize_scene(reference_array(), [src], PROP, 0.1)
    assert sig.metadata["clipping"]


def test_diffuse_noise_level_and_independence():
    sig = MultichannelSignal(np.tile(np.sin(np.arange(80000) * 0.3), (13, 1)), FS)
    noisy = add_diffuse_noise(sig, 20.0, seed=9)
    noise = noisy.channels - sig.channels
    assert 10 * np.log10(np.mean(sig.channels[0] ** 2) / np.mean(noise**2)) == pytest.approx(20, abs=0.1)
    corr = np.corrcoef(noise)
    assert np.max(np.abs(corr - np.eye(13))) < 0.03


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 3)))
    traj = Trajectory.from_waypoints([(1.0, (0, 0, 1)), (2.0, (1, 0, 1))])
    np.testing.assert_allclose(traj.position_at(0.0), (0, 0, 1))
    np.testing.assert_allclose(traj.position_at(1.5), (0.5, 0, 1))
    np.testing.assert_allclose(traj.position_at(9.0), (1, 0, 1))


def test_sample_file_source(tmp_path):
    from visbeam.scene import SampleFile
    from visbeam.wavio import write_wav

    clip = np.random.default_rng(2).uniform(-0.5, 0.5, 4000).astype(np.float32).astype(float)
    path = tmp_path / "clip.wav"
    write_wav(MultichannelSignal(clip[None, :], FS), path)
    wf = SampleFile(str(path), gain=0.5)
    out = wf.render(6000, FS)
    np.testing.assert_array_equal(out[:4000], 0.5 * clip)
    assert not out[4000:].any()
    with pytest.raises(ValueError, match="sample rate"):
        wf.render(100, 16000)
