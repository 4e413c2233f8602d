from __future__ import annotations

import numpy as np
import pytest
from scipy.io import wavfile

from visbeam.scene import MultichannelSignal
from visbeam.wavio import WavFormatError, read_wav, write_wav


def test_float_round_trip_is_bitwise(tmp_path):
    data = np.random.default_rng(0).uniform(-1, 1, (13, 8000)).astype(np.float32).astype(np.float64)
    path = tmp_path / "x.wav"
    write_wav(MultichannelSignal(data, 8000), path)
    back = read_wav(path)
    assert back.sample_rate == 8000
    np.testing.assert_array_equal(back.channels, data)


def test_int16_round_trip(tmp_path):
    data = np.random.default_rng(1).uniform(-0.9, 0.9, (2, 1000))
    path = tmp_path / "x.wav"
    write_wav(MultichannelSignal(data, 16000), path, encoding="int16")
    np.testing.assert_allclose(read_wav(path).channels, data, atol=1 / 32768)


def test_zero_channel_file_rejected(tmp_path):
    path = tmp_path / "empty.wav"
    wavfile.write(path, 8000, np.zeros((100, 0), dtype=np.float32))
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_nan_rejected_and_nothing_written(tmp_path):
    data = np.zeros((2, 10))
    data[1, 3] = np.nan
    path = tmp_path / "nan.wav"
    with pytest.raises(ValueError):
        write_wav(MultichannelSignal(data, 8000), path)
    assert not path.exists()
    assert list(tmp_path.iterdir()) == []


def test_channel_count_check(tmp_path):
    path = tmp_path / "x.wav"
    write_wav(MultichannelSignal(np.zeros((3, 10)), 8000), path)
    with pytest.raises(WavFormatError, match="expected 13"):
        read_wav(path, expected_channels=13)


def test_garbage_file(tmp_path):
    path = tmp_path / "bad.wav"
    path.write_bytes(b"not a wav file at all")
    with pytest.raises(WavFormatError):
        read_wav(path)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_wav(tmp_path / "missing.wav")
