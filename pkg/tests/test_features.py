"""Acoustic feature extraction tests."""

import numpy as np
import pytest
from scipy.fft import dct

from sawvoc.audio import Waveform
from sawvoc.features import (
    COL_ENERGY,
    COL_LOG_F0,
    COL_VUV,
    FEATURE_DIM,
    LOG_FLOOR,
    TooShortError,
    estimate_f0,
    extract_features,
    frame_energy,
    frame_signal,
    load_features,
    mel_cepstra,
    mel_filterbank,
    save_features,
)


def sine(freq, dur=1.0, sr=16000, amp=0.5):
    t = np.arange(int(dur * sr)) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


class TestFraming:
    def test_two_frames(self):
        frames = frame_signal(Waveform(np.zeros(480), 16000), 400, 80)
        assert frames.shape == (2, 400)

    def test_exactly_one_window(self):
        frames = frame_signal(Waveform(np.zeros(400), 16000), 400, 80)
        assert frames.shape == (1, 400)

    def test_one_second(self):
        frames = frame_signal(Waveform(np.zeros(16000), 16000), 400, 80)
        assert frames.shape[0] == (16000 - 400) // 80 + 1 == 196

    def test_too_short(self):
        with pytest.raises(TooShortError):
            frame_signal(Waveform(np.zeros(399), 16000), 400, 80)

    def test_frame_content_and_hann(self):
        x = np.arange(480, dtype=np.float64)
        frames = frame_signal(Waveform(x / 480, 16000), 400, 80)
        np.testing.assert_allclose(frames[1], (x[80:480] / 480) * np.hanning(400))


class TestMelCepstra:
    def test_zero_frame_only_c0(self):
        c = mel_cepstra(np.zeros(400))
        # oracle: log of a constant filterbank output, DCT-II of a constant
        expected = dct(np.full(80, np.log(LOG_FLOOR)), type=2, norm="ortho")[:40]
        np.testing.assert_allclose(c, expected, atol=1e-12)
        assert np.abs(c[1:]).max() < 1e-9

    @pytest.mark.parametrize("band", [45, 60, 70])
    def test_tone_at_band_center_concentrates(self, band):
        fb, centers = mel_filterbank()
        tone = sine(centers[band], dur=0.2)
        frame = frame_signal(tone)[5]
        mag = np.abs(np.fft.rfft(frame, n=512))
        band_energy = fb @ (mag * mag)
        assert int(np.argmax(band_energy)) == band

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        frame = rng.normal(size=400)
        np.testing.assert_array_equal(mel_cepstra(frame), mel_cepstra(frame.copy()))

    def test_needs_enough_bands(self):
        with pytest.raises(ValueError):
            mel_cepstra(np.zeros(400), order=40, num_mel_bands=20)


class TestFrameEnergy:
    def test_zero_frame(self):
        assert frame_energy(np.zeros(400)) == pytest.approx(np.log(LOG_FLOOR))

    def test_constant_frame_oracle(self):
        a = 0.3
        windowed = a * np.hanning(400)
        expected = np.log(LOG_FLOOR + np.mean(windowed**2))
        assert frame_energy(windowed) == pytest.approx(expected, rel=1e-12)

    def test_doubling_raises_by_log4(self):
        rng = np.random.default_rng(1)
        frame = rng.normal(scale=0.2, size=400)
        assert frame_energy(2 * frame) - frame_energy(frame) == pytest.approx(np.log(4), abs=1e-6)


class TestF0:
    def test_200hz_sine(self):
        f0, vuv = estimate_f0(sine(200.0))
        interior = slice(2, -2)
        assert np.all(vuv[interior] == 1)
        assert np.abs(f0[interior] - 200.0).max() <= 2.0

    def test_white_noise_mostly_unvoiced(self):
        rates = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            w = Waveform(rng.uniform(-0.5, 0.5, size=16000), 16000)
            _, vuv = estimate_f0(w)
            rates.append(1.0 - vuv.mean())
        assert np.median(rates) >= 0.9

    def test_silence(self):
        f0, vuv = estimate_f0(Waveform(np.zeros(8000), 16000))
        assert np.all(vuv == 0)
        assert np.all(f0 == 0)

    @pytest.mark.parametrize("freq", [100.0, 137.5, 220.0, 313.0, 400.0])
    def test_relative_error_under_one_percent(self, freq):
        f0, vuv = estimate_f0(sine(freq, dur=0.5))
        voiced = vuv == 1
        assert voiced.mean() > 0.8
        rel = np.abs(f0[voiced] - freq) / freq
        assert rel.max() < 0.01


class TestExtractFeatures:
    def test_layout_and_frame_count(self):
        feats = extract_features(sine(200.0))
        assert feats.frames.shape == (196, FEATURE_DIM)
        assert np.all((feats.vuv == 0) | (feats.vuv == 1))
        voiced = feats.vuv == 1
        assert voiced.any()
        f0 = np.exp(feats.frames[voiced, COL_LOG_F0])
        assert np.all((f0 >= 50) & (f0 <= 500))
        assert np.all(feats.frames[~voiced, COL_LOG_F0] == 0)

    def test_silence_unvoiced(self):
        feats = extract_features(Waveform(np.zeros(8000), 16000))
        assert np.all(feats.vuv == 0)

    def test_determinism(self):
        w = sine(150.0, dur=0.3)
        a = extract_features(w)
        b = extract_features(Waveform(w.samples.copy(), 16000))
        np.testing.assert_array_equal(a.frames, b.frames)

    def test_amplitude_shift_covariance(self):
        w = sine(200.0, dur=0.5, amp=0.2)
        g = 2.5
        a = extract_features(w)
        b = extract_features(Waveform(np.clip(w.samples * g, -1, 1), 16000))
        np.testing.assert_allclose(
            b.frames[:, COL_ENERGY] - a.frames[:, COL_ENERGY], 2 * np.log(g), atol=1e-4
        )
        c0_shift = b.mel[:, 0] - a.mel[:, 0]
        assert c0_shift.std() < 1e-3  # constant shift across frames
        np.testing.assert_array_equal(a.vuv, b.vuv)

    def test_file_roundtrip(self, tmp_path):
        feats = extract_features(sine(200.0, dur=0.3))
        p = tmp_path / "x.feat"
        save_features(p, feats)
        back = load_features(p)
        np.testing.assert_array_equal(back.frames, feats.frames)
        assert back.frame_shift_samples == feats.frame_shift_samples
        assert back.window_size_samples == feats.window_size_samples
        assert back.sample_rate_hz == feats.sample_rate_hz
