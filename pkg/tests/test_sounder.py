"""Tests for CIR estimation, path gains, tap detection, and chunking."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chansounder.emulator import IqStream, make_noise, write_iq_file
from chansounder.sequences import bpsk_modulate, generate_glfsr
from chansounder.sounder import (
    CirFrame,
    DetectedTap,
    SoundingConfig,
    compute_cir_frames,
    detect_taps,
    estimate_noise_floor_gain_db,
    path_gains_db,
    sound_chunked,
    sound_stream,
)

CODE = generate_glfsr(8)
REF = bpsk_modulate(CODE, 1).samples.real
N = len(REF)
FS = 1e6


def stream(samples, fs=FS):
    return IqStream(np.asarray(samples, dtype=complex), fs)


def direct_cir(received, ref):
    """Direct-sum oracle for one frame's normalized circular correlation."""
    L = len(ref)
    energy = np.sum(ref * ref)
    return np.array(
        [np.sum(received * np.roll(ref, k)) / energy for k in range(L)]
    )


class TestComputeCirFrames:
    def test_ideal_unit_channel(self):
        frames = compute_cir_frames(stream(REF), CODE, 1)
        assert len(frames) == 1
        h = frames[0].h_abs
        assert h[0] == pytest.approx(1.0, abs=1e-9)
        assert np.all(h[1:] <= 1 / N + 1e-9)

    def test_delayed_reference_peaks_at_lag(self):
        delayed = np.roll(REF, 64)
        frames = compute_cir_frames(stream(delayed), CODE, 1)
        assert int(np.argmax(frames[0].h_abs)) == 64

    def test_scaled_reference_scales_peak(self):
        frames = compute_cir_frames(stream(0.5 * REF), CODE, 1)
        assert frames[0].h_abs[0] == pytest.approx(0.5, abs=1e-12)

    def test_too_short_stream_rejected(self):
        with pytest.raises(ValueError, match="shorter than one frame"):
            compute_cir_frames(stream(REF[:100]), CODE, 1)

    def test_frame_length_and_magnitude_identity(self):
        rng = np.random.default_rng(0)
        rx = rng.standard_normal(2 * N) + 1j * rng.standard_normal(2 * N)
        frames = compute_cir_frames(stream(rx), CODE, 1)
        assert len(frames) == 2
        for f in frames:
            assert len(f.h_abs) == N
            assert np.all(f.h_abs >= 0)
            assert np.allclose(
                f.h_abs, np.sqrt(f.h_i**2 + f.h_q**2), rtol=0, atol=1e-15
            )

    def test_samples_per_chip_normalization(self):
        spc = 4
        ref4 = bpsk_modulate(CODE, spc).samples.real
        frames = compute_cir_frames(stream(ref4), CODE, spc)
        assert len(frames[0].h_abs) == N * spc
        assert frames[0].h_abs[0] == pytest.approx(1.0, abs=1e-9)

    def test_fft_matches_direct_sum_oracle(self):
        rng = np.random.default_rng(5)
        rx = rng.standard_normal(N) + 1j * rng.standard_normal(N)
        frames = compute_cir_frames(stream(rx), CODE, 1)
        expected = direct_cir(rx, REF)
        got = frames[0].h_i + 1j * frames[0].h_q
        assert np.allclose(got, expected, rtol=1e-9, atol=1e-12)


class TestPathGains:
    def frame(self, h):
        h = np.asarray(h, dtype=float)
        return CirFrame(0, np.arange(len(h)) / FS, h, np.zeros_like(h), np.abs(h))

    def test_unit_peak_zero_budget(self):
        gains = path_gains_db(self.frame([1.0, 0.1]), SoundingConfig())
        assert gains[0] == pytest.approx(0.0)

    def test_base_loss_peak(self):
        g = path_gains_db(
            self.frame([10 ** (-57.55 / 20)]), SoundingConfig()
        )
        assert g[0] == pytest.approx(-57.55)

    def test_amplifier_gains_subtract(self):
        g = path_gains_db(
            self.frame([1.0]),
            SoundingConfig(p_t_db=0.0, g_t_db=15.0, g_r_db=15.0),
        )
        assert g[0] == pytest.approx(-30.0)

    def test_zero_magnitude_maps_to_sentinel(self):
        g = path_gains_db(self.frame([0.0, 1.0]), SoundingConfig())
        assert g[0] <= -300

    @settings(max_examples=30, deadline=None)
    @given(alpha=st.floats(min_value=0.01, max_value=100))
    def test_scaling_shifts_gains_uniformly(self, alpha):
        rng = np.random.default_rng(2)
        rx = rng.standard_normal(N) * 0.1 + REF
        f1 = compute_cir_frames(stream(rx), CODE, 1)[0]
        f2 = compute_cir_frames(stream(alpha * rx), CODE, 1)[0]
        g1 = path_gains_db(f1, SoundingConfig())
        g2 = path_gains_db(f2, SoundingConfig())
        assert np.allclose(g2 - g1, 20 * math.log10(alpha), atol=1e-9)
        assert np.argmax(f1.h_abs) == np.argmax(f2.h_abs)


class TestDetectTaps:
    def make_frames(self, peaks, n_frames=2, noise=1e-4, seed=0):
        """Frames whose CIR has given (lag, amplitude) peaks over weak noise."""
        rng = np.random.default_rng(seed)
        frames = []
        for i in range(n_frames):
            h = noise * np.abs(
                rng.standard_normal(N) + 1j * rng.standard_normal(N)
            )
            for lag, amp in peaks:
                h[lag] = amp
            frames.append(
                CirFrame(i, np.arange(N) / FS, h, np.zeros(N), h)
            )
        return frames

    def test_four_tap_channel_delays(self):
        fs = 50e6
        peaks = [(0, 0.7), (64, 0.1), (100, 0.18), (200, 0.4)]
        frames = [
            CirFrame(
                i,
                np.arange(N) / fs,
                h := self.make_frames(peaks, 1)[0].h_abs,
                np.zeros(N),
                h,
            )
            for i in range(2)
        ]
        config = SoundingConfig()
        floor = estimate_noise_floor_gain_db(frames[0], config)
        detections = detect_taps(
            frames, floor, 6.0, guard=2, config=config, sample_rate_hz=fs
        )
        delays = [t.delay_s for t in detections[0]]
        assert delays == pytest.approx([0.0, 1.28e-6, 2e-6, 4e-6])

    def test_noise_only_frame_detects_nothing(self):
        rng = np.random.default_rng(3)
        h = 1e-3 * np.abs(rng.standard_normal(N) + 1j * rng.standard_normal(N))
        frame = CirFrame(0, np.arange(N) / FS, h, np.zeros(N), h)
        config = SoundingConfig()
        floor = estimate_noise_floor_gain_db(frame, config)
        detections = detect_taps([frame], floor, 6.0, config=config)
        assert detections[0] == []

    def test_guard_suppresses_close_weaker_peak(self):
        frames = self.make_frames([(100, 1.0), (103, 0.5)], 1)
        config = SoundingConfig()
        floor = estimate_noise_floor_gain_db(frames[0], config)
        detections = detect_taps([frame := frames[0]], floor, 6.0, guard=4,
                                 config=config)
        lags = [round(t.delay_s * FS) for t in detections[0]]
        assert lags == [0]  # only the anchor peak survives the guard

        detections = detect_taps([frame], floor, 6.0, guard=2, config=config)
        lags = [round(t.delay_s * FS + 100) % N for t in detections[0]]
        assert lags == [100, 103]

    def test_adjacent_weaker_sample_is_not_a_local_maximum(self):
        frames = self.make_frames([(100, 1.0), (101, 0.8)], 1)
        config = SoundingConfig()
        floor = estimate_noise_floor_gain_db(frames[0], config)
        detections = detect_taps(frames[:1], floor, 6.0, guard=4, config=config)
        assert len(detections[0]) == 1

    def test_threshold_must_be_positive(self):
        with pytest.raises(ValueError):
            detect_taps([], -50.0, 0.0)

    def test_delay_covariance_under_stream_delay(self):
        d = 17
        rx0 = np.tile(REF, 4)
        rxd = np.roll(rx0, d)
        cfg = SoundingConfig()
        r0 = sound_stream(stream(rx0), cfg, CODE, 1)
        rd = sound_stream(stream(rxd), cfg, CODE, 1)
        # anchors absorb the shift; absolute anchor lags differ by d
        assert (rd.anchor_lag - r0.anchor_lag) % N == d


class TestSoundChunked:
    def build_capture(self, tmp_path, n_frames=686, noise_db=-45.0, seed=4):
        rx = np.tile(REF * 0.9, n_frames).astype(complex)
        rx += make_noise(len(rx), noise_db, seed)
        path = tmp_path / "capture.iq"
        write_iq_file(stream(rx), path)
        return path, rx

    def test_chunked_equals_unchunked(self, tmp_path):
        from chansounder.emulator import read_iq_file

        path, _ = self.build_capture(tmp_path)
        # 0.06 s chunks over a 0.175 s capture: three chunks
        cfg = SoundingConfig(chunk_duration_s=0.06)
        chunked = sound_chunked(path, cfg, CODE, 1)
        single = sound_stream(read_iq_file(path), cfg, CODE, 1)
        assert chunked.n_frames == single.n_frames == 686
        assert chunked.anchor_lag == single.anchor_lag
        for a, b in zip(chunked.detections, single.detections):
            assert a == b

    def test_capture_shorter_than_chunk(self, tmp_path):
        path, _ = self.build_capture(tmp_path, n_frames=3)
        cfg = SoundingConfig(chunk_duration_s=60.0)
        report = sound_chunked(path, cfg, CODE, 1)
        assert report.n_frames == 3

    def test_sample_rate_mismatch_rejected(self, tmp_path):
        path, _ = self.build_capture(tmp_path, n_frames=2)
        cfg = SoundingConfig(sample_rate_hz=2e6)
        with pytest.raises(ValueError, match="sample rate"):
            sound_chunked(path, cfg, CODE, 1)

    def test_unreadable_capture_is_an_error(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            sound_chunked(tmp_path / "nope.iq", SoundingConfig(), CODE, 1)

    def test_noise_free_gain_is_frame_stable(self, tmp_path):
        rx = np.tile(REF * 10 ** (-20 / 20), 50).astype(complex)
        path = tmp_path / "clean.iq"
        write_iq_file(stream(rx), path)
        report = sound_chunked(path, SoundingConfig(), CODE, 1)
        _, _, gains = report.strongest_tap_series()
        assert np.std(gains) < 1e-6
        # absolute level limited by float32 capture quantization
        assert np.mean(gains) == pytest.approx(-20.0, abs=1e-5)
