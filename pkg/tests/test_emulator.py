"""Tests for the FIR channel emulator, noise generation, and IQ files."""

import json
import math

import numpy as np
import pytest

from chansounder.emulator import (
    EmulatorConfig,
    IqFileWriter,
    IqStream,
    apply_channel,
    emulate_repeated_reference_to_file,
    iq_file_sample_count,
    make_noise,
    noise_floor_db_for_dynamic_range,
    pair_base_loss_db,
    read_iq_file,
    read_iq_sidecar,
    write_iq_file,
)
from chansounder.tap_approx import TapFile, TapSet

FS = 1e6
GRID = 1e-6  # one sample per grid step at FS


def tap_file_from(taps_per_ms, grid_dt_s=GRID, k=4, pair=(1, 2)):
    """taps_per_ms: list of tap tuples, one entry per millisecond."""
    records = {
        (ms, *pair): TapSet(tuple(taps), grid_dt_s, ms)
        for ms, taps in enumerate(taps_per_ms)
    }
    return TapFile(2, grid_dt_s, k, len(taps_per_ms), 0.0, records)


def quiet_config(**kwargs):
    defaults = dict(base_loss_db=0.0, noise_floor_db=None, seed=1)
    defaults.update(kwargs)
    return EmulatorConfig(**defaults)


def rand_stream(n, seed=0, fs=FS):
    rng = np.random.default_rng(seed)
    return IqStream(
        rng.standard_normal(n) + 1j * rng.standard_normal(n), fs
    )


class TestApplyChannel:
    def test_identity_filter(self):
        taps = tap_file_from([[(0, 1 + 0j)]] * 2)
        x = rand_stream(1500)
        y = apply_channel(x, taps, (1, 2), quiet_config())
        assert np.array_equal(y.samples, x.samples)

    def test_base_loss_scaling(self):
        taps = tap_file_from([[(0, 1 + 0j)]] * 2)
        x = rand_stream(1500)
        y = apply_channel(x, taps, (1, 2), quiet_config(base_loss_db=57.55))
        assert np.allclose(y.samples, x.samples * 10 ** (-57.55 / 20), rtol=1e-12)

    def test_single_tap_delays_input(self):
        d = 37
        taps = tap_file_from([[(d, 0.5 + 0j)]] * 3)
        x = rand_stream(2500)
        y = apply_channel(x, taps, (1, 2), quiet_config())
        assert np.allclose(y.samples[d:], 0.5 * x.samples[:-d], rtol=1e-12)
        assert np.allclose(y.samples[:d], 0.0)
        # brute-force correlation oracle: the peak sits at lag d
        lags = range(0, 101)
        corr = [
            abs(np.vdot(x.samples[: len(x.samples) - k], y.samples[k:]))
            for k in lags
        ]
        assert int(np.argmax(corr)) == d

    def test_linearity(self):
        taps = tap_file_from([[(0, 0.3 - 0.4j), (11, 0.2j)]] * 2)
        x = rand_stream(2000)
        alpha = 2.5 - 1.25j
        y1 = apply_channel(x, taps, (1, 2), quiet_config())
        scaled = IqStream(alpha * x.samples, FS)
        y2 = apply_channel(scaled, taps, (1, 2), quiet_config())
        assert np.allclose(y2.samples, alpha * y1.samples, rtol=1e-12)

    def test_superposition_across_taps(self):
        x = rand_stream(2000)
        both = tap_file_from([[(3, 0.8 + 0j), (17, -0.1 + 0.2j)]] * 2)
        only_a = tap_file_from([[(3, 0.8 + 0j)]] * 2)
        only_b = tap_file_from([[(17, -0.1 + 0.2j)]] * 2)
        y = apply_channel(x, both, (1, 2), quiet_config())
        ya = apply_channel(x, only_a, (1, 2), quiet_config())
        yb = apply_channel(x, only_b, (1, 2), quiet_config())
        assert np.allclose(y.samples, ya.samples + yb.samples, rtol=1e-12)

    def test_shift_inside_coherence_interval(self):
        taps = tap_file_from([[(2, 0.7 + 0.1j)]])
        x = np.zeros(900, dtype=complex)
        x[:100] = np.exp(1j * np.linspace(0, 3, 100))
        m = 50
        shifted = np.roll(x, m)
        y = apply_channel(IqStream(x, FS), taps, (1, 2), quiet_config())
        ys = apply_channel(IqStream(shifted, FS), taps, (1, 2), quiet_config())
        assert np.allclose(ys.samples[m:], y.samples[:-m], rtol=1e-12)

    def test_tap_update_step_at_millisecond_boundary(self):
        c = 0.4 + 0.3j
        taps = tap_file_from([[(0, c)], [(0, 2 * c)]])
        x = IqStream(np.ones(2000, dtype=complex), FS)
        y = apply_channel(x, taps, (1, 2), quiet_config())
        boundary = 1000  # 1 ms at 1 MS/s
        step_db = 20 * np.log10(
            abs(y.samples[boundary]) / abs(y.samples[boundary - 1])
        )
        assert step_db == pytest.approx(6.02, abs=0.005)
        assert np.all(y.samples[:boundary] == y.samples[0])
        assert np.all(y.samples[boundary:] == y.samples[boundary])

    def test_output_power_follows_base_loss(self):
        taps = tap_file_from([[(0, 1 + 0j)]] * 200)
        n = 200_000
        x = rand_stream(n)
        loss = 13.0
        y = apply_channel(x, taps, (1, 2), quiet_config(base_loss_db=loss))
        p_in = np.mean(np.abs(x.samples) ** 2)
        p_out = np.mean(np.abs(y.samples) ** 2)
        ratio_db = 10 * np.log10(p_out / p_in)
        assert ratio_db == pytest.approx(-loss, abs=0.01)

    def test_missing_pair_rejected(self):
        taps = tap_file_from([[(0, 1 + 0j)]])
        with pytest.raises(ValueError, match="pair"):
            apply_channel(rand_stream(1000), taps, (9, 9), quiet_config())

    def test_incompatible_grid_rejected(self):
        taps = tap_file_from([[(0, 1 + 0j)]], grid_dt_s=1.5e-6 / 2)
        with pytest.raises(ValueError, match="grid"):
            apply_channel(rand_stream(1000), taps, (1, 2), quiet_config())

    def test_noise_is_deterministic_per_seed_and_pair(self):
        taps = tap_file_from([[(0, 1 + 0j)]] * 2, pair=(1, 2))
        x = rand_stream(1200)
        cfg = quiet_config(noise_floor_db=-30.0, seed=42)
        y1 = apply_channel(x, taps, (1, 2), cfg)
        y2 = apply_channel(x, taps, (1, 2), cfg)
        assert np.array_equal(y1.samples, y2.samples)

    def test_offset_origin_switches_taps_at_absolute_boundaries(self):
        # stream begins half a millisecond into the tap timeline; the
        # coefficient change at 1 ms must land 0.5 ms into the stream
        taps = tap_file_from([[(0, 1 + 0j)], [(0, 2 + 0j)]])
        x = IqStream(np.ones(1000, dtype=complex), FS, origin_time_s=0.5e-3)
        y = apply_channel(x, taps, (1, 2), quiet_config())
        assert np.all(y.samples[:500] == 1.0)
        assert np.all(y.samples[500:] == 2.0)


class TestMakeNoise:
    def test_deterministic_per_seed(self):
        a = make_noise(1000, -20.0, 7)
        b = make_noise(1000, -20.0, 7)
        assert np.array_equal(a, b)
        c = make_noise(1000, -20.0, 8)
        assert not np.array_equal(a, c)

    def test_disabled_noise_is_silent(self):
        assert np.all(make_noise(100, None, 1) == 0)
        assert np.all(make_noise(100, float("-inf"), 1) == 0)

    def test_empirical_power_within_one_percent(self):
        power_db = -17.0
        n = make_noise(1_000_000, power_db, 11)
        measured = np.mean(np.abs(n) ** 2)
        assert measured == pytest.approx(10 ** (power_db / 10), rel=0.01)


class TestBaseLossPerturbation:
    def test_symmetric_across_link_direction(self):
        cfg = EmulatorConfig(base_loss_db=57.55, base_loss_sd_db=1.23, seed=3)
        assert pair_base_loss_db(cfg, 1, 2) == pair_base_loss_db(cfg, 2, 1)

    def test_distribution_statistics(self):
        cfg = EmulatorConfig(base_loss_db=57.55, base_loss_sd_db=1.23, seed=3)
        losses = [
            pair_base_loss_db(cfg, i, j)
            for i in range(1, 21)
            for j in range(i + 1, 21)
        ]
        assert np.mean(losses) == pytest.approx(57.55, abs=0.5)
        assert np.std(losses) == pytest.approx(1.23, abs=0.5)

    def test_update_interval_floor(self):
        with pytest.raises(ValueError):
            EmulatorConfig(tap_update_interval_s=0.5e-3)


class TestIqFiles:
    def test_round_trip(self, tmp_path):
        stream = rand_stream(777, seed=5)
        path = tmp_path / "capture.iq"
        write_iq_file(stream, path)
        back = read_iq_file(path)
        assert back.sample_rate_hz == stream.sample_rate_hz
        assert np.allclose(back.samples, stream.samples, atol=1e-6)

    def test_raw_layout_is_interleaved_float32_le(self, tmp_path):
        stream = IqStream(np.array([1 + 2j, 3 - 4j]), FS)
        path = tmp_path / "capture.iq"
        write_iq_file(stream, path)
        raw = np.fromfile(path, dtype="<f4")
        assert np.array_equal(raw, [1, 2, 3, -4])
        meta = json.loads((tmp_path / "capture.iq.json").read_text())
        assert meta["sample_rate_hz"] == FS

    def test_partial_read_with_offset(self, tmp_path):
        stream = rand_stream(100, seed=6)
        path = tmp_path / "capture.iq"
        write_iq_file(stream, path)
        part = read_iq_file(path, start_sample=40, count=10)
        assert np.allclose(part.samples, stream.samples[40:50], atol=1e-6)
        assert part.origin_time_s == pytest.approx(40 / FS)

    def test_missing_sidecar_is_an_error(self, tmp_path):
        path = tmp_path / "capture.iq"
        np.zeros(4, dtype="<f4").tofile(path)
        with pytest.raises(FileNotFoundError, match="sidecar"):
            read_iq_file(path)

    def test_streaming_writer_matches_bulk(self, tmp_path):
        stream = rand_stream(1000, seed=9)
        bulk = tmp_path / "bulk.iq"
        streamed = tmp_path / "streamed.iq"
        write_iq_file(stream, bulk)
        with IqFileWriter(streamed, FS) as w:
            w.append(stream.samples[:300])
            w.append(stream.samples[300:])
        assert bulk.read_bytes() == streamed.read_bytes()
        assert iq_file_sample_count(streamed) == 1000


class TestStreamingEmulation:
    def test_matches_in_memory_apply_channel(self, tmp_path):
        rng = np.random.default_rng(3)
        ref = np.sign(rng.standard_normal(255)).astype(float)
        taps = tap_file_from(
            [
                [(0, 0.7 + 0j), (64, 0.1j)],
                [(0, 0.5 + 0.2j), (64, 0.1j)],
                [(3, 1.0 + 0j)],
                [(3, 1.0 + 0j)],
            ]
        )
        total = 3700
        cfg = quiet_config(base_loss_db=7.0, noise_floor_db=-40.0, seed=5)
        out = tmp_path / "capture.iq"
        # tiny chunks force several boundary crossings
        emulate_repeated_reference_to_file(
            taps, (1, 2), cfg, ref, FS, total, out, chunk_samples=611
        )
        tiled = IqStream(np.tile(ref, math.ceil(total / 255))[:total], FS)
        expected = apply_channel(tiled, taps, (1, 2), cfg)
        got = read_iq_file(out)
        assert np.allclose(got.samples, expected.samples, atol=2e-6)


class TestNoiseCalibration:
    def test_correlated_noise_band_lands_at_target(self):
        # Push pure noise through the correlator arithmetic and check the
        # per-lag RMS matches the closed form used by the calibration.
        n_code, spc = 255, 1
        peak = 1.0
        power_db = noise_floor_db_for_dynamic_range(peak, n_code, spc, 43.0)
        noise = make_noise(255 * 4000, power_db, 123)
        frames = noise.reshape(4000, 255)
        ref = np.sign(np.random.default_rng(1).standard_normal(255))
        h = np.fft.ifft(
            np.fft.fft(frames, axis=1) * np.conj(np.fft.fft(ref)), axis=1
        ) / 255.0
        rms_lag = np.sqrt(np.mean(np.abs(h) ** 2))
        expected_rms = peak * 10 ** (-43 / 20) / math.sqrt(math.log(255))
        assert rms_lag == pytest.approx(expected_rms, rel=0.05)
