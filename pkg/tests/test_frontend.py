import numpy as np
import pytest

from kwscascade.frontend import (
    ArithmeticMode,
    AudioChunk,
    ConfigError,
    FrontendConfig,
    FrontendStream,
    NoiseFloorTracker,
    compute_features,
    frame_audio,
    log_mel_spectrum,
    mel_center_frequencies,
    mel_filterbank,
    noise_suppress,
    num_frames_for,
    power_spectra,
)
from kwscascade.synthetic import speech_like_noise, synth_tone

FIXED = FrontendConfig(arithmetic_mode=ArithmeticMode.FIXED_POINT)
FLOAT = FrontendConfig()


def dft_filterbank_oracle(samples, config):
    """Direct DFT-matrix + filterbank log-mel, independent of the fft path."""
    n = config.fft_size
    frame = np.zeros(n)
    windowed = samples.astype(np.float64) * (
        0.5 - 0.5 * np.cos(2 * np.pi * np.arange(len(samples)) / (len(samples) - 1))
    )
    frame[: len(samples)] = windowed
    kidx = np.arange(n // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(kidx, np.arange(n)) / n)
    power = np.abs(basis @ frame) ** 2
    energies = mel_filterbank(config) @ power
    return np.log(np.maximum(energies, config.log_floor))


class TestAudioChunk:
    def test_rejects_other_sample_rates(self):
        with pytest.raises(ConfigError):
            AudioChunk(np.zeros(10, dtype=np.int16), sample_rate_hz=8000)

    def test_accepts_full_int16_range(self):
        chunk = AudioChunk(np.array([-32768, 32767], dtype=np.int16))
        assert len(chunk) == 2


class TestConfig:
    def test_defaults_valid(self):
        cfg = FrontendConfig()
        assert cfg.frame_samples == 400
        assert cfg.hop_samples == 160

    def test_fft_shorter_than_frame_rejected(self):
        with pytest.raises(ConfigError):
            FrontendConfig(fft_size=256)

    def test_fft_must_be_power_of_two(self):
        with pytest.raises(ConfigError):
            FrontendConfig(fft_size=500)

    def test_mel_range_checked(self):
        with pytest.raises(ConfigError):
            FrontendConfig(mel_low_hz=5000.0, mel_high_hz=400.0)

    def test_channel_bounds(self):
        with pytest.raises(ConfigError):
            FrontendConfig(num_channels=0)
        with pytest.raises(ConfigError):
            FrontendConfig(num_channels=129)


class TestFraming:
    def test_exact_frame_length_yields_one(self):
        assert len(frame_audio(np.zeros(400, dtype=np.int16), FLOAT)) == 1

    def test_one_sample_short_yields_zero(self):
        assert len(frame_audio(np.zeros(399, dtype=np.int16), FLOAT)) == 0

    def test_720_samples_yield_three_frames_at_hops(self):
        # impulse at 160 + 200 must land at offset 200 of frame 1
        samples = np.zeros(720, dtype=np.int16)
        samples[360] = 10000
        frames = frame_audio(samples, FLOAT)
        assert frames.shape == (3, 512)
        window = 0.5 - 0.5 * np.cos(2 * np.pi * 200 / 399)
        assert frames[1, 200] == pytest.approx(10000 * window)
        assert frames[0, 360] == pytest.approx(10000 * (0.5 - 0.5 * np.cos(2 * np.pi * 360 / 399)))
        assert np.all(frames[2, 40 + 1 :] == 0.0) or frames[2, 40] != 0.0

    def test_count_law_random_lengths(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(0, 5000))
            expected = 0 if n < 400 else (n - 400) // 160 + 1
            assert num_frames_for(n, FLOAT) == expected
            assert len(frame_audio(np.zeros(n, dtype=np.int16), FLOAT)) == expected

    def test_frames_zero_padded_to_fft_size(self):
        frames = frame_audio(np.full(400, 1000, dtype=np.int16), FLOAT)
        assert np.all(frames[0, 400:] == 0.0)


class TestLogMel:
    def test_all_zero_frame_hits_log_floor(self):
        frame = np.zeros(512)
        out = log_mel_spectrum(frame, FLOAT)
        assert np.allclose(out.channels, np.log(FLOAT.log_floor))

    def test_sine_at_channel_center_wins_that_channel(self):
        centers = mel_center_frequencies(FLOAT)
        for ch in (4, 12, 20, 28):
            tone = synth_tone(centers[ch], 400, amplitude=8000.0)
            frames = frame_audio(tone, FLOAT)
            out = log_mel_spectrum(frames[0], FLOAT)
            assert int(np.argmax(out.channels)) == ch
            oracle = dft_filterbank_oracle(tone, FLOAT)
            assert int(np.argmax(oracle)) == ch
            assert np.allclose(out.channels, oracle, atol=1e-6)

    def test_no_nan_or_inf_on_any_input(self):
        rng = np.random.default_rng(3)
        for cfg in (FLOAT, FIXED):
            for samples in (
                np.zeros(800, dtype=np.int16),
                rng.integers(-32768, 32767, 800).astype(np.int16),
                np.full(800, 32767, dtype=np.int16),
            ):
                for frame in compute_features(samples, cfg):
                    assert np.all(np.isfinite(frame.channels))

    def test_fixed_mode_output_at_least_float_floor(self):
        frames = compute_features(np.zeros(800, dtype=np.int16), FIXED)
        for frame in frames:
            assert np.all(frame.channels >= np.log(FIXED.log_floor))

    def test_timestamps_and_indices(self):
        frames = compute_features(np.zeros(800, dtype=np.int16), FLOAT)
        assert [f.frame_index for f in frames] == [0, 1, 2]
        assert [f.timestamp_ms for f in frames] == [25, 35, 45]


class TestMelFilterbank:
    def test_interior_bins_have_weight_in_unit_interval(self):
        for channels in (32, 40):
            cfg = FrontendConfig(num_channels=channels)
            fb = mel_filterbank(cfg)
            bin_hz = np.arange(cfg.fft_size // 2 + 1) * 16000 / cfg.fft_size
            totals = fb.sum(axis=0)
            interior = (bin_hz > cfg.mel_low_hz) & (bin_hz < cfg.mel_high_hz)
            assert np.all(totals[interior] > 0.0)
            assert np.all(totals[interior] <= 1.0 + 1e-9)

    def test_every_filter_has_positive_mass_up_to_128_channels(self):
        for channels in (1, 32, 40, 64, 128):
            fb = mel_filterbank(FrontendConfig(num_channels=channels))
            assert np.all(fb.sum(axis=1) > 0.0)


class TestFixedPointPath:
    def test_bit_identical_across_runs(self):
        noise = speech_like_noise(8000, seed=1)
        a = np.stack([f.channels for f in compute_features(noise, FIXED)])
        b = np.stack([f.channels for f in compute_features(noise, FIXED)])
        assert a.tobytes() == b.tobytes()

    def test_float_fixed_agreement_on_speech_like_noise(self):
        for seed in range(5):
            noise = speech_like_noise(16000, seed=seed, rms=4000.0)
            flo = np.stack([f.channels for f in compute_features(noise, FLOAT)])
            fix = np.stack([f.channels for f in compute_features(noise, FIXED)])
            assert np.abs(flo - fix).max() <= 0.1

    def test_fixed_frames_are_integers(self):
        frames = frame_audio(np.full(400, 1234, dtype=np.int16), FIXED)
        assert frames.dtype == np.int64
        powers = power_spectra(frames, FIXED)
        assert powers.dtype == np.int64


class TestNoiseSuppression:
    def test_disabled_is_identity(self):
        spectra = np.abs(np.random.default_rng(0).normal(size=(20, 257))) + 1.0
        out = noise_suppress(spectra, FLOAT)
        assert np.array_equal(out, spectra)

    def test_constant_spectrum_converges_to_zero(self):
        cfg = FrontendConfig(noise_suppression_enabled=True, noise_window_frames=50)
        spectra = np.full((80, 257), 100.0)
        out = noise_suppress(spectra, cfg)
        # min includes the current frame, so a stationary floor zeroes out
        # well inside the warm-up window
        assert np.all(out[cfg.noise_window_frames :] <= 0.01 * 100.0)

    def test_tone_burst_retains_above_noise_power(self):
        cfg = FrontendConfig(noise_suppression_enabled=True, noise_window_frames=50)
        spectra = np.full((60, 257), 10.0)
        tone_bin, tone_power = 100, 500.0
        spectra[30:40, tone_bin] += tone_power
        out = noise_suppress(spectra, cfg)
        retained = out[30:40, tone_bin]
        assert np.all(retained >= 0.9 * tone_power)

    def test_tracker_handles_integer_spectra_exactly(self):
        tracker = NoiseFloorTracker(4, window_frames=3)
        out1 = tracker.process(np.array([5, 5, 5, 5], dtype=np.int64))
        out2 = tracker.process(np.array([7, 5, 9, 5], dtype=np.int64))
        assert np.array_equal(out1, np.zeros(4, dtype=np.int64))
        assert np.array_equal(out2, np.array([2, 0, 4, 0]))
        assert out2.dtype == np.int64


class TestNoiseSuppressionInPipeline:
    def test_keyword_survives_the_tracker(self):
        # tone keyword over stationary noise: suppression changes the
        # features but the detector still peaks at the keyword
        from kwscascade.cascade import DetectorStream
        from kwscascade.decoder import DecoderConfig
        from kwscascade.synthetic import make_tone_acoustic_model, synth_keyword_audio, synth_noise

        rng = np.random.default_rng(0)
        plain = FrontendConfig()
        suppressed = FrontendConfig(noise_suppression_enabled=True, noise_window_frames=80)
        keyword, _ = synth_keyword_audio(plain, 3, unit_ms=150)
        audio = synth_noise(len(keyword) + 32000, rng, rms=300.0)
        region = slice(16000, 16000 + len(keyword))
        audio[region] = np.clip(
            audio[region].astype(np.int32) + keyword, -32768, 32767
        ).astype(np.int16)

        scores = {}
        for cfg in (plain, suppressed):
            det = DetectorStream(
                cfg, make_tone_acoustic_model(cfg, 3),
                DecoderConfig(3, smoothing_window_frames=10,
                              score_window_frames=100, threshold=0.3),
            )
            scores[cfg.noise_suppression_enabled] = max(
                hyp.score for _, hyp in det.push(audio)
            )
        assert scores[True] > 0.9
        assert scores[False] > 0.9
        plain_feats = np.stack([f.channels for f in compute_features(audio, plain)])
        supp_feats = np.stack([f.channels for f in compute_features(audio, suppressed)])
        assert not np.allclose(plain_feats, supp_feats)


class TestStreaming:
    def test_chunked_push_equals_one_shot(self):
        noise = speech_like_noise(6400, seed=9)
        whole = np.stack([f.channels for f in compute_features(noise, FLOAT)])
        stream = FrontendStream(FLOAT)
        collected = []
        for start in range(0, len(noise), 233):
            collected.extend(stream.push(noise[start : start + 233]))
        chunked = np.stack([f.channels for f in collected])
        assert chunked.shape == whole.shape
        assert np.allclose(chunked, whole)

    def test_frame_indices_continue_across_pushes(self):
        stream = FrontendStream(FLOAT)
        first = stream.push(np.zeros(560, dtype=np.int16))
        second = stream.push(np.zeros(320, dtype=np.int16))
        assert [f.frame_index for f in first + second] == [0, 1, 2, 3]
