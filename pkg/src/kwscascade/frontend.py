"""Log-mel filterbank frontend over 16 kHz mono PCM.

Two arithmetic paths produce the same feature stream: a plain float path
and a fixed-point path whose intermediates are all integers (see
``fixedpoint`` for the bit widths), making the fixed output byte-identical
across runs and platforms. An optional minimum-statistics noise tracker
sits between the power spectrum and the mel filterbank.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from . import fixedpoint as fxp

SAMPLE_RATE_HZ = 16000

# Fixed-point silence floor is one integer power unit; the float path
# floors at config.log_floor. See FrontendConfig.log_floor.
_FIXED_POWER_FLOOR = 1


class ConfigError(ValueError):
    """Invalid frontend configuration."""


class ArithmeticMode(Enum):
    FLOAT = "float"
    FIXED_POINT = "fixed_point"


@dataclass(frozen=True)
class AudioChunk:
    """A block of signed 16-bit mono PCM at 16 kHz."""

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE_HZ

    def __post_init__(self):
        if self.sample_rate_hz != SAMPLE_RATE_HZ:
            raise ConfigError(f"only {SAMPLE_RATE_HZ} Hz audio is supported, got {self.sample_rate_hz}")
        arr = np.asarray(self.samples)
        if arr.dtype != np.int16:
            if arr.size and (arr.min() < -32768 or arr.max() > 32767):
                raise ConfigError("samples exceed the signed 16-bit range")
            arr = arr.astype(np.int16)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class FrontendConfig:
    frame_length_ms: int = 25
    hop_ms: int = 10
    num_channels: int = 32
    fft_size: int = 512
    mel_low_hz: float = 125.0
    mel_high_hz: float = 7500.0
    log_floor: float = 1e-12
    noise_suppression_enabled: bool = False
    noise_window_frames: int = 100
    arithmetic_mode: ArithmeticMode = ArithmeticMode.FLOAT

    def __post_init__(self):
        if not 1 <= self.num_channels <= 128:
            raise ConfigError(f"num_channels must be in 1..128, got {self.num_channels}")
        if self.fft_size & (self.fft_size - 1) or self.fft_size <= 0:
            raise ConfigError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size < self.frame_samples:
            raise ConfigError(
                f"fft_size {self.fft_size} is shorter than the {self.frame_samples}-sample frame"
            )
        if not 0 < self.mel_low_hz < self.mel_high_hz <= SAMPLE_RATE_HZ / 2:
            raise ConfigError(
                f"mel range [{self.mel_low_hz}, {self.mel_high_hz}] must satisfy "
                f"0 < low < high <= {SAMPLE_RATE_HZ // 2}"
            )
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")
        if self.hop_ms <= 0 or self.frame_length_ms <= 0:
            raise ConfigError("frame_length_ms and hop_ms must be positive")

    @property
    def frame_samples(self):
        return self.frame_length_ms * SAMPLE_RATE_HZ // 1000

    @property
    def hop_samples(self):
        return self.hop_ms * SAMPLE_RATE_HZ // 1000


@dataclass
class FeatureFrame:
    """One frame of log-mel channel energies."""

    channels: np.ndarray
    frame_index: int
    timestamp_ms: int


def frame_timestamp_ms(frame_index, config):
    """End time of a frame in integer milliseconds."""
    end_sample = frame_index * config.hop_samples + config.frame_samples
    return round(end_sample * 1000 / SAMPLE_RATE_HZ)


def num_frames_for(num_samples, config):
    """Frame-count law: floor((len - frame) / hop) + 1, zero when short."""
    if num_samples < config.frame_samples:
        return 0
    return (num_samples - config.frame_samples) // config.hop_samples + 1


@lru_cache(maxsize=None)
def _hann_window(frame_samples):
    n = np.arange(frame_samples)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / (frame_samples - 1))


@lru_cache(maxsize=None)
def _hann_window_q15(frame_samples):
    return fxp.quantize_fract(_hann_window(frame_samples), fxp.WINDOW_FRACT_BITS)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(config):
    """Triangular mel filter matrix [num_channels, fft_size//2 + 1].

    Peaks are 1.0 (no area normalisation); adjacent triangles partition
    interior bins with total weight exactly 1. A filter too narrow to
    cover any FFT bin gets weight 1.0 at the bin nearest its centre so
    every filter has positive mass for any 1..128 channel count (at
    extreme counts this snap can push a bin's stacked weight above 1).
    """
    n_bins = config.fft_size // 2 + 1
    bin_hz = np.arange(n_bins) * SAMPLE_RATE_HZ / config.fft_size
    mel_pts = np.linspace(
        _hz_to_mel(config.mel_low_hz), _hz_to_mel(config.mel_high_hz), config.num_channels + 2
    )
    hz_pts = _mel_to_hz(mel_pts)
    fb = np.zeros((config.num_channels, n_bins))
    for k in range(config.num_channels):
        lo, ctr, hi = hz_pts[k], hz_pts[k + 1], hz_pts[k + 2]
        rising = (bin_hz - lo) / (ctr - lo)
        falling = (hi - bin_hz) / (hi - ctr)
        fb[k] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
        if fb[k].sum() == 0.0:
            fb[k, int(np.argmin(np.abs(bin_hz - ctr)))] = 1.0
    return fb


@lru_cache(maxsize=None)
def _mel_filterbank_q15(config):
    return fxp.quantize_fract(mel_filterbank(config), fxp.MEL_FRACT_BITS)


def mel_center_frequencies(config):
    """Centre frequency in Hz of each mel channel."""
    mel_pts = np.linspace(
        _hz_to_mel(config.mel_low_hz), _hz_to_mel(config.mel_high_hz), config.num_channels + 2
    )
    return _mel_to_hz(mel_pts[1:-1])


def frame_audio(chunk, config):
    """Split PCM into Hann-windowed frames zero-padded to fft_size.

    Returns a [num_frames, fft_size] array: float64 in FLOAT mode, int64
    windowed sample values in FIXED_POINT mode.
    """
    samples = chunk.samples if isinstance(chunk, AudioChunk) else np.asarray(chunk, dtype=np.int16)
    count = num_frames_for(len(samples), config)
    fixed = config.arithmetic_mode is ArithmeticMode.FIXED_POINT
    out = np.zeros((count, config.fft_size), dtype=np.int64 if fixed else np.float64)
    if count == 0:
        return out
    starts = np.arange(count) * config.hop_samples
    idx = starts[:, None] + np.arange(config.frame_samples)[None, :]
    frames = samples[idx].astype(np.int64)
    if fixed:
        out[:, : config.frame_samples] = fxp.rshift_round(
            frames * _hann_window_q15(config.frame_samples), fxp.WINDOW_FRACT_BITS
        )
    else:
        out[:, : config.frame_samples] = frames * _hann_window(config.frame_samples)
    return out


def power_spectra(frames, config):
    """Power spectrum per windowed frame, [num_frames, fft_size//2 + 1].

    FLOAT mode: |rfft|^2 of the raw-scale signal. FIXED_POINT mode: integer
    power of the 1/N-scaled fixed FFT; the scale difference is compensated
    inside the log (see _log_mel_fixed).
    """
    if config.arithmetic_mode is ArithmeticMode.FIXED_POINT:
        return np.stack([fxp.power_spectrum_fixed(f) for f in frames]) if len(frames) else np.zeros(
            (0, config.fft_size // 2 + 1), dtype=np.int64
        )
    spec = np.fft.rfft(frames, n=config.fft_size, axis=-1)
    return spec.real**2 + spec.imag**2


def _log_mel_float(powers, config):
    energies = powers @ mel_filterbank(config).T
    return np.log(np.maximum(energies, config.log_floor))


def _fixed_log_offset_q16(config):
    # Fixed power is float power * 2**-(2 log2 N); mel weights add 2**MEL_FRACT.
    stages = config.fft_size.bit_length() - 1
    return round((2 * stages - fxp.MEL_FRACT_BITS) * np.log(2.0) * (1 << fxp.LOG_FRACT_BITS))


def _log_mel_fixed(powers, config):
    fb_q = _mel_filterbank_q15(config)
    energies = powers @ fb_q.T
    offset = _fixed_log_offset_q16(config)
    out = np.empty(energies.shape, dtype=np.float64)
    for t in range(energies.shape[0]):
        for c in range(energies.shape[1]):
            e = max(int(energies[t, c]), _FIXED_POWER_FLOOR)
            # int -> float conversion by an exact power-of-two factor
            out[t, c] = (fxp.fixed_ln(e) + offset) * 2.0 ** (-fxp.LOG_FRACT_BITS)
    return out


def log_mel_spectrum(frame, config, frame_index=0):
    """Log-mel energies of one windowed frame as a FeatureFrame."""
    if len(frame) != config.fft_size:
        raise ConfigError(f"frame length {len(frame)} != fft_size {config.fft_size}")
    powers = power_spectra(np.asarray(frame)[None, :], config)
    if config.arithmetic_mode is ArithmeticMode.FIXED_POINT:
        channels = _log_mel_fixed(powers, config)[0]
    else:
        channels = _log_mel_float(powers, config)[0]
    return FeatureFrame(channels, frame_index, frame_timestamp_ms(frame_index, config))


class NoiseFloorTracker:
    """Running minimum-statistics noise floor, subtracted per frequency bin.

    Keeps the last ``window_frames`` power spectra (current frame included)
    and subtracts their per-bin minimum, clamping at zero. The estimate is
    exact integer arithmetic when fed integer spectra.
    """

    def __init__(self, num_bins, window_frames=100):
        self._window_frames = window_frames
        self._history = []
        self._num_bins = num_bins

    def process(self, power):
        power = np.asarray(power)
        self._history.append(power.copy())
        if len(self._history) > self._window_frames:
            self._history.pop(0)
        floor = np.min(self._history, axis=0)
        out = power - floor
        return np.maximum(out, 0)

    def reset(self):
        self._history.clear()


def noise_suppress(power_frames, config):
    """Apply the noise tracker to a batch of power spectra (identity when off)."""
    power_frames = np.asarray(power_frames)
    if not config.noise_suppression_enabled:
        return power_frames
    tracker = NoiseFloorTracker(power_frames.shape[-1], config.noise_window_frames)
    return np.stack([tracker.process(p) for p in power_frames]) if len(power_frames) else power_frames


class FrontendStream:
    """Stateful streaming frontend: push PCM samples, collect FeatureFrames.

    State (window position, noise estimate) is per-stream; run one stream
    per thread.
    """

    def __init__(self, config):
        self._config = config
        self._residual = np.zeros(0, dtype=np.int16)
        self._next_frame = 0
        self._tracker = (
            NoiseFloorTracker(config.fft_size // 2 + 1, config.noise_window_frames)
            if config.noise_suppression_enabled
            else None
        )

    @property
    def config(self):
        return self._config

    def push(self, samples):
        cfg = self._config
        samples = samples.samples if isinstance(samples, AudioChunk) else np.asarray(samples, dtype=np.int16)
        buf = np.concatenate([self._residual, samples])
        count = num_frames_for(len(buf), cfg)
        if count == 0:
            self._residual = buf
            return []
        frames = frame_audio(buf, cfg)
        self._residual = buf[count * cfg.hop_samples :]
        powers = power_spectra(frames, cfg)
        if self._tracker is not None:
            powers = np.stack([self._tracker.process(p) for p in powers])
        if cfg.arithmetic_mode is ArithmeticMode.FIXED_POINT:
            logmels = _log_mel_fixed(powers, cfg)
        else:
            logmels = _log_mel_float(powers, cfg)
        out = []
        for row in logmels:
            idx = self._next_frame
            out.append(FeatureFrame(row, idx, frame_timestamp_ms(idx, cfg)))
            self._next_frame += 1
        return out


def compute_features(chunk, config):
    """One-shot feature extraction over a whole chunk."""
    return FrontendStream(config).push(chunk)
