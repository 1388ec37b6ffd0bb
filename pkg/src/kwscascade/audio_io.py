"""File formats: WAV in, raw PCM in, feature and posterior streams.

Feature stream layout (little-endian):
    0   4  magic b"KWSF"
    4   4  version u32 (currently 1)
    8   4  num_channels u32
    12  4  hop_ms u32
    16  *  frame-major float32 channel data

Posterior stream layout (little-endian):
    0   4  magic b"KWSY"
    4   4  version u32 (currently 1)
    8   4  num_units u32 (M; each frame stores M+1 floats, filler last)
    12  *  frame-major float32 data
"""

import struct
import sys
import wave

import numpy as np

from .frontend import SAMPLE_RATE_HZ, AudioChunk, ConfigError

FEATURE_MAGIC = b"KWSF"
POSTERIOR_MAGIC = b"KWSY"
STREAM_VERSION = 1


def read_wav(path):
    """Load a 16-bit mono 16 kHz RIFF file as an AudioChunk."""
    with wave.open(path, "rb") as wav:
        if wav.getnchannels() != 1:
            raise ConfigError(f"{path}: expected mono audio, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit")
        if wav.getframerate() != SAMPLE_RATE_HZ:
            raise ConfigError(
                f"{path}: expected {SAMPLE_RATE_HZ} Hz, got {wav.getframerate()} Hz"
            )
        raw = wav.readframes(wav.getnframes())
    return AudioChunk(np.frombuffer(raw, dtype="<i2").astype(np.int16))


def write_wav(path, samples):
    samples = np.asarray(samples, dtype=np.int16)
    with wave.open(path, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE_HZ)
        wav.writeframes(samples.astype("<i2").tobytes())


def read_raw_pcm(stream=None):
    """Signed 16-bit little-endian mono PCM from a binary stream (stdin by default)."""
    stream = stream if stream is not None else sys.stdin.buffer
    raw = stream.read()
    if len(raw) % 2:
        raw = raw[:-1]
    return AudioChunk(np.frombuffer(raw, dtype="<i2").astype(np.int16))


def write_features(fileobj, frames, config):
    """Write FeatureFrames in the self-describing float32 stream format."""
    fileobj.write(FEATURE_MAGIC)
    fileobj.write(struct.pack("<III", STREAM_VERSION, config.num_channels, config.hop_ms))
    for frame in frames:
        fileobj.write(np.asarray(frame.channels, dtype="<f4").tobytes())


def read_features(fileobj):
    """Read a feature stream; returns (array [T, C], num_channels, hop_ms)."""
    head = fileobj.read(16)
    if len(head) < 16 or head[:4] != FEATURE_MAGIC:
        raise ValueError("not a feature stream (bad magic)")
    version, channels, hop_ms = struct.unpack("<III", head[4:])
    if version != STREAM_VERSION:
        raise ValueError(f"unsupported feature stream version {version}")
    data = np.frombuffer(fileobj.read(), dtype="<f4").astype(np.float64)
    if data.size % channels:
        raise ValueError("feature stream data is not a whole number of frames")
    return data.reshape(-1, channels), channels, hop_ms


def write_posteriors(fileobj, posteriors, num_units):
    """Write a [T, M+1] posterior matrix in the binary stream format."""
    posteriors = np.asarray(posteriors)
    if posteriors.shape[1] != num_units + 1:
        raise ValueError(f"expected {num_units + 1} columns, got {posteriors.shape[1]}")
    fileobj.write(POSTERIOR_MAGIC)
    fileobj.write(struct.pack("<II", STREAM_VERSION, num_units))
    fileobj.write(posteriors.astype("<f4").tobytes())


def read_posteriors(fileobj):
    """Read a binary posterior stream; returns ([T, M+1] array, num_units)."""
    head = fileobj.read(12)
    if len(head) < 12 or head[:4] != POSTERIOR_MAGIC:
        raise ValueError("not a posterior stream (bad magic)")
    version, num_units = struct.unpack("<II", head[4:])
    if version != STREAM_VERSION:
        raise ValueError(f"unsupported posterior stream version {version}")
    data = np.frombuffer(fileobj.read(), dtype="<f4").astype(np.float64)
    if data.size % (num_units + 1):
        raise ValueError("posterior stream data is not a whole number of frames")
    return data.reshape(-1, num_units + 1), num_units


def read_posteriors_csv(fileobj):
    """CSV posterior stream: header row then one frame per line, filler last."""
    rows = []
    header = None
    for line in fileobj:
        line = line.strip()
        if not line:
            continue
        if header is None:
            header = line.split(",")
            continue
        rows.append([float(v) for v in line.split(",")])
    if header is None or not rows:
        raise ValueError("empty posterior CSV")
    data = np.asarray(rows, dtype=np.float64)
    return data, data.shape[1] - 1


def read_manifest(path):
    """Corpus manifest: 'negative NAME' / 'positive NAME END_MS' lines.

    Paths are relative to the manifest. Returns (negatives, positives) as
    lists of file paths and (path, end_ms) pairs.
    """
    import os

    base = os.path.dirname(os.path.abspath(path))
    negatives, positives = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if parts[0] == "negative" and len(parts) == 2:
                negatives.append(os.path.join(base, parts[1]))
            elif parts[0] == "positive" and len(parts) == 3:
                positives.append((os.path.join(base, parts[1]), int(parts[2])))
            else:
                raise ValueError(f"{path}:{lineno}: bad manifest line {line!r}")
    return negatives, positives
