"""Streaming keyword decoder: posterior smoothing and ordered max-product score.

Per frame t, unit posteriors are averaged over the trailing L frames
(shorter at stream start, dividing by the actual count), then the score
over the trailing T_s-frame window is

    h = ( max over t_1 <= t_2 <= ... <= t_M of  prod_i s_{t_i}(unit_i) ) ** (1/M)

computed as a log-space dynamic program with running maxima; log(0) is
the -inf sentinel and the M-th root becomes a divide. Ties are broken
toward the earliest frames: the last firing time is minimised first, then
each earlier one. All frame indices are 0-based.
"""

from dataclasses import dataclass

import numpy as np


class InsufficientFramesError(ValueError):
    """Score window holds fewer frames than keyword units."""


@dataclass(frozen=True)
class DecoderConfig:
    num_units: int
    smoothing_window_frames: int = 30
    score_window_frames: int = 100
    threshold: float = 0.5

    def __post_init__(self):
        if self.num_units < 1:
            raise ValueError("num_units must be >= 1")
        if self.smoothing_window_frames < 1:
            raise ValueError("smoothing window must be >= 1")
        if self.score_window_frames < self.num_units:
            raise ValueError("score window must hold at least num_units frames")
        # Thresholds above 1 are legal: they make the detector mute.
        if not self.threshold >= 0:
            raise ValueError("threshold must be >= 0")


@dataclass
class KeywordHypothesis:
    """Score in [0, 1] plus the maximising, non-decreasing firing times."""

    score: float
    alignment: tuple
    end_frame: int


def smooth(posteriors, window):
    """Trailing-mean smoothing of a [T, M] posterior matrix.

    Frame t averages frames max(0, t-window+1)..t; the warm-up prefix
    divides by the number of frames actually present.
    """
    if window < 1:
        raise ValueError("smoothing window must be >= 1")
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim == 1:
        posteriors = posteriors[:, None]
    total = posteriors.shape[0]
    cs = np.cumsum(posteriors, axis=0)
    out = np.empty_like(posteriors)
    head = min(window, total)
    counts = np.arange(1, head + 1, dtype=np.float64)
    out[:head] = cs[:head] / counts[:, None]
    if total > window:
        out[window:] = (cs[window:] - cs[:-window]) / window
    # cancellation in the running sums can leave tiny negatives where the
    # true mean is 0; posteriors live in [0, 1], so clamp
    return np.clip(out, 0.0, 1.0)


def _running_max_earliest(values):
    """Running max plus the earliest index achieving it, vectorised."""
    rm = np.maximum.accumulate(values)
    prev = np.concatenate(([-np.inf], rm[:-1]))
    new = values > prev
    new[0] = True
    arg = np.maximum.accumulate(np.where(new, np.arange(len(values)), -1))
    return rm, arg


def keyword_score(smoothed):
    """Ordered max-product score of one [T, M] window of smoothed posteriors.

    Raises InsufficientFramesError when T < M; the streaming decoder
    scores short warm-up windows instead of raising. Alignment indices
    are window-local.
    """
    smoothed = np.asarray(smoothed, dtype=np.float64)
    if smoothed.ndim == 1:
        smoothed = smoothed[:, None]
    total, units = smoothed.shape
    if total < units:
        raise InsufficientFramesError(f"window of {total} frames cannot fit {units} units")
    return _score_window(smoothed)


def _score_window(smoothed):
    total, units = smoothed.shape
    with np.errstate(divide="ignore"):
        ls = np.log(smoothed)
    level = np.zeros(total)
    backptr = np.zeros((units, total), dtype=np.int64)
    for i in range(units):
        rm, arg = _running_max_earliest(level)
        level = ls[:, i] + rm
        backptr[i] = arg
    _, end_arg = _running_max_earliest(level)
    end = int(end_arg[-1])
    log_h = level[end]
    alignment = [end]
    for i in range(units - 1, 0, -1):
        alignment.append(int(backptr[i][alignment[-1]]))
    alignment.reverse()
    score = 0.0 if log_h == -np.inf else float(np.exp(log_h / units))
    return KeywordHypothesis(min(score, 1.0), tuple(alignment), total - 1)


def batch_frame_scores(posteriors, config):
    """Score at every frame: keyword_score over each trailing window.

    ``posteriors`` is [T, M] (keyword units only) or [T, M+1] with the
    filler as the last column, which is then dropped. The result matches
    StreamingDecoder frame for frame; windows shorter than the score
    window at stream start are scored over the frames available.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2:
        raise ValueError("posteriors must be [T, units]")
    if posteriors.shape[1] == config.num_units + 1:
        posteriors = posteriors[:, : config.num_units]
    if posteriors.shape[1] != config.num_units:
        raise ValueError(
            f"stream has {posteriors.shape[1]} units, config expects {config.num_units}"
        )
    total, units = posteriors.shape
    if total == 0:
        return np.zeros(0)
    window = config.score_window_frames
    with np.errstate(divide="ignore"):
        ls = np.log(smooth(posteriors, config.smoothing_window_frames))
    # -inf-padded prefix makes every window exactly `window` long without
    # changing any score: padded frames can never be on a maximising path
    # unless the whole window is -inf, where the score is 0 either way.
    padded = np.vstack([np.full((window - 1, units), -np.inf), ls])
    sliding = np.lib.stride_tricks.sliding_window_view(padded, window, axis=0)
    # sliding: [T, units, window] view
    out = np.empty(total)
    chunk = max(1, 4_000_000 // (units * window))
    for start in range(0, total, chunk):
        block = sliding[start : start + chunk]
        level = block[:, 0, :]
        run = np.maximum.accumulate(level, axis=1)
        for i in range(1, units):
            run = np.maximum.accumulate(block[:, i, :] + run, axis=1)
        with np.errstate(invalid="ignore"):
            out[start : start + chunk] = np.exp(run[:, -1] / units)
    return np.minimum(np.nan_to_num(out, nan=0.0), 1.0)


class StreamingDecoder:
    """Push one posterior frame at a time, get the trailing-window hypothesis.

    State is O(M * T_s): the smoothing ring plus the smoothed score window.
    Output at frame t equals keyword_score over frames t-T_s+1..t (fewer
    at stream start). Per-stream, single-threaded.
    """

    def __init__(self, config, first_frame_index=0):
        self._config = config
        self._raw = []  # last L raw posterior vectors
        self._raw_sum = np.zeros(config.num_units)
        self._window = []  # last T_s smoothed vectors
        self._next = first_frame_index

    @property
    def config(self):
        return self._config

    def push(self, posteriors):
        """Consume one frame's unit posteriors, return (frame_index, hypothesis)."""
        vec = np.asarray(
            getattr(posteriors, "keyword_posteriors", posteriors), dtype=np.float64
        )
        if vec.shape != (self._config.num_units,):
            raise ValueError(
                f"expected {self._config.num_units} unit posteriors, got shape {vec.shape}"
            )
        self._raw.append(vec)
        self._raw_sum = self._raw_sum + vec
        if len(self._raw) > self._config.smoothing_window_frames:
            self._raw_sum = self._raw_sum - self._raw.pop(0)
        smoothed = np.clip(self._raw_sum / len(self._raw), 0.0, 1.0)
        self._window.append(smoothed)
        if len(self._window) > self._config.score_window_frames:
            self._window.pop(0)
        hyp = _score_window(np.stack(self._window))
        frame_index = self._next
        self._next += 1
        offset = frame_index - len(self._window) + 1
        hyp.alignment = tuple(a + offset for a in hyp.alignment)
        hyp.end_frame = frame_index
        return frame_index, hyp


def streaming_decode(posteriors, config):
    """Generator form of StreamingDecoder over an iterable of frames."""
    dec = StreamingDecoder(config)
    for frame in posteriors:
        yield dec.push(frame)
