"""Uniform 8-bit affine quantization and quantized linear algebra.

Values are mapped onto uint8 by min/max range: q = round((v - min)/scale)
with scale = (max - min)/255. Rounding is half-away-from-zero everywhere,
stated once here because platforms disagree and bit-exactness needs a
single rule.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fixedpoint import rshift_round

LEVELS = 255


class DegenerateRangeError(ValueError):
    """Quantization range has zero width (all input values equal or empty)."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class AccumulatorOverflowError(ArithmeticError):
    """A fixed-point accumulation left the 32-bit lane."""


def round_half_away(x):
    """Round half away from zero (2.5 -> 3, -2.5 -> -3)."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class QuantParams:
    """Affine range of one tensor: min/max with derived scale and zero point."""

    min_val: float
    max_val: float

    def __post_init__(self):
        if not self.min_val < self.max_val:
            raise DegenerateRangeError(
                f"range [{self.min_val}, {self.max_val}] has no width"
            )

    @property
    def scale(self):
        return (self.max_val - self.min_val) / LEVELS

    @property
    def zero_point(self):
        zp = round_half_away(-self.min_val / self.scale)
        return int(np.clip(zp, 0, LEVELS))


@dataclass
class QuantizedTensor:
    data: np.ndarray  # uint8, already shaped
    params: QuantParams

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)

    @property
    def shape(self):
        return self.data.shape


def compute_quant_params(values):
    """Range parameters straddling min(values)..max(values)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DegenerateRangeError("cannot quantize an empty tensor")
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        raise DegenerateRangeError(f"all values equal ({lo}); range has no width")
    return QuantParams(lo, hi)


def quantize(values, params):
    values = np.asarray(values, dtype=np.float64)
    q = round_half_away((values - params.min_val) / params.scale)
    return QuantizedTensor(np.clip(q, 0, LEVELS).astype(np.uint8), params)


def dequantize(tensor):
    return tensor.params.min_val + tensor.data.astype(np.float64) * tensor.params.scale


def quantize_bias(bias, combined_scale):
    """Bias as int32 fixed point in the accumulator scale (scale_w * scale_in)."""
    q = round_half_away(np.asarray(bias, dtype=np.float64) / combined_scale)
    if np.any(np.abs(q) > np.iinfo(np.int32).max):
        raise AccumulatorOverflowError("bias does not fit a 32-bit accumulator")
    return q.astype(np.int32)


class AccumMode(Enum):
    FIXED = "fixed"  # integer accumulators, DSP emulation
    FLOAT = "float"  # float accumulators, AP/CPU path


_INT32_MAX = np.iinfo(np.int32).max


def _check_matvec_shapes(weights, vector):
    if weights.data.ndim != 2:
        raise DimensionError(f"weights must be 2-D, got shape {weights.shape}")
    if vector.data.ndim != 1 or weights.shape[1] != vector.shape[0]:
        raise DimensionError(
            f"cannot multiply weights {weights.shape} by input {vector.shape}"
        )


def fixed_accumulate(weights, vector, bias_q):
    """Zero-point-offset integer dot products plus bias, as int64.

    The result is asserted to fit the 32-bit accumulator lane; this is the
    quantity a DSP holds before the single rescale.
    """
    _check_matvec_shapes(weights, vector)
    w = weights.data.astype(np.int64) - weights.params.zero_point
    x = vector.data.astype(np.int64) - vector.params.zero_point
    acc = w @ x + np.asarray(bias_q, dtype=np.int64)
    if np.any(np.abs(acc) > _INT32_MAX):
        raise AccumulatorOverflowError("matvec accumulation exceeds 32 bits")
    return acc


def quantized_matvec(weights, vector, bias_q, mode=AccumMode.FIXED):
    """Dequantized weights @ input + bias, under either accumulator type.

    FIXED accumulates offset uint8 products in 32-bit integers and rescales
    once at the end; FLOAT accumulates the same offset products in float32
    with the combined scale folded in afterwards. Bias is added
    post-accumulation in both paths (it is stored in the accumulator scale,
    see quantize_bias).
    """
    combined = weights.params.scale * vector.params.scale
    if mode is AccumMode.FIXED:
        acc = fixed_accumulate(weights, vector, bias_q)
        return acc.astype(np.float64) * combined
    _check_matvec_shapes(weights, vector)
    w = (weights.data.astype(np.float32) - np.float32(weights.params.zero_point))
    x = (vector.data.astype(np.float32) - np.float32(vector.params.zero_point))
    acc = w @ x
    return acc.astype(np.float64) * combined + np.asarray(bias_q, dtype=np.float64) * combined


def requantize_fixed(acc, combined_scale, out_params):
    """Integer-only requantization of 32-bit accumulators onto uint8.

    The real multiplier combined_scale/out_scale is represented as a Q31
    mantissa and a shift, so the whole step is int64 multiply + rounding
    shift: no float enters the DSP path between layers.
    """
    multiplier = combined_scale / out_params.scale
    mant, exp = math.frexp(multiplier)
    m0 = round(mant * (1 << 31))
    if m0 == 1 << 31:
        m0 >>= 1
        exp += 1
    acc = np.asarray(acc, dtype=np.int64)
    q = rshift_round(acc * m0, 31 - exp) + out_params.zero_point
    return np.clip(q, 0, LEVELS).astype(np.uint8)
