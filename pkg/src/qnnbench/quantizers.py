"""k-bit weight quantization and successive-threshold activations.

Weights use a symmetric per-tensor scheme: clamp/scale/round onto the odd
level set {-q, ..., -1, 0, 1, ..., q} with q = 2^(k-1) - 1, so the most
negative two's-complement code is never used and the level set mirrors the
sign structure of the activation grid.

A k-bit hard-tanh activation is evaluated by successive thresholding: the
output level index is the number of thresholds the input strictly exceeds.
With thresholds placed at the midpoints of the 2^k uniform levels on
[-1, 1], thresholding is identical to rounding clamp(x, -1, 1) to the
nearest level (ties toward the lower level). A k-bit activation therefore
carries exactly 2^k - 1 thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuantSpec:
    """Bit width and signedness of one quantized tensor."""

    bit_width: int
    signed: bool = True

    def __post_init__(self):
        if not 1 <= self.bit_width <= 8:
            raise ValueError(f"bit width must be in [1, 8], got {self.bit_width}")

    @property
    def code_min(self) -> int:
        return -(2 ** (self.bit_width - 1) - 1) if self.signed else 0

    @property
    def code_max(self) -> int:
        return 2 ** (self.bit_width - 1) - 1 if self.signed else 2**self.bit_width - 1


@dataclass
class QuantizedTensor:
    codes: np.ndarray
    scale: float
    spec: QuantSpec

    def dequantize(self) -> np.ndarray:
        return dequantize(self)


@dataclass(frozen=True)
class ThresholdSet:
    """Ordered thresholds and output levels of one quantized activation."""

    thresholds: np.ndarray  # (2^k - 1,) strictly increasing
    levels: np.ndarray  # (2^k,) strictly increasing, endpoints -1 and +1
    bit_width: int


def quantize_weights(w: np.ndarray, k: int) -> QuantizedTensor:
    """Symmetric k-bit quantization of a weight tensor.

    scale = max|w| / (2^(k-1) - 1), falling back to 1 for an all-zero
    tensor; codes are round-half-even of w/scale, clamped to the symmetric
    code range. codes * scale is then the nearest representable level to
    each input.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("cannot quantize an empty tensor")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if k < 2:
        raise ValueError(f"signed weights need k >= 2 (level set {{-1,0,1}} minimum), got k={k}")
    spec = QuantSpec(k, signed=True)
    qmax = spec.code_max
    amax = float(np.max(np.abs(w)))
    scale = amax / qmax if amax > 0.0 else 1.0
    codes = np.clip(np.round(w / scale), -qmax, qmax).astype(np.int32)
    return QuantizedTensor(codes=codes, scale=scale, spec=spec)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    """codes * scale, elementwise."""
    return q.codes.astype(np.float64) * q.scale


def hardtanh_thresholds(k: int) -> ThresholdSet:
    """Threshold set of a k-bit hard-tanh: 2^k uniform levels on [-1, 1],
    thresholds at the midpoints between consecutive levels."""
    if not 1 <= k <= 8:
        raise ValueError(f"activation bit width must be in [1, 8], got {k}")
    levels = np.linspace(-1.0, 1.0, 2**k)
    thresholds = (levels[:-1] + levels[1:]) / 2.0
    return ThresholdSet(thresholds=thresholds, levels=levels, bit_width=k)


def threshold_indices(x: np.ndarray, ts: ThresholdSet) -> np.ndarray:
    """Level index per element: the count of thresholds strictly below x."""
    return np.searchsorted(ts.thresholds, np.asarray(x, dtype=np.float64), side="left")


def apply_thresholds(x, ts: ThresholdSet):
    """Quantized activation value (and level index) for input x.

    Equals the nearest level to clamp(x, -1, 1), with exact midpoints
    resolved toward the lower level by the strict comparison.
    Works elementwise on arrays; scalars return scalar results.
    """
    idx = threshold_indices(x, ts)
    if np.isscalar(x) or np.ndim(x) == 0:
        i = int(idx)
        return float(ts.levels[i]), i
    return ts.levels[idx], idx


def ste_backward(x, upstream_grad):
    """Straight-through gradient of the hard-tanh quantizer.

    Passes the upstream gradient where |x| <= 1 (boundary inclusive) and
    blocks it outside the saturation range.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream_grad, dtype=np.float64)
    out = np.where(np.abs(x) <= 1.0, g, 0.0)
    if out.ndim == 0:
        return float(out)
    return out
