"""
FP8 (E4M3) linear-layer emulation
1 sign, 4 exponent (bias 7) and 3 mantissa bits, no infinities, NaN at S.1111.111.
Weights carry a per-tensor scale; activations are quantized dynamically per call.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import InputValidationError

logger = logging.getLogger(__name__)

E4M3_MAX = 448.0
E4M3_NAN = 0x7F
ELIGIBLE_MULTIPLE = 16

BLOB_HEADER = np.dtype([("in_dim", "<u4"), ("out_dim", "<u4"), ("scale", "<f8")])


@lru_cache(maxsize=1)
def _table() -> np.ndarray:
    codes = np.arange(256)
    sign = np.where(codes >> 7, -1.0, 1.0)
    exponent = (codes >> 3) & 0xF
    mantissa = (codes & 0x7).astype(np.float64)

    magnitude = np.where(
        exponent == 0,
        mantissa * 2.0 ** -9,
        (1.0 + mantissa / 8.0) * 2.0 ** (exponent - 7.0),
    )
    values = sign * magnitude
    values[(exponent == 0xF) & (codes & 0x7 == 0x7)] = np.nan
    values.setflags(write=False)
    return values


def e4m3_table() -> np.ndarray:
    """Decoded value of every byte 0x00..0xFF"""
    return _table().copy()


def decode_e4m3(byte):
    codes = np.asarray(byte, dtype=np.uint8)
    out = _table()[codes]
    return float(out) if out.ndim == 0 else out


def encode_e4m3(x):
    """
    Round to nearest, ties to even code; magnitudes above 448 saturate.

    NaN encodes to 0x7F. The sign of zero is kept.
    """
    x = np.asarray(x, dtype=np.float64)
    positives = _table()[:E4M3_NAN]  # 0x00..0x7E, strictly increasing

    a = np.minimum(np.abs(np.nan_to_num(x, nan=0.0)), E4M3_MAX)
    hi = np.clip(np.searchsorted(positives, a, side="left"), 0, E4M3_NAN - 1)
    lo = np.maximum(hi - 1, 0)
    d_lo = a - positives[lo]
    d_hi = positives[hi] - a
    pick_hi = (d_hi < d_lo) | ((d_hi == d_lo) & (hi % 2 == 0))
    code = np.where(pick_hi, hi, lo).astype(np.uint8)

    code = np.where(np.signbit(x), code | 0x80, code).astype(np.uint8)
    code = np.where(np.isnan(x), E4M3_NAN, code).astype(np.uint8)
    return int(code) if code.ndim == 0 else code


def eligible(in_dim: int, out_dim: int) -> bool:
    """Only layers with both dims divisible by 16 are quantized"""
    if in_dim < 1 or out_dim < 1:
        raise InputValidationError(f"dims must be >= 1, got ({in_dim}, {out_dim})")
    return in_dim % ELIGIBLE_MULTIPLE == 0 and out_dim % ELIGIBLE_MULTIPLE == 0


def tensor_scale(x: np.ndarray) -> float:
    amax = float(np.max(np.abs(x))) if x.size else 0.0
    return amax / E4M3_MAX if amax > 0 else 1.0


@dataclass(frozen=True, eq=False)
class QuantLinear:
    """y = x @ W with W (in_dim, out_dim) stored as E4M3 codes and one scale"""
    q_weights: np.ndarray
    scale: float
    in_dim: int
    out_dim: int

    def __post_init__(self):
        q = np.array(self.q_weights, dtype=np.uint8)
        if q.shape != (self.in_dim, self.out_dim):
            raise InputValidationError(f"weight codes shape {q.shape} != ({self.in_dim}, {self.out_dim})")
        if not self.scale > 0 or not np.isfinite(self.scale):
            raise InputValidationError(f"scale must be a positive finite value, got {self.scale}")
        q.setflags(write=False)
        object.__setattr__(self, "q_weights", q)

    def forward(self, x) -> np.ndarray:
        return quant_matmul(x, self)


@dataclass(frozen=True, eq=False)
class DenseLinear:
    """Unquantized path for layers that fail the eligibility rule"""
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise InputValidationError(f"weights must be 2-D, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def forward(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InputValidationError(f"input shape {x.shape} does not match in_dim {self.in_dim}")
        return x @ self.weights


def quantize_tensor(w) -> QuantLinear:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.size == 0:
        raise InputValidationError(f"weights must be a nonempty 2-D matrix, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InputValidationError("weights contain non-finite values")
    scale = tensor_scale(w)
    return QuantLinear(encode_e4m3(w / scale), scale, w.shape[0], w.shape[1])


def dequantize(layer: QuantLinear) -> np.ndarray:
    return decode_e4m3(layer.q_weights) * layer.scale


def quant_matmul(x, layer: QuantLinear) -> np.ndarray:
    """
    Dynamic per-tensor activation quantization, float64 accumulation,
    output rescaled by scale_w * scale_x.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise InputValidationError(f"input shape {x.shape} does not match in_dim {layer.in_dim}")
    x_scale = tensor_scale(x)
    qx = decode_e4m3(encode_e4m3(x / x_scale))
    # E4M3 products are exact in float64 and so are their sums at these sizes
    acc = qx @ decode_e4m3(layer.q_weights)
    return acc * (layer.scale * x_scale)


def make_linear(w) -> Union[QuantLinear, DenseLinear]:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 2 and eligible(w.shape[0], w.shape[1]):
        return quantize_tensor(w)
    logger.debug("Layer %s not divisible by %d, keeping full precision", w.shape, ELIGIBLE_MULTIPLE)
    return DenseLinear(w)


# Blob I/O
def to_blob(layer: QuantLinear) -> bytes:
    """Header (in_dim, out_dim as <u4, scale as <f8) then row-major weight bytes"""
    header = np.array([(layer.in_dim, layer.out_dim, layer.scale)], dtype=BLOB_HEADER)
    return header.tobytes() + np.ascontiguousarray(layer.q_weights).tobytes()


def from_blob(blob: bytes) -> QuantLinear:
    if len(blob) < BLOB_HEADER.itemsize:
        raise InputValidationError(f"blob too short for header: {len(blob)} bytes")
    header = np.frombuffer(blob[:BLOB_HEADER.itemsize], dtype=BLOB_HEADER)[0]
    in_dim, out_dim, scale = int(header["in_dim"]), int(header["out_dim"]), float(header["scale"])
    body = blob[BLOB_HEADER.itemsize:]
    if len(body) != in_dim * out_dim:
        raise InputValidationError(f"blob body has {len(body)} bytes, expected {in_dim * out_dim}")
    q = np.frombuffer(body, dtype=np.uint8).reshape(in_dim, out_dim)
    return QuantLinear(q, scale, in_dim, out_dim)
