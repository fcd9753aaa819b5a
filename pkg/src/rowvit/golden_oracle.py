"""Schedule-free reference numerics for every supported layer.

Everything here works on whole tensors with plain numpy reductions and never
looks at the PE-array geometry; the cycle simulator has to reproduce these
accumulators bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core_types import (
    INT32_MAX,
    INT32_MIN,
    INT8_MAX,
    AccumulatorOverflowError,
    QTensor,
    calibrate_scale,
    quantize,
    requantize,
)

LAYERNORM_EPS = 1e-5
# softmax probabilities live on a fixed int8 grid: 1.0 -> 127
PROB_SCALE = 1.0 / INT8_MAX


@dataclass(frozen=True, eq=False)
class OracleOutput:
    tensor: QTensor
    acc_tensor: np.ndarray


@dataclass(frozen=True, eq=False)
class AttentionOracleOutput:
    """Per-layer attention result; ``acc_tensor`` holds the A.V accumulators."""

    tensor: QTensor
    acc_tensor: np.ndarray
    score_acc: np.ndarray
    probs: QTensor


def _to_int32(acc: np.ndarray) -> np.ndarray:
    if acc.size and (acc.max() > INT32_MAX or acc.min() < INT32_MIN):
        raise AccumulatorOverflowError("accumulator exceeds 32-bit range")
    return acc.astype(np.int32)


def _wide(t: QTensor) -> np.ndarray:
    return t.data.astype(np.int64)


# --------------------------------------------------------------------------
# Elementwise / row functions used by the post-processing unit
# --------------------------------------------------------------------------


def gelu(x):
    """Exact erf form, ``x * Phi(x)``."""
    x = np.asarray(x, dtype=np.float64)
    erf = np.vectorize(math.erf, otypes=[np.float64])
    return 0.5 * x * (1.0 + erf(x / math.sqrt(2.0)))


def build_gelu_table(scale_in: float, scale_out: float) -> np.ndarray:
    """256-entry int8 table indexed by ``code + 128``."""
    if not (scale_in > 0 and scale_out > 0):
        raise ValueError("scales must be > 0")
    codes = np.arange(-128, 128, dtype=np.float64)
    return quantize(gelu(codes * scale_in), scale_out).data.copy()


def gelu_lut(x, table: np.ndarray) -> np.ndarray:
    codes = np.asarray(x, dtype=np.int16)
    return table[codes + 128]


def softmax_row(s) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    s = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("softmax input must be finite")
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def layernorm_real(x, gamma, beta, eps: float = LAYERNORM_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("layer norm needs rows of length >= 2")
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / np.sqrt(var + eps) * np.asarray(gamma) + np.asarray(beta)


def layernorm_row(
    x: QTensor,
    gamma: Optional[Sequence[float]] = None,
    beta: Optional[Sequence[float]] = None,
    out_scale: Optional[float] = None,
    eps: float = LAYERNORM_EPS,
) -> QTensor:
    """Layer norm over the last axis of an int8 tensor, requantized.

    ``out_scale`` defaults to 1/64, which covers roughly +-2 standard deviations.
    """
    n = x.dims[-1]
    if n < 2:
        raise ValueError("layer norm needs rows of length >= 2")
    gamma = np.ones(n) if gamma is None else np.asarray(gamma, dtype=np.float64)
    beta = np.zeros(n) if beta is None else np.asarray(beta, dtype=np.float64)
    y = layernorm_real(x.dequantize(), gamma, beta, eps)
    return quantize(y, out_scale or 1.0 / 64)


def residual_add(a: QTensor, b: QTensor, out_scale: Optional[float] = None) -> QTensor:
    if a.dims != b.dims:
        raise ValueError(f"residual operands differ in shape: {a.dims} vs {b.dims}")
    scale = out_scale if out_scale is not None else max(a.scale, b.scale)
    return quantize(a.dequantize() + b.dequantize(), scale)


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


def oracle_conv4x4(
    inp: QTensor, weights: QTensor, out_scale: Optional[float] = None
) -> OracleOutput:
    """4x4 stride-4 convolution. ``inp`` is [h, w, c], ``weights`` [c_out, 4, 4, c]."""
    if len(inp.dims) != 3 or len(weights.dims) != 4:
        raise ValueError("conv expects input [h, w, c] and weights [c_out, 4, 4, c]")
    h, w, c = inp.dims
    c_out, kh, kw, wc = weights.dims
    if (kh, kw) != (4, 4) or wc != c:
        raise ValueError(f"weight dims {weights.dims} do not match input channels {c}")
    if h % 4 or w % 4:
        raise ValueError("input height and width must be divisible by 4")
    patches = _wide(inp).reshape(h // 4, 4, w // 4, 4, c)
    acc = np.einsum("yaxbc,oabc->yxo", patches, _wide(weights))
    acc = _to_int32(acc)
    acc_scale = inp.scale * weights.scale
    scale = out_scale or calibrate_scale(acc * acc_scale)
    return OracleOutput(requantize(acc, acc_scale, scale), acc)


def oracle_fc(
    inp: QTensor,
    weights: QTensor,
    out_scale: Optional[float] = None,
    activation: str = "none",
    act_scale: Optional[float] = None,
) -> OracleOutput:
    """Integer matmul ``inp @ weights.T`` then requantize, optionally through GELU."""
    if len(inp.dims) != 2 or len(weights.dims) != 2:
        raise ValueError("fc expects input [tokens, c_in] and weights [c_out, c_in]")
    if inp.dims[1] != weights.dims[1]:
        raise ValueError(f"inner dims differ: {inp.dims[1]} vs {weights.dims[1]}")
    acc = _to_int32(_wide(inp) @ _wide(weights).T)
    acc_scale = inp.scale * weights.scale
    scale = out_scale or calibrate_scale(acc * acc_scale)
    out = requantize(acc, acc_scale, scale)
    if activation == "gelu":
        table = build_gelu_table(scale, act_scale or scale)
        out = QTensor(gelu_lut(out.data, table), act_scale or scale)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return OracleOutput(out, acc)


def attention_scores(q: QTensor, k: QTensor) -> np.ndarray:
    return _to_int32(_wide(q) @ _wide(k).T)


def attention_probs(score_acc: np.ndarray, q_scale: float, k_scale: float, d: int) -> QTensor:
    """Post-processing between the two attention matmuls: scale, softmax, int8."""
    if d <= 0:
        raise ValueError("head dimension must be positive")
    logits = score_acc.astype(np.float64) * (q_scale * k_scale / math.sqrt(d))
    return quantize(softmax_row(logits), PROB_SCALE)


def oracle_attention_window(
    q: QTensor, k: QTensor, v: QTensor, out_scale: Optional[float] = None
) -> AttentionOracleOutput:
    """One head of one window; q, k, v are [tokens, d]."""
    if not (q.dims == k.dims == v.dims) or len(q.dims) != 2:
        raise ValueError("q, k, v must share dims [tokens, d]")
    tokens, d = q.dims
    if d == 0:
        raise ValueError("head dimension must be positive")
    if tokens < 1:
        raise ValueError("attention needs at least one token")
    scores = attention_scores(q, k)
    probs = attention_probs(scores, q.scale, k.scale, d)
    acc = _to_int32(probs.data.astype(np.int64) @ _wide(v))
    acc_scale = PROB_SCALE * v.scale
    scale = out_scale or calibrate_scale(acc * acc_scale)
    return AttentionOracleOutput(requantize(acc, acc_scale, scale), acc, scores, probs)


def oracle_window_attention(
    q: QTensor, k: QTensor, v: QTensor, num_heads: int, out_scale: Optional[float] = None
) -> AttentionOracleOutput:
    """Whole layer: q, k, v are [windows, tokens, embed_dim]; heads split the last axis.

    Returns the output as [windows * tokens, embed_dim]; score and probability
    tensors are [windows, heads, tokens, tokens].
    """
    if not (q.dims == k.dims == v.dims) or len(q.dims) != 3:
        raise ValueError("q, k, v must share dims [windows, tokens, embed_dim]")
    windows, tokens, dim = q.dims
    if dim % num_heads:
        raise ValueError("embed_dim must be divisible by num_heads")
    d = dim // num_heads

    def heads(t):
        return _wide(t).reshape(windows, tokens, num_heads, d).transpose(0, 2, 1, 3)

    qh, kh, vh = heads(q), heads(k), heads(v)
    scores = _to_int32(qh @ kh.transpose(0, 1, 3, 2))
    probs = attention_probs(scores, q.scale, k.scale, d)
    acc = _to_int32(probs.data.astype(np.int64) @ vh)
    acc = acc.transpose(0, 2, 1, 3).reshape(windows * tokens, dim)
    acc_scale = PROB_SCALE * v.scale
    scale = out_scale or calibrate_scale(acc * acc_scale)
    return AttentionOracleOutput(requantize(acc, acc_scale, scale), acc, scores, probs)
