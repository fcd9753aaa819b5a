"""Lowering of layers onto the row-wise dot-product primitive.

Every supported layer reduces to one or more GEMM phases of the form
``out[m, n] = sum_k X[m, k] * W[n, k]`` where ``W`` rows are broadcast as
weights (one 4-wide slice per PE block) and ``X`` rows stream through the
PE rows.  A phase may be batched (one independent GEMM per window and head).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import (
    Conv4x4,
    FullyConnected,
    HwConfig,
    LayerDescriptor,
    UnsupportedMappingError,
    WindowAttention,
)


# QK^T keeps a Q row on at most this many blocks
QK_MAX_BLOCKS = 8


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class GemmPhase:
    """Shape and loop policy of one lowered matrix product.

    ``order`` is ``"outputs_outer"`` when a weight row stays latched while the
    input groups stream past it (conv channels, Q rows) and ``"groups_outer"``
    when a 7-row input group stays put while weight rows cycle (FC, A.V).
    ``out_layout`` says how the accumulator of ``(m, n)`` is addressed.
    """

    name: str
    batches: int
    m: int
    n: int
    k: int
    order: str
    out_layout: str = "mn"
    input_from_dram: bool = True
    output_to_dram: bool = True

    def k_vectors(self, cfg: HwConfig) -> int:
        return ceil_div(self.k, cfg.macs_per_row)

    def k_tiles(self, cfg: HwConfig) -> int:
        return ceil_div(self.k_vectors(cfg), cfg.num_blocks)

    def groups(self, cfg: HwConfig) -> int:
        return ceil_div(self.m, cfg.rows_per_block)

    def blocks_used(self, cfg: HwConfig) -> int:
        return min(self.k_vectors(cfg), cfg.num_blocks)

    def cycles(self, cfg: HwConfig) -> int:
        if min(self.batches, self.m, self.n, self.k) == 0:
            return 0
        return self.batches * self.groups(cfg) * self.n * self.k_tiles(cfg)

    def issued_macs(self, cfg: HwConfig) -> int:
        # every partially padded 4-vector still occupies its MACs
        if min(self.batches, self.m, self.n, self.k) == 0:
            return 0
        return self.batches * self.m * self.n * self.k_vectors(cfg) * cfg.macs_per_row

    def useful_macs(self) -> int:
        return self.batches * self.m * self.n * self.k

    @property
    def entries(self) -> int:
        return self.batches * self.m * self.n

    @property
    def out_shape(self) -> tuple:
        if self.out_layout == "mn":
            return (self.batches, self.m, self.n)
        return (self.batches, self.n, self.m)


def phases_for(desc: LayerDescriptor, cfg: HwConfig) -> list:
    """GEMM phases for a layer, rejecting shapes the array cannot host."""
    if isinstance(desc, Conv4x4):
        if cfg.macs_per_row != 4 or desc.c_in * 4 != cfg.num_blocks:
            raise UnsupportedMappingError(
                f"conv mapping places one kernel row per block and needs "
                f"c_in*4 == num_blocks with 4 MACs per row; got c_in={desc.c_in}, "
                f"{cfg.num_blocks} blocks x {cfg.macs_per_row} MACs"
            )
        return [
            GemmPhase(
                "conv",
                1,
                desc.h_out * desc.w_out,
                desc.c_out,
                desc.c_in * 16,
                "outputs_outer",
            )
        ]
    if isinstance(desc, FullyConnected):
        return [GemmPhase("fc", 1, desc.tokens, desc.c_out, desc.c_in, "groups_outer")]
    if isinstance(desc, WindowAttention):
        d = desc.head_dim
        qk_blocks = min(QK_MAX_BLOCKS, cfg.num_blocks)
        if ceil_div(d, cfg.macs_per_row) > qk_blocks:
            raise UnsupportedMappingError(
                f"head_dim {d} exceeds one Q row on {qk_blocks} blocks "
                f"of {cfg.macs_per_row} MACs"
            )
        batches = desc.num_windows * desc.num_heads
        t = desc.tokens_per_window
        return [
            GemmPhase("qk", batches, t, t, d, "outputs_outer", "nm", output_to_dram=False),
            GemmPhase("av", batches, t, d, t, "groups_outer", "mn", input_from_dram=False),
        ]
    raise TypeError(f"unsupported layer descriptor {type(desc).__name__}")


# --------------------------------------------------------------------------
# Operand lowering
# --------------------------------------------------------------------------


def pack_vectors(mat: np.ndarray, cfg: HwConfig) -> np.ndarray:
    """[rows, k] int8 -> [rows, ceil(k/macs), macs], zero padded."""
    mat = np.asarray(mat)
    rows, k = mat.shape
    kv = ceil_div(k, cfg.macs_per_row)
    out = np.zeros((rows, kv * cfg.macs_per_row), dtype=np.int8)
    out[:, :k] = mat
    return out.reshape(rows, kv, cfg.macs_per_row)


def conv_input_matrix(image: np.ndarray) -> np.ndarray:
    """[h, w, c] -> [patches, c*16]; column ``c*16 + kr*4 + kc``."""
    h, w, c = image.shape
    x = image.reshape(h // 4, 4, w // 4, 4, c).transpose(0, 2, 4, 1, 3)
    return x.reshape((h // 4) * (w // 4), c * 16)


def conv_weight_matrix(weights: np.ndarray) -> np.ndarray:
    """[c_out, 4, 4, c] -> [c_out, c*16] in the same column order as the input."""
    c_out, _, _, c = weights.shape
    return weights.transpose(0, 3, 1, 2).reshape(c_out, c * 16)


def split_heads(t: np.ndarray, num_heads: int) -> np.ndarray:
    """[windows, tokens, dim] -> [windows * heads, tokens, head_dim]."""
    w, tok, dim = t.shape
    d = dim // num_heads
    return t.reshape(w, tok, num_heads, d).transpose(0, 2, 1, 3).reshape(w * num_heads, tok, d)


def merge_heads(t: np.ndarray, num_windows: int, num_heads: int) -> np.ndarray:
    """[windows * heads, tokens, head_dim] -> [windows * tokens, dim]."""
    _, tok, d = t.shape
    return (
        t.reshape(num_windows, num_heads, tok, d)
        .transpose(0, 2, 1, 3)
        .reshape(num_windows * tok, num_heads * d)
    )
