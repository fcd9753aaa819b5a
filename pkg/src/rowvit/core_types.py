"""Shared value types: hardware geometry, int8 tensors, layer descriptors, stats."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Union

import numpy as np

INT8_MIN = -128
INT8_MAX = 127
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


class UnsupportedMappingError(ValueError):
    """Layer shape cannot be lowered onto the PE array geometry."""


class SchedulingError(RuntimeError):
    """A schedule is malformed or references data that is not resident."""


class CapacityError(ValueError):
    """A tile does not fit in its on-chip buffer."""

    def __init__(self, buffer: str, need: int, have: int):
        super().__init__(f"{buffer} buffer too small: tile needs {need} bytes, buffer holds {have}")
        self.buffer = buffer
        self.need = need
        self.have = have


class AccumulatorOverflowError(ArithmeticError):
    pass


@dataclass(frozen=True)
class HwConfig:
    """PE-array geometry and on-chip budget.

    The defaults are the 12-block x 7-row x 4-MAC design point at 600 MHz
    with a 149 KB SRAM buffer.
    """

    num_blocks: int = 12
    rows_per_block: int = 7
    macs_per_row: int = 4
    clock_mhz: float = 600.0
    sram_budget_bytes: int = 149 * 1024
    accumulator_bits: int = 32

    def __post_init__(self):
        for name in ("num_blocks", "rows_per_block", "macs_per_row", "accumulator_bits"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.clock_mhz > 0:
            raise ValueError("clock_mhz must be > 0")
        if not self.sram_budget_bytes > 0:
            raise ValueError("sram_budget_bytes must be > 0")

    @property
    def total_macs(self) -> int:
        return self.num_blocks * self.rows_per_block * self.macs_per_row

    @property
    def clock_hz(self) -> float:
        return self.clock_mhz * 1e6

    @property
    def channels_per_cycle(self) -> int:
        """Reduction width covered by one row across all blocks."""
        return self.num_blocks * self.macs_per_row


def peak_gops(cfg: HwConfig) -> float:
    """Peak throughput with one MAC counted as two operations."""
    return cfg.total_macs * 2 * cfg.clock_mhz / 1000.0


# --------------------------------------------------------------------------
# Quantized tensors
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QTensor:
    """Symmetric per-tensor int8 tensor: ``value = data * scale``."""

    data: np.ndarray
    scale: float

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim < 1 or arr.ndim > 4:
            raise ValueError(f"QTensor needs 1-4 axes, got {arr.ndim}")
        if arr.dtype != np.int8:
            if not np.issubdtype(arr.dtype, np.integer):
                raise TypeError("QTensor data must be integer")
            if arr.size and (arr.min() < INT8_MIN or arr.max() > INT8_MAX):
                raise ValueError("QTensor data outside int8 range")
            arr = arr.astype(np.int8)
        else:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        scale = float(self.scale)
        if not (scale > 0 and math.isfinite(scale)):
            raise ValueError("QTensor scale must be positive and finite")
        object.__setattr__(self, "scale", scale)

    @property
    def dims(self) -> tuple:
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale

    def __eq__(self, other):
        if not isinstance(other, QTensor):
            return NotImplemented
        return (
            self.scale == other.scale
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )

    def __repr__(self):
        return f"QTensor(dims={self.dims}, scale={self.scale!r})"


def _round_saturate(scaled: np.ndarray) -> np.ndarray:
    # np.rint rounds half to even
    return np.clip(np.rint(scaled), INT8_MIN, INT8_MAX).astype(np.int8)


def quantize(values, scale: float) -> QTensor:
    """Round-half-to-even with saturation to [-128, 127]."""
    if not scale > 0:
        raise ValueError("scale must be > 0")
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if not np.all(np.isfinite(arr)):
        raise ValueError("cannot quantize non-finite values")
    return QTensor(_round_saturate(arr / scale), scale)


def dequantize(t: QTensor) -> np.ndarray:
    return t.dequantize()


def requantize(acc: np.ndarray, acc_scale: float, out_scale: float) -> QTensor:
    """Map integer accumulators carrying ``acc_scale`` onto an int8 grid."""
    acc = np.asarray(acc)
    return QTensor(_round_saturate(acc.astype(np.float64) * (acc_scale / out_scale)), out_scale)


def calibrate_scale(values: np.ndarray) -> float:
    """Max-abs calibration; all-zero tensors get scale 1."""
    values = np.asarray(values, dtype=np.float64)
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    return peak / INT8_MAX if peak > 0 else 1.0


# --------------------------------------------------------------------------
# Layer descriptors
# --------------------------------------------------------------------------


def _check_extents(obj, names):
    for name in names:
        value = getattr(obj, name)
        if int(value) != value or value < 0:
            raise ValueError(f"{type(obj).__name__}.{name} must be a non-negative integer")


@dataclass(frozen=True)
class Conv4x4:
    """Patch-embedding convolution, 4x4 kernel, stride 4, HWC input."""

    h_in: int
    w_in: int
    c_in: int
    c_out: int
    post_norm: bool = False
    residual: bool = False

    kind = "conv4x4"
    kernel = 4
    stride = 4

    def __post_init__(self):
        _check_extents(self, ("h_in", "w_in", "c_in", "c_out"))
        if self.h_in % 4 or self.w_in % 4:
            raise ValueError("Conv4x4 input height and width must be divisible by 4")

    @property
    def h_out(self) -> int:
        return self.h_in // 4

    @property
    def w_out(self) -> int:
        return self.w_in // 4

    @property
    def input_shape(self) -> tuple:
        return (self.h_in * self.w_in // 16, self.c_in * 16)

    @property
    def output_shape(self) -> tuple:
        return (self.h_out * self.w_out, self.c_out)

    def macs(self) -> int:
        return self.h_out * self.w_out * self.c_out * self.c_in * 16

    def params(self) -> int:
        return self.c_out * self.c_in * 16


@dataclass(frozen=True)
class FullyConnected:
    """Token-wise linear layer (a 1x1 convolution over the feature map)."""

    tokens: int
    c_in: int
    c_out: int
    activation: str = "none"
    post_norm: bool = False
    residual: bool = False

    kind = "fc"

    def __post_init__(self):
        _check_extents(self, ("tokens", "c_in", "c_out"))
        if self.activation not in ("none", "gelu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_shape(self) -> tuple:
        return (self.tokens, self.c_in)

    @property
    def output_shape(self) -> tuple:
        return (self.tokens, self.c_out)

    def macs(self) -> int:
        return self.tokens * self.c_in * self.c_out

    def params(self) -> int:
        return self.c_in * self.c_out


@dataclass(frozen=True)
class WindowAttention:
    """Window multi-head self-attention core: softmax(QK^T / sqrt(d)) V per head.

    The Q/K/V and output projections are separate :class:`FullyConnected` layers.
    The input is the packed ``[tokens, 3 * embed_dim]`` projection output.
    """

    num_windows: int
    tokens_per_window: int
    embed_dim: int
    num_heads: int
    post_norm: bool = False
    residual: bool = False

    kind = "wmsa"

    def __post_init__(self):
        _check_extents(self, ("num_windows", "tokens_per_window", "embed_dim", "num_heads"))
        if self.num_heads < 1:
            raise ValueError("num_heads must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ValueError("embed_dim must be divisible by num_heads")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def tokens(self) -> int:
        return self.num_windows * self.tokens_per_window

    @property
    def input_shape(self) -> tuple:
        return (self.tokens, 3 * self.embed_dim)

    @property
    def output_shape(self) -> tuple:
        return (self.tokens, self.embed_dim)

    def macs(self) -> int:
        # QK^T and A.V each cost T*T*d per head per window
        t = self.tokens_per_window
        return 2 * self.num_windows * self.num_heads * t * t * self.head_dim

    def params(self) -> int:
        return 0


LayerDescriptor = Union[Conv4x4, FullyConnected, WindowAttention]


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimStats:
    """Counters for one simulated run; rates are derived from them."""

    cycles: int = 0
    mac_ops: int = 0
    useful_mac_ops: int = 0
    sram_weight_reads: int = 0
    sram_input_reads: int = 0
    sram_output_writes: int = 0
    dram_bytes: int = 0
    stall_cycles: int = 0
    total_macs: int = 336
    clock_mhz: float = 600.0

    @classmethod
    def empty(cls, cfg: Optional[HwConfig] = None) -> "SimStats":
        cfg = cfg or HwConfig()
        return cls(total_macs=cfg.total_macs, clock_mhz=cfg.clock_mhz)

    @property
    def utilization(self) -> float:
        if self.cycles == 0:
            return 0.0
        return self.mac_ops / (self.total_macs * self.cycles)

    @property
    def sram_reads(self) -> int:
        return self.sram_weight_reads + self.sram_input_reads

    @property
    def seconds(self) -> float:
        return self.cycles / (self.clock_mhz * 1e6)

    @property
    def gops(self) -> float:
        if self.cycles == 0:
            return 0.0
        return self.mac_ops * 2 / self.seconds / 1e9

    @property
    def images_per_s(self) -> float:
        if self.cycles == 0:
            return 0.0
        return 1.0 / self.seconds

    def __add__(self, other: "SimStats") -> "SimStats":
        if not isinstance(other, SimStats):
            return NotImplemented
        if (self.total_macs, self.clock_mhz) != (other.total_macs, other.clock_mhz):
            raise ValueError("cannot add stats from different hardware configs")
        counters = {
            f.name: getattr(self, f.name) + getattr(other, f.name)
            for f in fields(self)
            if f.name not in ("total_macs", "clock_mhz")
        }
        return replace(self, **counters)


def counter_fields() -> list:
    return [f.name for f in fields(SimStats)]
