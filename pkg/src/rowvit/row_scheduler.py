"""Row-wise scheduling: lowers layers to per-cycle control for the PE array.

* Conv (patch embedding): one kernel row of one input channel per block, so
  RGB fills all 12 blocks; 7 output positions per cycle, one output channel
  after another.
* FC: input channels tiled by 48 (12 blocks x 4 MACs), tokens by 7; the
  partials of all channel tiles stay in the row accumulators and are flushed
  once per output.
* Window attention: QK^T broadcasts one Q row across ``head_dim/4`` blocks and
  streams K rows 7 at a time; A.V runs like an FC layer with the int8 softmax
  output as input activations and V^T rows as broadcast weights.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core_types import (
    Conv4x4,
    FullyConnected,
    HwConfig,
    LayerDescriptor,
    UnsupportedMappingError,
    WindowAttention,
)
from .lowering import GemmPhase, ceil_div, phases_for
from .memsys import DEFAULT_PARTITION, BufferPartition, ResidencyPlan, phase_residency
from .pe_array_sim import TileSchedule


@dataclass(frozen=True)
class MappingPlan:
    layer_id: str
    kind: str
    tiles: tuple
    blocks_used: int
    analytic_cycles: int
    analytic_utilization: float
    phase_cycles: tuple = ()
    phase_blocks: tuple = ()

    def to_dict(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "kind": self.kind,
            "tiles": [dict(t) for t in self.tiles],
            "blocks_used": self.blocks_used,
            "analytic_cycles": self.analytic_cycles,
            "analytic_utilization": self.analytic_utilization,
            "phase_cycles": list(self.phase_cycles),
            "phase_blocks": list(self.phase_blocks),
        }


@dataclass(frozen=True, eq=False)
class LayerSchedule:
    plan: MappingPlan
    phases: tuple
    schedules: tuple
    residency: ResidencyPlan

    @property
    def cycles(self) -> int:
        return sum(len(s) for s in self.schedules)


def _loop_extents(phase: GemmPhase, cfg: HwConfig) -> tuple:
    return (
        ("phase", phase.name),
        ("batches", phase.batches),
        ("spatial_groups", phase.groups(cfg)),
        ("channel_tiles", phase.k_tiles(cfg)),
        ("output_channels", phase.n),
        ("order", phase.order),
    )


def plan_for(desc: LayerDescriptor, cfg: Optional[HwConfig] = None, layer_id: str = "") -> MappingPlan:
    cfg = cfg or HwConfig()
    phases = phases_for(desc, cfg)
    cycles = sum(p.cycles(cfg) for p in phases)
    issued = sum(p.issued_macs(cfg) for p in phases)
    util = issued / (cfg.total_macs * cycles) if cycles else 0.0
    return MappingPlan(
        layer_id=layer_id,
        kind=desc.kind,
        tiles=tuple(_loop_extents(p, cfg) for p in phases),
        blocks_used=max(p.blocks_used(cfg) for p in phases),
        analytic_cycles=cycles,
        analytic_utilization=util,
        phase_cycles=tuple(p.cycles(cfg) for p in phases),
        phase_blocks=tuple(p.blocks_used(cfg) for p in phases),
    )


def analytic_cycles(desc: LayerDescriptor, cfg: Optional[HwConfig] = None) -> int:
    cfg = cfg or HwConfig()
    return sum(p.cycles(cfg) for p in phases_for(desc, cfg))


def phase_schedule(
    phase: GemmPhase, cfg: HwConfig, rows_per_pass: Optional[int] = None, layer_id: str = ""
) -> TileSchedule:
    """Per-cycle control for one lowered phase, following the residency loop nest."""
    if phase.cycles(cfg) == 0:
        return TileSchedule.empty(cfg, phase.out_shape, layer_id)
    B, R = cfg.num_blocks, cfg.rows_per_block
    G, T, K4 = phase.groups(cfg), phase.k_tiles(cfg), phase.k_vectors(cfg)
    M, N = phase.m, phase.n
    per_pass = rows_per_pass or N

    n_parts, g_parts, t_parts = [], [], []
    for n0 in range(0, N, per_pass):
        ns = np.arange(n0, min(N, n0 + per_pass))
        if phase.order == "groups_outer":
            g, n, t = np.meshgrid(np.arange(G), ns, np.arange(T), indexing="ij")
        else:
            n, g, t = np.meshgrid(ns, np.arange(G), np.arange(T), indexing="ij")
        n_parts.append(n.ravel())
        g_parts.append(g.ravel())
        t_parts.append(t.ravel())
    n1 = np.concatenate(n_parts)
    g1 = np.concatenate(g_parts)
    t1 = np.concatenate(t_parts)
    per_batch = len(n1)
    b = np.repeat(np.arange(phase.batches), per_batch)
    n = np.tile(n1, phase.batches)
    g = np.tile(g1, phase.batches)
    t = np.tile(t1, phase.batches)

    kv = t[:, None] * B + np.arange(B)[None, :]
    kvec = np.where(kv < K4, kv, -1).astype(np.int32)
    m = g[:, None] * R + np.arange(R)[None, :]
    live = m < M
    input_row = np.where(live, b[:, None] * M + m, -1).astype(np.int32)
    if phase.out_layout == "mn":
        entry = b[:, None] * (M * N) + m * N + n[:, None]
    else:
        entry = b[:, None] * (M * N) + n[:, None] * M + m
    target = np.where(live, entry, -1).astype(np.int64)
    return TileSchedule(
        weight_row=(b * N + n).astype(np.int32),
        kvec=kvec,
        input_row=input_row,
        target=target,
        flush=(t == T - 1),
        out_shape=phase.out_shape,
        layer_id=layer_id,
        expected_cycles=phase.cycles(cfg),
    )


def schedule_layer(
    desc: LayerDescriptor,
    cfg: Optional[HwConfig] = None,
    partition: BufferPartition = DEFAULT_PARTITION,
    layer_id: str = "",
) -> LayerSchedule:
    cfg = cfg or HwConfig()
    phases = phases_for(desc, cfg)
    residencies = [phase_residency(p, partition, cfg) for p in phases]
    schedules = tuple(
        phase_schedule(p, cfg, r.rows_per_pass, f"{layer_id}:{p.name}" if layer_id else p.name)
        for p, r in zip(phases, residencies)
    )
    return LayerSchedule(plan_for(desc, cfg, layer_id), tuple(phases), schedules,
                         ResidencyPlan(residencies))


def schedule_conv(desc: Conv4x4, cfg: Optional[HwConfig] = None,
                  partition: BufferPartition = DEFAULT_PARTITION) -> LayerSchedule:
    if not isinstance(desc, Conv4x4):
        raise TypeError("schedule_conv expects a Conv4x4 descriptor")
    return schedule_layer(desc, cfg, partition)


def schedule_fc(desc: FullyConnected, cfg: Optional[HwConfig] = None,
                partition: BufferPartition = DEFAULT_PARTITION) -> LayerSchedule:
    if not isinstance(desc, FullyConnected):
        raise TypeError("schedule_fc expects a FullyConnected descriptor")
    return schedule_layer(desc, cfg, partition)


def schedule_attention(desc: WindowAttention, cfg: Optional[HwConfig] = None,
                       partition: BufferPartition = DEFAULT_PARTITION) -> LayerSchedule:
    if not isinstance(desc, WindowAttention):
        raise TypeError("schedule_attention expects a WindowAttention descriptor")
    return schedule_layer(desc, cfg, partition)


# --------------------------------------------------------------------------
# Closed forms quoted by the mapping description
# --------------------------------------------------------------------------


def conv_cycles_per_channel(desc: Conv4x4, cfg: Optional[HwConfig] = None) -> int:
    cfg = cfg or HwConfig()
    return ceil_div(desc.h_out * desc.w_out, cfg.rows_per_block)


def fc_cycles(tokens: int, c_in: int, c_out: int, cfg: Optional[HwConfig] = None) -> int:
    cfg = cfg or HwConfig()
    return ceil_div(tokens, cfg.rows_per_block) * ceil_div(c_in, cfg.channels_per_cycle) * c_out


def qk_cycles_per_head(tokens: int, cfg: Optional[HwConfig] = None) -> int:
    cfg = cfg or HwConfig()
    return tokens * ceil_div(tokens, cfg.rows_per_block)


def av_cycles_per_head(tokens: int, head_dim: int, cfg: Optional[HwConfig] = None) -> int:
    cfg = cfg or HwConfig()
    return fc_cycles(tokens, tokens, head_dim, cfg)


# --------------------------------------------------------------------------
# Workload analytics
# --------------------------------------------------------------------------

LAYER_TYPES = ("conv", "fc", "attention")
_TYPE_OF = {"conv4x4": "conv", "fc": "fc", "wmsa": "attention"}


@dataclass(frozen=True)
class FlopsReport:
    """FLOPs (2 per MAC) and weight parameters grouped by layer type."""

    flops: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    @property
    def total_flops(self) -> int:
        return sum(self.flops.values())

    @property
    def total_params(self) -> int:
        return sum(self.params.values())

    def flops_share(self, kind: str) -> float:
        total = self.total_flops
        return self.flops.get(kind, 0) / total if total else 0.0

    def params_share(self, kind: str) -> float:
        total = self.total_params
        return self.params.get(kind, 0) / total if total else 0.0

    def to_dict(self) -> dict:
        return {"flops": dict(self.flops), "params": dict(self.params)}


def flops_report(model: Iterable[LayerDescriptor]) -> FlopsReport:
    """Per-type FLOPs and parameter counts for a layer list.

    Attention FLOPs count both QK^T and A.V; the Q/K/V and output projections
    are fully connected layers of their own.
    """
    layers = list(model)
    if not layers:
        raise ValueError("flops_report needs at least one layer")
    flops, params = Counter(), Counter()
    for desc in layers:
        kind = _TYPE_OF[desc.kind]
        flops[kind] += 2 * desc.macs()
        params[kind] += desc.params()
    return FlopsReport(
        {k: int(flops[k]) for k in LAYER_TYPES}, {k: int(params[k]) for k in LAYER_TYPES}
    )


def check_supported(desc: LayerDescriptor, cfg: Optional[HwConfig] = None):
    """Raise :class:`UnsupportedMappingError` if ``desc`` cannot be mapped."""
    phases_for(desc, cfg or HwConfig())
