"""Cycle-level simulator and int8 reference oracle for a row-wise ViT accelerator."""

from .core_types import (
    Conv4x4,
    FullyConnected,
    HwConfig,
    QTensor,
    SimStats,
    WindowAttention,
    peak_gops,
)
from .layer_exec import simulate_layer
from .memsys import BufferPartition, TrafficLedger
from .report import Report, emit_report, parse_report
from .row_scheduler import flops_report, plan_for, schedule_layer
from .simcli import run
from .workload import Workload, build_swin_t

__all__ = [
    "BufferPartition",
    "Conv4x4",
    "FullyConnected",
    "HwConfig",
    "QTensor",
    "Report",
    "SimStats",
    "TrafficLedger",
    "WindowAttention",
    "Workload",
    "build_swin_t",
    "emit_report",
    "flops_report",
    "parse_report",
    "peak_gops",
    "plan_for",
    "run",
    "schedule_layer",
    "simulate_layer",
]
