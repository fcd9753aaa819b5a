"""On-chip buffer partition, tile residency and traffic accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core_types import CapacityError, HwConfig, LayerDescriptor, SchedulingError
from .lowering import GemmPhase, ceil_div, phases_for

KB = 1024
BUFFERS = ("input", "weight", "output")


@dataclass(frozen=True)
class BufferPartition:
    input_bytes: int = 56 * KB
    weight_bytes: int = 72 * KB
    output_bytes: int = 21 * KB

    def __post_init__(self):
        for name in ("input_bytes", "weight_bytes", "output_bytes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self) -> int:
        return self.input_bytes + self.weight_bytes + self.output_bytes

    @classmethod
    def parse(cls, text: str) -> "BufferPartition":
        """``"in,weight,out"`` in bytes."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 3:
            raise ValueError("partition must be 'input,weight,output' bytes")
        return cls(*(int(p) for p in parts))

    def __str__(self):
        return f"{self.input_bytes},{self.weight_bytes},{self.output_bytes}"


DEFAULT_PARTITION = BufferPartition()


@dataclass(frozen=True)
class PartitionCheck:
    ok: bool
    total_bytes: int
    budget_bytes: int

    @property
    def message(self) -> str:
        if self.ok:
            return f"partition fits: {self.total_bytes} <= {self.budget_bytes} bytes"
        return f"partition exceeds SRAM budget: {self.total_bytes} > {self.budget_bytes} bytes"

    def __bool__(self):
        return self.ok


def check_partition(p: BufferPartition, cfg: Optional[HwConfig] = None) -> PartitionCheck:
    cfg = cfg or HwConfig()
    return PartitionCheck(p.total <= cfg.sram_budget_bytes, p.total, cfg.sram_budget_bytes)


class TrafficLedger:
    """Monotone access counters owned by a single simulation."""

    def __init__(self):
        self.sram_reads = {b: 0 for b in BUFFERS}
        self.sram_writes = {b: 0 for b in BUFFERS}
        self.dram_bytes_in = 0
        self.dram_bytes_out = 0

    @staticmethod
    def _amount(n) -> int:
        n = int(n)
        if n < 0:
            raise ValueError("ledger counts only grow")
        return n

    def read(self, buffer: str, n):
        self.sram_reads[buffer] += self._amount(n)

    def write(self, buffer: str, n):
        self.sram_writes[buffer] += self._amount(n)

    def dram_in(self, n):
        self.dram_bytes_in += self._amount(n)

    def dram_out(self, n):
        self.dram_bytes_out += self._amount(n)

    @property
    def dram_bytes(self) -> int:
        return self.dram_bytes_in + self.dram_bytes_out

    def snapshot(self) -> dict:
        return {
            "sram_reads": dict(self.sram_reads),
            "sram_writes": dict(self.sram_writes),
            "dram_bytes_in": self.dram_bytes_in,
            "dram_bytes_out": self.dram_bytes_out,
        }


# --------------------------------------------------------------------------
# Residency
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseResidency:
    """Epochs of resident weight/input rows for one phase schedule.

    Epoch ``e`` covers cycles ``[start[e], start[e+1])``; during it weight
    rows ``[weight_lo, weight_hi)`` and input rows ``[input_lo, input_hi)``
    are on chip.  Row numbers are global across batches.
    """

    phase: GemmPhase
    rows_per_pass: int
    passes: int
    inputs_resident: bool
    start: np.ndarray
    weight_lo: np.ndarray
    weight_hi: np.ndarray
    input_lo: np.ndarray
    input_hi: np.ndarray
    dram_weight_bytes: int
    dram_input_bytes: int
    dram_output_bytes: int

    @property
    def weight_loads(self) -> int:
        return self.phase.batches * self.passes if self.phase.entries else 0

    @property
    def dram_bytes(self) -> int:
        return self.dram_weight_bytes + self.dram_input_bytes + self.dram_output_bytes

    def check(self, cycles: np.ndarray, weight_row: np.ndarray, input_row: np.ndarray):
        """Raise :class:`SchedulingError` if any operand reference is not resident.

        ``input_row`` is [cycles, rows] with -1 marking idle rows.
        """
        if len(cycles) == 0:
            return
        if len(self.start) == 0:
            raise SchedulingError("schedule references data but the residency plan is empty")
        e = np.searchsorted(self.start, cycles, side="right") - 1
        if np.any(e < 0):
            raise SchedulingError("cycle precedes the first residency epoch")
        active = weight_row >= 0
        bad_w = active & ((weight_row < self.weight_lo[e]) | (weight_row >= self.weight_hi[e]))
        if np.any(bad_w):
            c = int(cycles[np.argmax(bad_w)])
            raise SchedulingError(f"cycle {c}: weight row not resident in weight buffer")
        rows_on = input_row >= 0
        lo = self.input_lo[e][:, None]
        hi = self.input_hi[e][:, None]
        bad_x = rows_on & ((input_row < lo) | (input_row >= hi))
        if np.any(bad_x):
            c = int(cycles[np.argmax(bad_x.any(axis=1))])
            raise SchedulingError(f"cycle {c}: input row not resident in input buffer")


@dataclass(frozen=True)
class ResidencyPlan:
    phases: list = field(default_factory=list)

    @property
    def dram_weight_bytes(self) -> int:
        return sum(p.dram_weight_bytes for p in self.phases)

    @property
    def dram_input_bytes(self) -> int:
        return sum(p.dram_input_bytes for p in self.phases)

    @property
    def dram_output_bytes(self) -> int:
        return sum(p.dram_output_bytes for p in self.phases)

    @property
    def dram_bytes(self) -> int:
        return sum(p.dram_bytes for p in self.phases)

    @property
    def weight_loads(self) -> int:
        return sum(p.weight_loads for p in self.phases)


def weight_rows_per_pass(phase: GemmPhase, p: BufferPartition) -> int:
    """How many full weight rows the weight buffer holds at once."""
    if phase.k == 0 or phase.n == 0:
        return max(phase.n, 1)
    if phase.k > p.weight_bytes:
        raise CapacityError("weight", phase.k, p.weight_bytes)
    return min(phase.n, p.weight_bytes // phase.k)


def _check_tiles(phase: GemmPhase, p: BufferPartition, cfg: HwConfig):
    rows = min(phase.m, cfg.rows_per_block)
    if phase.k > p.weight_bytes:
        raise CapacityError("weight", phase.k, p.weight_bytes)
    if rows * phase.k > p.input_bytes:
        raise CapacityError("input", rows * phase.k, p.input_bytes)
    acc_bytes = rows * cfg.accumulator_bits // 8
    if acc_bytes > p.output_bytes:
        raise CapacityError("output", acc_bytes, p.output_bytes)


def phase_residency(phase: GemmPhase, p: BufferPartition, cfg: HwConfig) -> PhaseResidency:
    """Epoch structure that follows the scheduler's loop nest for ``phase``.

    The loop nest is: batch, weight pass, then either (weight row, input group)
    or (input group, weight row), then channel tile.  Inputs that fit the input
    buffer whole are loaded once per batch; otherwise they stream by group.
    """
    empty = np.zeros(0, dtype=np.int64)
    if phase.cycles(cfg) == 0:
        return PhaseResidency(phase, max(phase.n, 1), 0, True, empty, empty, empty, empty,
                              empty, 0, 0, 0)
    _check_tiles(phase, p, cfg)
    R = cfg.rows_per_block
    tiles = phase.k_tiles(cfg)
    groups = phase.groups(cfg)
    per_pass = weight_rows_per_pass(phase, p)
    passes = ceil_div(phase.n, per_pass)
    inputs_resident = phase.m * phase.k <= p.input_bytes

    starts, wlo, whi, xlo, xhi = [], [], [], [], []
    cycle = 0
    input_streams = 0
    for b in range(phase.batches):
        wbase, xbase = b * phase.n, b * phase.m
        for ps in range(passes):
            n0 = ps * per_pass
            n1 = min(phase.n, n0 + per_pass)
            span = n1 - n0
            if inputs_resident:
                starts.append(cycle)
                wlo.append(wbase + n0)
                whi.append(wbase + n1)
                xlo.append(xbase)
                xhi.append(xbase + phase.m)
                cycle += span * groups * tiles
                continue
            if phase.order == "groups_outer":
                for g in range(groups):
                    starts.append(cycle)
                    wlo.append(wbase + n0)
                    whi.append(wbase + n1)
                    xlo.append(xbase + g * R)
                    xhi.append(xbase + min(phase.m, (g + 1) * R))
                    cycle += span * tiles
                input_streams += 1
            else:
                for _ in range(span):
                    for g in range(groups):
                        starts.append(cycle)
                        wlo.append(wbase + n0)
                        whi.append(wbase + n1)
                        xlo.append(xbase + g * R)
                        xhi.append(xbase + min(phase.m, (g + 1) * R))
                        cycle += tiles
                input_streams += span
    if cycle != phase.cycles(cfg):
        raise AssertionError("residency epochs disagree with the phase cycle count")

    batch_inputs = phase.m * phase.k
    if not phase.input_from_dram:
        dram_in = 0
    elif inputs_resident:
        dram_in = phase.batches * batch_inputs
    else:
        dram_in = input_streams * batch_inputs
    arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    return PhaseResidency(
        phase=phase,
        rows_per_pass=per_pass,
        passes=passes,
        inputs_resident=inputs_resident,
        start=arr(starts),
        weight_lo=arr(wlo),
        weight_hi=arr(whi),
        input_lo=arr(xlo),
        input_hi=arr(xhi),
        dram_weight_bytes=phase.batches * phase.n * phase.k,
        dram_input_bytes=dram_in,
        dram_output_bytes=phase.batches * phase.m * phase.n if phase.output_to_dram else 0,
    )


def residency_plan(
    layer: LayerDescriptor,
    p: BufferPartition = DEFAULT_PARTITION,
    cfg: Optional[HwConfig] = None,
) -> ResidencyPlan:
    """Residency epochs and off-chip traffic for every phase of ``layer``.

    Raises :class:`CapacityError` naming the buffer when a single weight row,
    a 7-token input group or one group of accumulators does not fit.
    """
    cfg = cfg or HwConfig()
    return ResidencyPlan([phase_residency(ph, p, cfg) for ph in phases_for(layer, cfg)])
