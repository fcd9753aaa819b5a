"""Cycle-level execution engine for the PE array, adder tree and accumulator block.

Each cycle every active block latches one 4-wide weight vector and broadcasts
it down its rows; every active row multiplies it with its own 4-wide input
vector and adds the horizontal sum to the row's local accumulator.  On a
flush cycle the adder tree sums the same row index across all blocks and the
result lands in the accumulator-block entry named by that row's target.

:meth:`PeArray.step` advances exactly one cycle.  :meth:`PeArray.run` executes
a whole :class:`TileSchedule` with the same semantics, vectorized over chunks
of cycles; both paths share the same counters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterator, Optional

import numpy as np

from .core_types import (
    INT32_MAX,
    INT32_MIN,
    AccumulatorOverflowError,
    HwConfig,
    SchedulingError,
    SimStats,
)
from .memsys import PhaseResidency, TrafficLedger

CHUNK_CYCLES = 8192


@dataclass(frozen=True)
class CycleOp:
    """One cycle of array control.

    ``kvec[b]`` selects the 4-wide slice that block ``b`` works on (-1 idle);
    block ``b`` broadcasts ``weights[weight_row, kvec[b]]`` and row ``r`` of it
    reads ``inputs[input_rows[r], kvec[b]]``.
    """

    weight_row: int
    kvec: tuple
    input_rows: tuple
    targets: tuple
    flush: bool


@dataclass(frozen=True, eq=False)
class TileSchedule:
    """Ordered per-cycle control, stored column-wise for speed.

    Accumulator entries are flat indices into ``out_shape``.
    """

    weight_row: np.ndarray
    kvec: np.ndarray
    input_row: np.ndarray
    target: np.ndarray
    flush: np.ndarray
    out_shape: tuple
    layer_id: str = ""
    expected_cycles: int = 0

    def __post_init__(self):
        c = len(self.weight_row)
        if self.kvec.shape[0] != c or self.input_row.shape[0] != c:
            raise SchedulingError("schedule columns disagree on the cycle count")
        if self.target.shape != self.input_row.shape or self.flush.shape != (c,):
            raise SchedulingError("schedule target/flush columns are malformed")
        for arr in (self.weight_row, self.kvec, self.input_row, self.target, self.flush):
            arr.setflags(write=False)

    @classmethod
    def empty(cls, cfg: HwConfig, out_shape=(0,), layer_id="") -> "TileSchedule":
        B, R = cfg.num_blocks, cfg.rows_per_block
        return cls(
            np.zeros(0, np.int64),
            np.zeros((0, B), np.int64),
            np.zeros((0, R), np.int64),
            np.zeros((0, R), np.int64),
            np.zeros(0, bool),
            tuple(out_shape),
            layer_id,
            0,
        )

    def __len__(self):
        return len(self.weight_row)

    @property
    def n_entries(self) -> int:
        return int(np.prod(self.out_shape)) if self.out_shape else 0

    def __getitem__(self, i: int) -> CycleOp:
        return CycleOp(
            int(self.weight_row[i]),
            tuple(int(v) for v in self.kvec[i]),
            tuple(int(v) for v in self.input_row[i]),
            tuple(int(v) for v in self.target[i]),
            bool(self.flush[i]),
        )

    def __iter__(self) -> Iterator[CycleOp]:
        for i in range(len(self)):
            yield self[i]

    def output_coordinate(self, entry: int) -> tuple:
        return tuple(int(v) for v in np.unravel_index(entry, self.out_shape))


@dataclass(frozen=True, eq=False)
class Operands:
    """Packed operand tables, ``[rows, k_vectors, macs_per_row]`` int8."""

    weights: np.ndarray
    inputs: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 3 or self.inputs.ndim != 3:
            raise ValueError("operand tables must be [rows, k_vectors, macs]")
        if self.weights.shape[1:] != self.inputs.shape[1:]:
            raise ValueError("weight and input tables disagree on vector layout")


@dataclass
class PeBlockState:
    row_accumulators: np.ndarray
    broadcast_weights: np.ndarray


@dataclass(frozen=True)
class CycleStats:
    mac_ops: int = 0
    weight_reads: int = 0
    input_reads: int = 0
    output_writes: int = 0


@dataclass(frozen=True, eq=False)
class SimResult:
    acc: Optional[np.ndarray]
    stats: SimStats


def _check_int32(values, where: str):
    if values.size and (values.max() > INT32_MAX or values.min() < INT32_MIN):
        raise AccumulatorOverflowError(f"32-bit accumulator overflow in {where}")


@dataclass
class PeArray:
    """Mutable engine for one schedule at a time; not thread-safe."""

    cfg: HwConfig = field(default_factory=HwConfig)
    ledger: Optional[TrafficLedger] = None
    check_overflow: bool = True
    trace: Optional[IO[str]] = None

    def __post_init__(self):
        B, R, K = self.cfg.num_blocks, self.cfg.rows_per_block, self.cfg.macs_per_row
        self.blocks = [
            PeBlockState(np.zeros(R, np.int64), np.zeros(K, np.int8)) for _ in range(B)
        ]
        self.pending = np.full(R, -1, np.int64)
        self.bank: dict = {}
        self.cycle = 0
        self.counters = SimStats.empty(self.cfg)

    def reset(self):
        self.__post_init__()

    # ------------------------------------------------------------------ step

    def step(
        self,
        op: CycleOp,
        operands: Optional[Operands] = None,
        residency: Optional[PhaseResidency] = None,
    ) -> CycleStats:
        """Advance one cycle."""
        cfg = self.cfg
        macs = cfg.macs_per_row
        if len(op.kvec) != cfg.num_blocks or len(op.input_rows) != cfg.rows_per_block:
            raise SchedulingError("cycle op does not match the array geometry")
        rows = [r for r, x in enumerate(op.input_rows) if x >= 0] if op.weight_row >= 0 else []
        blocks = [b for b, kv in enumerate(op.kvec) if kv >= 0] if rows else []
        if residency is not None:
            residency.check(
                np.array([self.cycle]),
                np.array([op.weight_row if rows else -1]),
                np.array([[x if r in rows else -1 for r, x in enumerate(op.input_rows)]]),
            )
        for r in rows:
            t = op.targets[r]
            if t < 0:
                raise SchedulingError(f"cycle {self.cycle}: active row {r} has no target")
            if self.pending[r] >= 0 and self.pending[r] != t:
                raise SchedulingError(
                    f"cycle {self.cycle}: row {r} switches target before flushing"
                )
            self.pending[r] = t
        for b in blocks:
            state = self.blocks[b]
            if operands is not None:
                state.broadcast_weights = operands.weights[op.weight_row, op.kvec[b]].copy()
            for r in rows:
                if operands is None:
                    continue
                x = operands.inputs[op.input_rows[r], op.kvec[b]].astype(np.int64)
                state.row_accumulators[r] += int(np.dot(state.broadcast_weights.astype(np.int64), x))
                if self.check_overflow:
                    _check_int32(state.row_accumulators[r:r + 1], f"block {b} row {r}")
        writes = 0
        if op.flush:
            for r in range(cfg.rows_per_block):
                t = int(self.pending[r])
                if t < 0:
                    continue
                total = sum(int(blk.row_accumulators[r]) for blk in self.blocks)
                if self.check_overflow:
                    _check_int32(np.array([total]), f"adder tree row {r}")
                if t in self.bank:
                    raise SchedulingError(f"accumulator entry {t} written twice")
                self.bank[t] = total
                for blk in self.blocks:
                    blk.row_accumulators[r] = 0
                self.pending[r] = -1
                writes += 1
        stats = CycleStats(
            mac_ops=len(blocks) * len(rows) * macs,
            weight_reads=len(blocks) * macs,
            input_reads=len(blocks) * len(rows) * macs,
            output_writes=writes,
        )
        if self.trace is not None:
            for b in blocks:
                self.trace.write(json.dumps({
                    "cycle": self.cycle,
                    "block": b,
                    "rows_active": len(rows),
                    "weight_ref": [op.weight_row, op.kvec[b]],
                    "accumulate_target": [op.targets[r] for r in rows],
                }) + "\n")
        self._account(1, stats)
        self.cycle += 1
        return stats

    def _account(self, cycles: int, s: CycleStats):
        c = self.counters
        self.counters = SimStats(
            cycles=c.cycles + cycles,
            mac_ops=c.mac_ops + s.mac_ops,
            useful_mac_ops=c.useful_mac_ops,
            sram_weight_reads=c.sram_weight_reads + s.weight_reads,
            sram_input_reads=c.sram_input_reads + s.input_reads,
            sram_output_writes=c.sram_output_writes + s.output_writes,
            dram_bytes=c.dram_bytes,
            total_macs=c.total_macs,
            clock_mhz=c.clock_mhz,
        )
        if self.ledger is not None:
            self.ledger.read("weight", s.weight_reads)
            self.ledger.read("input", s.input_reads)
            self.ledger.write("output", s.output_writes)

    def collect(self, n_entries: int) -> np.ndarray:
        """Drain the accumulator block after a stepped run."""
        if np.any(self.pending >= 0):
            raise SchedulingError("schedule ended with unflushed partial sums")
        written = np.zeros(n_entries, bool)
        out = np.zeros(n_entries, np.int64)
        for t, v in self.bank.items():
            if not 0 <= t < n_entries:
                raise SchedulingError(f"accumulator entry {t} outside the output map")
            written[t] = True
            out[t] = v
        if self.cycle and not written.all():
            raise SchedulingError(f"{int((~written).sum())} output coordinates never written")
        return out.astype(np.int32)

    def run_stepwise(
        self,
        sched: TileSchedule,
        operands: Optional[Operands] = None,
        residency: Optional[PhaseResidency] = None,
    ) -> SimResult:
        """Reference path: one :meth:`step` per cycle."""
        self.reset()
        for op in sched:
            self.step(op, operands, residency)
        acc = self.collect(sched.n_entries)
        return SimResult(acc.reshape(sched.out_shape) if operands is not None else None,
                         self.counters)

    # ------------------------------------------------------------------- run

    def run(
        self,
        sched: TileSchedule,
        operands: Optional[Operands] = None,
        residency: Optional[PhaseResidency] = None,
    ) -> SimResult:
        """Execute a whole schedule; without operands only control and counts run."""
        self.reset()
        cfg = self.cfg
        macs = cfg.macs_per_row
        C = len(sched)
        n_entries = sched.n_entries
        if sched.kvec.shape[1:] != (cfg.num_blocks,) or sched.input_row.shape[1:] != (
            cfg.rows_per_block,
        ):
            raise SchedulingError("schedule does not match the array geometry")
        if self.trace is not None:
            return self.run_stepwise(sched, operands, residency)

        cyc_on = sched.weight_row >= 0
        row_on = (sched.input_row >= 0) & cyc_on[:, None]
        blk_on = (sched.kvec >= 0) & row_on.any(axis=1)[:, None]
        nb = blk_on.sum(axis=1).astype(np.int64)
        nr = row_on.sum(axis=1).astype(np.int64)

        if residency is not None:
            residency.check(
                np.arange(C),
                np.where(row_on.any(axis=1), sched.weight_row, -1),
                np.where(row_on, sched.input_row, -1),
            )

        # control: each (row, flush-segment) carries one target and is flushed once
        if np.any(row_on & (sched.target < 0)):
            raise SchedulingError("active row without an accumulate target")
        seg = np.cumsum(sched.flush) - sched.flush
        n_flush = int(sched.flush.sum())
        # row-major traversal keeps each (row, segment) run contiguous
        rr, cc = np.nonzero(row_on.T)
        tt = sched.target[cc, rr]
        ss = seg[cc]
        if np.any(ss >= n_flush):
            raise SchedulingError("schedule ended with unflushed partial sums")
        same_group = (rr[1:] == rr[:-1]) & (ss[1:] == ss[:-1])
        if np.any(same_group & (tt[1:] != tt[:-1])):
            raise SchedulingError("row switches target before flushing")
        first = np.ones(len(tt), bool)
        first[1:] = ~same_group
        written = tt[first]
        if np.any((written < 0) | (written >= n_entries)):
            raise SchedulingError("accumulator entry outside the output map")
        counts = np.bincount(written, minlength=n_entries) if n_entries else np.zeros(0, int)
        if np.any(counts > 1):
            raise SchedulingError(f"accumulator entry {int(np.argmax(counts > 1))} written twice")
        # an empty schedule is an empty reduction: every output is zero
        if C and np.any(counts == 0):
            raise SchedulingError(f"{int((counts == 0).sum())} output coordinates never written")

        stats = CycleStats(
            mac_ops=int((nb * nr).sum()) * macs,
            weight_reads=int(nb.sum()) * macs,
            input_reads=int((nb * nr).sum()) * macs,
            output_writes=len(written),
        )
        self._account(C, stats)
        self.cycle = C
        if operands is None:
            return SimResult(None, self.counters)
        return SimResult(self._datapath(sched, operands, row_on, blk_on).reshape(sched.out_shape),
                         self.counters)

    def _datapath(self, sched, operands, row_on, blk_on) -> np.ndarray:
        n_entries = sched.n_entries
        acc = np.zeros(n_entries, np.int64)
        bound = np.zeros(n_entries, np.int64) if self.check_overflow else None
        W, X = operands.weights, operands.inputs
        for c0 in range(0, len(sched), CHUNK_CYCLES):
            c1 = min(len(sched), c0 + CHUNK_CYCLES)
            ro = row_on[c0:c1]
            bo = blk_on[c0:c1]
            kv = np.where(bo, sched.kvec[c0:c1], 0)
            wr = np.where(ro.any(axis=1), sched.weight_row[c0:c1], 0)
            xr = np.where(ro, sched.input_row[c0:c1], 0)
            w = W[wr[:, None], kv].astype(np.int32) * bo[:, :, None]
            x = X[xr[:, None, :], kv[:, :, None]].astype(np.int32)
            partial = np.einsum("cbk,cbrk->cbr", w, x)
            partial *= ro[:, None, :]
            rowsum = partial.sum(axis=1, dtype=np.int64)
            tgt = sched.target[c0:c1][ro]
            np.add.at(acc, tgt, rowsum[ro])
            if bound is not None:
                np.add.at(bound, tgt, np.abs(partial).sum(axis=1, dtype=np.int64)[ro])
        if bound is not None and bound.size and bound.max() > INT32_MAX:
            # the abs-sum bound covers every local and adder-tree partial;
            # only when it is exceeded do the actual sums need a look
            _check_int32(acc, "accumulator block")
        return acc.astype(np.int32)


def run_schedule(
    sched: TileSchedule,
    operands: Optional[Operands] = None,
    cfg: Optional[HwConfig] = None,
    residency: Optional[PhaseResidency] = None,
    ledger: Optional[TrafficLedger] = None,
    trace: Optional[IO[str]] = None,
) -> SimResult:
    return PeArray(cfg or HwConfig(), ledger=ledger, trace=trace).run(sched, operands, residency)
