import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rowvit.core_types import AccumulatorOverflowError, HwConfig, SchedulingError
from rowvit.lowering import GemmPhase, pack_vectors
from rowvit.memsys import BufferPartition, TrafficLedger, phase_residency
from rowvit.pe_array_sim import CycleOp, Operands, PeArray, TileSchedule, run_schedule
from rowvit.row_scheduler import phase_schedule

TINY = HwConfig(num_blocks=1, rows_per_block=1, macs_per_row=4)


def make_schedule(ops, out_shape, cfg=TINY):
    return TileSchedule(
        np.array([o.weight_row for o in ops], np.int64),
        np.array([o.kvec for o in ops], np.int64).reshape(len(ops), cfg.num_blocks),
        np.array([o.input_rows for o in ops], np.int64).reshape(len(ops), cfg.rows_per_block),
        np.array([o.targets for o in ops], np.int64).reshape(len(ops), cfg.rows_per_block),
        np.array([o.flush for o in ops], bool),
        out_shape,
    )


def both_paths(sched, operands=None, cfg=TINY, residency=None):
    a = PeArray(cfg).run(sched, operands, residency)
    b = PeArray(cfg).run_stepwise(sched, operands, residency)
    return a, b


def gemm(phase, cfg, seed=0, lo=-128, hi=128):
    """Random operands for ``phase`` plus its reference product."""
    rng = np.random.default_rng(seed)
    x = rng.integers(lo, hi, (phase.batches, phase.m, phase.k)).astype(np.int8)
    w = rng.integers(lo, hi, (phase.batches, phase.n, phase.k)).astype(np.int8)
    ref = np.einsum("bmk,bnk->bmn", x.astype(np.int64), w.astype(np.int64))
    if phase.out_layout == "nm":
        ref = ref.transpose(0, 2, 1)
    ops = Operands(pack_vectors(w.reshape(-1, phase.k), cfg),
                   pack_vectors(x.reshape(-1, phase.k), cfg))
    return ops, ref


def test_idle_cycle_does_nothing():
    sched = make_schedule([CycleOp(-1, (-1,), (-1,), (-1,), False)], (0,))
    for res in both_paths(sched):
        assert res.stats.cycles == 1
        assert res.stats.mac_ops == 0
        assert res.stats.sram_reads == 0
        assert res.stats.utilization == 0.0


def test_single_row_dot_product():
    ops = Operands(np.array([[[1, 1, 1, 1]]], np.int8), np.array([[[1, 2, 3, 4]]], np.int8))
    sched = make_schedule([CycleOp(0, (0,), (0,), (0,), True)], (1,))
    for res in both_paths(sched, ops):
        assert res.acc.tolist() == [10]
        assert res.stats.mac_ops == 4
        assert res.stats.sram_output_writes == 1


def test_full_array_cycle():
    cfg = HwConfig()
    ops = Operands(np.ones((1, 12, 4), np.int8), np.ones((7, 12, 4), np.int8))
    op = CycleOp(0, tuple(range(12)), tuple(range(7)), tuple(range(7)), True)
    sched = make_schedule([op], (7,), cfg)
    for res in both_paths(sched, ops, cfg):
        assert res.stats.mac_ops == 336
        assert res.stats.utilization == 1.0
        # one 4-wide weight read per block, broadcast to all 7 rows
        assert res.stats.sram_weight_reads == 48
        assert res.stats.sram_input_reads == 336
        assert res.acc.tolist() == [48] * 7


def test_partial_sums_survive_until_flush():
    # two channel tiles accumulate locally, then a single flush
    ops = Operands(np.array([[[1, 2, 3, 4], [1, 1, 1, 1]]], np.int8),
                   np.array([[[1, 1, 1, 1], [5, 5, 5, 5]]], np.int8))
    sched = make_schedule([
        CycleOp(0, (0,), (0,), (0,), False),
        CycleOp(0, (1,), (0,), (0,), True),
    ], (1,))
    for res in both_paths(sched, ops):
        assert res.acc.tolist() == [30]
        assert res.stats.sram_output_writes == 1


@pytest.mark.parametrize("ops, message", [
    ([CycleOp(0, (0,), (0,), (0,), True), CycleOp(0, (0,), (0,), (0,), True)], "twice"),
    ([CycleOp(0, (0,), (0,), (0,), False)], "unflushed"),
    ([CycleOp(0, (0,), (0,), (0,), False), CycleOp(0, (0,), (0,), (1,), True)], "switch"),
    ([CycleOp(-1, (-1,), (-1,), (-1,), False)], "never written"),
    ([CycleOp(0, (0,), (0,), (-1,), True)], "target"),
])
def test_control_errors(ops, message):
    sched = make_schedule(ops, (2,) if message in ("switch", "never written") else (1,))
    operands = Operands(np.ones((1, 1, 4), np.int8), np.ones((1, 1, 4), np.int8))
    with pytest.raises(SchedulingError):
        PeArray(TINY).run(sched, operands)
    with pytest.raises(SchedulingError):
        PeArray(TINY).run_stepwise(sched, operands)


def test_entry_outside_output_map():
    sched = make_schedule([CycleOp(0, (0,), (0,), (5,), True)], (1,))
    with pytest.raises(SchedulingError):
        PeArray(TINY).run(sched)
    with pytest.raises(SchedulingError):
        PeArray(TINY).run_stepwise(sched)


def test_geometry_mismatch():
    sched = make_schedule([CycleOp(0, (0,), (0,), (0,), True)], (1,))
    with pytest.raises(SchedulingError):
        PeArray(HwConfig()).run(sched)


def test_accumulator_overflow_detected():
    cfg = HwConfig(num_blocks=1, rows_per_block=1, macs_per_row=4)
    phase = GemmPhase("fc", 1, 1, 1, 4 * 40000, "groups_outer")
    sched = phase_schedule(phase, cfg)
    ops = Operands(np.full((1, 40000, 4), -128, np.int8), np.full((1, 40000, 4), -128, np.int8))
    with pytest.raises(AccumulatorOverflowError):
        PeArray(cfg).run(sched, ops)
    # the same magnitude with alternating signs stays in range
    w = np.full((1, 40000, 4), -128, np.int8)
    w[:, ::2] = 127
    res = PeArray(cfg).run(sched, Operands(w, np.full((1, 40000, 4), 127, np.int8)))
    assert res.acc.item() == 127 * 4 * 20000 * (127 - 128)


def test_non_resident_operand_rejected():
    cfg = HwConfig()
    # tiny weight buffer: one weight row per pass
    phase = GemmPhase("fc", 1, 14, 3, 48, "groups_outer")
    p = BufferPartition(4096, 48, 4096)
    res = phase_residency(phase, p, cfg)
    assert res.rows_per_pass == 1 and res.passes == 3
    good = phase_schedule(phase, cfg, res.rows_per_pass)
    PeArray(cfg).run(good, residency=res)
    # the default loop order walks every weight row in each group, which the
    # one-row weight buffer cannot keep
    bad = phase_schedule(phase, cfg)
    with pytest.raises(SchedulingError, match="weight row not resident"):
        PeArray(cfg).run(bad, residency=res)
    with pytest.raises(SchedulingError, match="weight row not resident"):
        PeArray(cfg).run_stepwise(bad, residency=res)


phase_shapes = st.tuples(
    st.integers(1, 3), st.integers(1, 15), st.integers(1, 9), st.integers(1, 60),
    st.sampled_from(["groups_outer", "outputs_outer"]), st.sampled_from(["mn", "nm"]),
)
geometries = st.sampled_from([HwConfig(), HwConfig(3, 2, 4), HwConfig(2, 3, 2)])


@settings(max_examples=60, deadline=None)
@given(phase_shapes, geometries, st.integers(0, 2**32 - 1), st.integers(1, 9))
def test_stepwise_and_batch_agree_with_matmul(shape, cfg, seed, per_pass):
    b, m, n, k, order, layout = shape
    phase = GemmPhase("p", b, m, n, k, order, layout)
    ops, ref = gemm(phase, cfg, seed)
    sched = phase_schedule(phase, cfg, min(per_pass, n))
    assert len(sched) == phase.cycles(cfg)
    fast, slow = both_paths(sched, ops, cfg)
    assert np.array_equal(fast.acc, ref)
    assert np.array_equal(slow.acc, ref)
    assert fast.stats == slow.stats
    assert fast.stats.mac_ops == phase.issued_macs(cfg)
    assert fast.stats.sram_output_writes == phase.entries


def test_batch_path_spans_many_chunks():
    cfg = HwConfig()
    phase = GemmPhase("fc", 1, 70, 300, 200, "groups_outer")
    ops, ref = gemm(phase, cfg, 3)
    sched = phase_schedule(phase, cfg)
    assert len(sched) > 8192
    assert np.array_equal(PeArray(cfg).run(sched, ops).acc, ref)


def test_operand_free_run_counts_only():
    cfg = HwConfig()
    phase = GemmPhase("fc", 1, 7, 96, 96, "groups_outer")
    res = run_schedule(phase_schedule(phase, cfg), cfg=cfg)
    assert res.acc is None
    assert res.stats.cycles == 192
    assert res.stats.mac_ops == 7 * 96 * 96


def test_ledger_matches_counters():
    cfg = HwConfig()
    phase = GemmPhase("fc", 1, 10, 5, 100, "groups_outer")
    ledger = TrafficLedger()
    res = PeArray(cfg, ledger=ledger).run(phase_schedule(phase, cfg))
    assert ledger.sram_reads["weight"] == res.stats.sram_weight_reads
    assert ledger.sram_reads["input"] == res.stats.sram_input_reads
    assert ledger.sram_writes["output"] == res.stats.sram_output_writes == 50


def test_trace_records_every_active_block():
    cfg = HwConfig(3, 2, 4)
    phase = GemmPhase("fc", 1, 3, 2, 20, "groups_outer")
    ops, ref = gemm(phase, cfg, 1)
    buf = io.StringIO()
    res = PeArray(cfg, trace=buf).run(phase_schedule(phase, cfg), ops)
    assert np.array_equal(res.acc, ref)
    records = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert records, "trace is empty"
    assert set(records[0]) == {"cycle", "block", "rows_active", "weight_ref", "accumulate_target"}
    # 20 channels = 5 vectors over 3 blocks: tiles use 3 then 2 blocks
    assert len(records) == 2 * 2 * (3 + 2)
    assert all(r["rows_active"] in (1, 2) for r in records)


def test_runs_are_deterministic():
    cfg = HwConfig()
    phase = GemmPhase("qk", 4, 49, 49, 32, "outputs_outer", "nm")
    ops, _ = gemm(phase, cfg, 5)
    sched = phase_schedule(phase, cfg)
    a = PeArray(cfg).run(sched, ops)
    b = PeArray(cfg).run(sched, ops)
    assert np.array_equal(a.acc, b.acc) and a.stats == b.stats


def test_schedule_is_read_only():
    sched = phase_schedule(GemmPhase("fc", 1, 7, 2, 8, "groups_outer"), HwConfig())
    with pytest.raises(ValueError):
        sched.flush[0] = True
    assert sched[0].weight_row == 0
    assert sched.output_coordinate(3) == (0, 1, 1)
