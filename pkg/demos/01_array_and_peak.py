"""
The PE array in one cycle.

Twelve blocks of seven rows, four MACs per row.  Each block latches one
4-wide weight vector and broadcasts it to all seven rows, so a single
weight read feeds seven dot products.  This script builds one full cycle
by hand, runs it through the engine and prints what it costs.
"""

import numpy as np

from rowvit.core_types import HwConfig, peak_gops
from rowvit.pe_array_sim import CycleOp, Operands, PeArray, TileSchedule

cfg = HwConfig()
print(f"geometry: {cfg.num_blocks} blocks x {cfg.rows_per_block} rows x {cfg.macs_per_row} MACs"
      f" = {cfg.total_macs} MACs")
print(f"peak at {cfg.clock_mhz:g} MHz: {peak_gops(cfg):.1f} GOPS")

# 1 - one weight row of 48 channels, seven input rows
rng = np.random.default_rng(0)
w = rng.integers(-128, 128, (1, 12, 4)).astype(np.int8)
x = rng.integers(-128, 128, (7, 12, 4)).astype(np.int8)

op = CycleOp(weight_row=0, kvec=tuple(range(12)), input_rows=tuple(range(7)),
             targets=tuple(range(7)), flush=True)
sched = TileSchedule(
    np.array([op.weight_row]), np.array([op.kvec]), np.array([op.input_rows]),
    np.array([op.targets]), np.array([op.flush]), out_shape=(7,),
)

# 2 - the engine, step by step
res = PeArray(cfg).run_stepwise(sched, Operands(w, x))
ref = x.reshape(7, 48).astype(int) @ w.reshape(48).astype(int)
print("accumulators:", res.acc.tolist())
print("reference:   ", ref.tolist())

s = res.stats
print(f"mac_ops {s.mac_ops}, utilization {s.utilization:.2f}")
print(f"weight reads {s.sram_weight_reads}, input reads {s.sram_input_reads}"
      f" -> {s.sram_input_reads // s.sram_weight_reads}x weight reuse")
