"""
Window attention on the row-wise array.

For QK^T a Q row is the broadcast weight and K rows stream seven at a
time.  With head_dim 32 only eight of the twelve blocks have work, and
each Q row takes seven cycles for a 49-token window.  The int8 softmax
probabilities then play the input role for A.V, with V^T rows as
weights, which keeps all twelve blocks busy.
"""

import numpy as np

from rowvit.core_types import WindowAttention
from rowvit.layer_exec import random_tensors, simulate_layer
from rowvit.row_scheduler import plan_for, schedule_attention

attn = WindowAttention(num_windows=1, tokens_per_window=49, embed_dim=32, num_heads=1)

# 1 - the plan
plan = plan_for(attn)
for name, cycles, blocks in zip(("QK^T", "A.V"), plan.phase_cycles, plan.phase_blocks):
    print(f"{name:5s} {cycles:4d} cycles on {blocks:2d} of 12 blocks")

# 2 - one Q row stays latched for seven cycles
qk = schedule_attention(attn).schedules[0]
rows, per_row = np.unique(qk.weight_row, return_counts=True)
print(f"Q rows: {len(rows)}, cycles per row: {sorted(set(per_row.tolist()))}")

# 3 - a stage-1 layer, checked against the oracle
stage1 = WindowAttention(64, 49, 96, 3)
run = simulate_layer(stage1, random_tensors(stage1, np.random.default_rng(3)))
print(f"stage-1 attention: {run.stats.cycles} cycles, utilization"
      f" {run.stats.utilization:.4f}, bit-exact: {run.oracle_ok}")
