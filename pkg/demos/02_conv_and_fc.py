"""
Mapping the patch-embedding conv and a fully connected layer.

The 4x4 stride-4 conv puts one kernel row of one colour channel on each
block, so RGB fills the array exactly and seven output positions finish
per cycle.  An FC layer tiles input channels by 48 and tokens by 7; the
partial sums of every channel tile stay in the row accumulators until
the last one.
"""

import numpy as np

from rowvit.core_types import Conv4x4, FullyConnected
from rowvit.layer_exec import random_tensors, simulate_layer
from rowvit.row_scheduler import conv_cycles_per_channel, fc_cycles, plan_for

# 1 - patch embedding
conv = Conv4x4(224, 224, 3, 96)
print(f"conv {conv.h_in}x{conv.w_in}x{conv.c_in} -> {conv.h_out}x{conv.w_out}x{conv.c_out}")
print(f"  cycles per output channel: {conv_cycles_per_channel(conv)}")
print(f"  whole layer: {plan_for(conv).analytic_cycles} cycles")

run = simulate_layer(conv, random_tensors(conv, np.random.default_rng(1)))
print(f"  simulated {run.stats.cycles} cycles, utilization {run.stats.utilization:.4f},"
      f" bit-exact: {run.oracle_ok}")

# 2 - fully connected layers of a few shapes
for shape in [(7, 96, 1), (49, 96, 96), (50, 100, 10), (3136, 96, 384)]:
    fc = FullyConnected(*shape)
    run = simulate_layer(fc, random_tensors(fc, np.random.default_rng(2)))
    print(f"fc{shape}: {fc_cycles(*shape)} cycles,"
          f" utilization {run.stats.utilization:.4f}, bit-exact: {run.oracle_ok}")

# ragged token or channel counts pad to the next tile and lose a little utilization
