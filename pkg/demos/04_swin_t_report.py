"""
Whole-model Swin-T run.

Builds the 65-layer Swin-T workload, simulates every layer and prints the
table report: cycles, utilization, SRAM and off-chip traffic per layer,
the throughput at 600 MHz and how FLOPs and parameters split by layer
type.  Pass --check to also run the datapath on random int8 data and
compare each layer with the oracle (about a minute).
"""

import sys

from rowvit.report import attention_cycle_share, emit_report
from rowvit.simcli import run
from rowvit.workload import build_swin_t

check = "--check" in sys.argv
report = run(build_swin_t(), check=check)
print(emit_report(report, "table"))

t = report.totals
print(f"{report.images_per_s:.2f} images/s at {t.utilization:.2%} utilization")
print(f"attention is {attention_cycle_share(report):.2%} of all cycles")
print(f"fully connected layers carry {report.flops.flops_share('fc'):.2%} of the FLOPs")
