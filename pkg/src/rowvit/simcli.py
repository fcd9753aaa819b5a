"""Whole-workload runs and the command-line front end."""

from __future__ import annotations

import argparse
import sys
from typing import IO, Optional, Sequence

import numpy as np

from .core_types import CapacityError, HwConfig, SimStats, UnsupportedMappingError
from .layer_exec import random_tensors, simulate_layer
from .memsys import DEFAULT_PARTITION, BufferPartition, TrafficLedger, check_partition
from .report import LayerReport, Report, emit_report
from .row_scheduler import check_supported, flops_report
from .workload import Workload, build_swin_t, format_layer, load


class LayerMappingError(UnsupportedMappingError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"layer {index}: {cause}")
        self.index = index


def run(
    workload: Workload,
    cfg: Optional[HwConfig] = None,
    partition: BufferPartition = DEFAULT_PARTITION,
    check: bool = False,
    seed: int = 0,
    trace: Optional[IO[str]] = None,
    bandwidth: Optional[float] = None,
    ledger: Optional[TrafficLedger] = None,
) -> Report:
    """Schedule and simulate every layer of ``workload``.

    With ``check`` each layer gets its own seeded uniform int8 operands and
    its datapath result is compared with the oracle.  Capacity violations are
    recorded in the report; unmappable layers raise :class:`LayerMappingError`.
    """
    cfg = cfg or HwConfig()
    workload.check_shapes()
    for i, layer in enumerate(workload.layers):
        try:
            check_supported(layer, cfg)
        except UnsupportedMappingError as exc:
            raise LayerMappingError(i, exc) from exc

    partition_ok = bool(check_partition(partition, cfg))
    layers = []
    for i, layer in enumerate(workload.layers):
        text = format_layer(layer)
        tensors = random_tensors(layer, np.random.default_rng([seed, i])) if check else None
        try:
            res = simulate_layer(layer, tensors, cfg, partition, ledger=ledger, trace=trace,
                                 check=check, bandwidth=bandwidth, layer_id=str(i))
        except CapacityError as exc:
            layers.append(LayerReport(i, layer.kind, text, SimStats.empty(cfg), error=str(exc)))
            continue
        plan = res.schedule.plan
        layers.append(LayerReport(i, layer.kind, text, res.stats, plan.phase_cycles,
                                  plan.phase_blocks, res.oracle_ok))
    flops = flops_report(workload.layers) if workload.layers else None
    return Report(workload.name, cfg, partition, tuple(layers), flops, partition_ok)


def _bandwidth(text: str) -> Optional[float]:
    if text == "ideal":
        return None
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive bytes per cycle")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="rowvit-sim",
        description="Cycle-level simulation of the row-wise ViT accelerator.",
    )
    p.add_argument("--workload", default="swin-t",
                   help="workload file, or 'swin-t' for the built-in model (default)")
    p.add_argument("--clock-mhz", type=float, default=600.0)
    p.add_argument("--partition", type=BufferPartition.parse, default=DEFAULT_PARTITION,
                   help="input,weight,output buffer bytes (default 57344,73728,21504)")
    p.add_argument("--check", action="store_true",
                   help="run the datapath on random int8 data and compare with the oracle")
    p.add_argument("--trace", metavar="PATH",
                   help="write a per-cycle, per-block JSON-lines trace (slow)")
    p.add_argument("--format", choices=("table", "machine"), default="table")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bandwidth", type=_bandwidth, default=None,
                   help="off-chip bytes per cycle, or 'ideal' (default)")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    workload = build_swin_t() if args.workload == "swin-t" else load(args.workload)
    cfg = HwConfig(clock_mhz=args.clock_mhz)
    trace = open(args.trace, "w") if args.trace else None
    try:
        report = run(workload, cfg, args.partition, check=args.check, seed=args.seed,
                     trace=trace, bandwidth=args.bandwidth)
    except UnsupportedMappingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    finally:
        if trace is not None:
            trace.close()
    sys.stdout.write(emit_report(report, args.format))
    if not report.partition_ok:
        print("error: buffer partition exceeds the SRAM budget", file=sys.stderr)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
