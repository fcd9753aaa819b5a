"""Simulation reports and their two text forms.

The machine form is JSON Lines with a fixed key order:

1. ``header``: format tag, workload name, hardware config, partition, peak GOPS.
2. one ``layer`` record per layer: ``index, type, cycles, mac_ops,
   utilization, sram_reads, dram_bytes`` followed by the remaining counters,
   the layer text, per-phase cycles and blocks, oracle verdict and error.
3. ``flops``: FLOPs and parameters per layer type.
4. ``totals``: ``cycles, mac_ops, utilization, sram_reads, dram_bytes`` then
   ``images_per_s``, ``gops``, ``peak_gops``.

An empty report is the header line alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import Optional

from .core_types import HwConfig, SimStats, peak_gops
from .memsys import BufferPartition
from .row_scheduler import FlopsReport

FORMAT_TAG = "rowvit-report/1"

_COUNTERS = (
    "useful_mac_ops",
    "sram_weight_reads",
    "sram_input_reads",
    "sram_output_writes",
    "stall_cycles",
)


@dataclass(frozen=True)
class LayerReport:
    index: int
    kind: str
    layer: str
    stats: SimStats
    phase_cycles: tuple = ()
    phase_blocks: tuple = ()
    oracle_ok: Optional[bool] = None
    error: Optional[str] = None

    def block_idle_cycles(self, num_blocks: int) -> float:
        """Cycles lost to blocks a phase never uses, in whole-array cycles."""
        return sum(c * (num_blocks - b) / num_blocks
                   for c, b in zip(self.phase_cycles, self.phase_blocks))


@dataclass(frozen=True)
class Report:
    workload: str
    config: HwConfig = field(default_factory=HwConfig)
    partition: BufferPartition = field(default_factory=BufferPartition)
    layers: tuple = ()
    flops: Optional[FlopsReport] = None
    partition_ok: bool = True

    @property
    def totals(self) -> SimStats:
        return reduce(lambda a, b: a + b, (lr.stats for lr in self.layers),
                      SimStats.empty(self.config))

    @property
    def images_per_s(self) -> float:
        cycles = self.totals.cycles
        return self.config.clock_hz / cycles if cycles else 0.0

    @property
    def peak_gops(self) -> float:
        return peak_gops(self.config)

    @property
    def ok(self) -> bool:
        return self.partition_ok and all(
            lr.error is None and lr.oracle_ok is not False for lr in self.layers
        )

    def cycles_of(self, kind: str) -> int:
        return sum(lr.stats.cycles for lr in self.layers if lr.kind == kind)


def attention_cycle_share(report: Report) -> float:
    total = report.totals.cycles
    return report.cycles_of("wmsa") / total if total else 0.0


def attention_idle_share(report: Report) -> float:
    """Share of all cycles lost to PE blocks idle during attention phases."""
    total = report.totals.cycles
    lost = sum(lr.block_idle_cycles(report.config.num_blocks)
               for lr in report.layers if lr.kind == "wmsa")
    return lost / total if total else 0.0


# --------------------------------------------------------------------------
# Machine form
# --------------------------------------------------------------------------


def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _header(r: Report) -> dict:
    return {
        "record": "header",
        "format": FORMAT_TAG,
        "workload": r.workload,
        "config": asdict(r.config),
        "partition": [r.partition.input_bytes, r.partition.weight_bytes, r.partition.output_bytes],
        "partition_ok": r.partition_ok,
        "peak_gops": r.peak_gops,
    }


def _layer_record(lr: LayerReport) -> dict:
    s = lr.stats
    rec = {
        "record": "layer",
        "index": lr.index,
        "type": lr.kind,
        "cycles": s.cycles,
        "mac_ops": s.mac_ops,
        "utilization": s.utilization,
        "sram_reads": s.sram_reads,
        "dram_bytes": s.dram_bytes,
    }
    rec.update({name: getattr(s, name) for name in _COUNTERS})
    rec.update({
        "layer": lr.layer,
        "phase_cycles": list(lr.phase_cycles),
        "phase_blocks": list(lr.phase_blocks),
        "oracle_ok": lr.oracle_ok,
        "error": lr.error,
    })
    return rec


def _totals_record(r: Report) -> dict:
    t = r.totals
    return {
        "record": "totals",
        "cycles": t.cycles,
        "mac_ops": t.mac_ops,
        "utilization": t.utilization,
        "sram_reads": t.sram_reads,
        "dram_bytes": t.dram_bytes,
        "images_per_s": r.images_per_s,
        "gops": t.gops,
        "peak_gops": r.peak_gops,
        "ok": r.ok,
    }


def emit_machine(r: Report) -> str:
    lines = [_dump(_header(r))]
    if r.layers:
        lines += [_dump(_layer_record(lr)) for lr in r.layers]
        if r.flops is not None:
            lines.append(_dump({"record": "flops", **r.flops.to_dict()}))
        lines.append(_dump(_totals_record(r)))
    return "\n".join(lines) + "\n"


def parse_machine(text: str) -> Report:
    """Inverse of :func:`emit_machine`; derived fields are checked, not stored."""
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not records or records[0].get("record") != "header":
        raise ValueError("report must start with a header record")
    head = records[0]
    if head.get("format") != FORMAT_TAG:
        raise ValueError(f"unknown report format {head.get('format')!r}")
    cfg = HwConfig(**head["config"])
    layers, flops = [], None
    for rec in records[1:]:
        kind = rec["record"]
        if kind == "layer":
            stats = SimStats(
                cycles=rec["cycles"],
                mac_ops=rec["mac_ops"],
                dram_bytes=rec["dram_bytes"],
                total_macs=cfg.total_macs,
                clock_mhz=cfg.clock_mhz,
                **{name: rec[name] for name in _COUNTERS},
            )
            if stats.sram_reads != rec["sram_reads"]:
                raise ValueError(f"layer {rec['index']}: sram_reads disagrees with its parts")
            layers.append(LayerReport(
                rec["index"], rec["type"], rec["layer"], stats,
                tuple(rec["phase_cycles"]), tuple(rec["phase_blocks"]),
                rec["oracle_ok"], rec["error"],
            ))
        elif kind == "flops":
            flops = FlopsReport(dict(rec["flops"]), dict(rec["params"]))
        elif kind == "totals":
            pass
        else:
            raise ValueError(f"unknown record type {kind!r}")
    report = Report(head["workload"], cfg, BufferPartition(*head["partition"]), tuple(layers),
                    flops, head["partition_ok"])
    totals = [rec for rec in records if rec["record"] == "totals"]
    if totals and totals[0]["cycles"] != report.totals.cycles:
        raise ValueError("totals record disagrees with the layer records")
    return report


# --------------------------------------------------------------------------
# Table form
# --------------------------------------------------------------------------

_TABLE_HEAD = (
    f"{'idx':>4} {'type':<8} {'layer':<28} {'cycles':>10} {'mac_ops':>12} "
    f"{'util':>7} {'sram_reads':>12} {'dram_bytes':>12} {'oracle':>6}"
)


def emit_table(r: Report) -> str:
    lines = [f"# workload {r.workload}  peak {r.peak_gops:.1f} GOPS @ {r.config.clock_mhz:g} MHz",
             _TABLE_HEAD]
    if not r.layers:
        return "\n".join(lines) + "\n"
    for lr in r.layers:
        s = lr.stats
        verdict = {None: "-", True: "ok", False: "FAIL"}[lr.oracle_ok]
        if lr.error:
            verdict = "ERR"
        lines.append(
            f"{lr.index:>4} {lr.kind:<8} {lr.layer:<28} {s.cycles:>10} {s.mac_ops:>12} "
            f"{s.utilization:>7.4f} {s.sram_reads:>12} {s.dram_bytes:>12} {verdict:>6}"
        )
        if lr.error:
            lines.append(f"     ! {lr.error}")
    t = r.totals
    lines.append(
        f"{'':>4} {'total':<8} {'':<28} {t.cycles:>10} {t.mac_ops:>12} "
        f"{t.utilization:>7.4f} {t.sram_reads:>12} {t.dram_bytes:>12}"
    )
    lines.append(
        f"# {r.images_per_s:.2f} images/s, {1e3 / r.images_per_s if r.images_per_s else 0:.2f} "
        f"ms/image, {t.gops:.1f} GOPS sustained"
    )
    if r.flops is not None:
        shares = ", ".join(
            f"{k} {r.flops.flops_share(k):.2%} FLOPs / {r.flops.params_share(k):.2%} params"
            for k in r.flops.flops
        )
        lines.append(f"# {shares}")
        lines.append(
            f"# attention: {attention_cycle_share(r):.2%} of cycles, "
            f"{attention_idle_share(r):.2%} lost to idle blocks"
        )
    return "\n".join(lines) + "\n"


def emit_report(r: Report, format: str = "table") -> str:
    if format == "table":
        return emit_table(r)
    if format == "machine":
        return emit_machine(r)
    raise ValueError(f"unknown report format {format!r}")


parse_report = parse_machine
