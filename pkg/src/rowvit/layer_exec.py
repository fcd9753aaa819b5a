"""Runs one layer end to end: schedule, simulate, post-process, compare with the oracle."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import IO, Optional

import numpy as np

from . import golden_oracle as oracle
from .core_types import (
    Conv4x4,
    FullyConnected,
    HwConfig,
    LayerDescriptor,
    QTensor,
    SimStats,
    WindowAttention,
    calibrate_scale,
    requantize,
)
from .lowering import (
    conv_input_matrix,
    conv_weight_matrix,
    merge_heads,
    pack_vectors,
    split_heads,
)
from .memsys import DEFAULT_PARTITION, BufferPartition, TrafficLedger
from .pe_array_sim import Operands, PeArray
from .row_scheduler import LayerSchedule, schedule_layer

ACT_SCALE = 1.0 / 64


@dataclass(frozen=True, eq=False)
class LayerRun:
    stats: SimStats
    schedule: LayerSchedule
    acc: Optional[np.ndarray] = None
    output: Optional[QTensor] = None
    oracle_ok: Optional[bool] = None
    mismatches: int = 0


def random_int8(rng: np.random.Generator, shape, scale: float = ACT_SCALE) -> QTensor:
    return QTensor(rng.integers(-128, 128, size=shape, dtype=np.int8), scale)


def random_tensors(desc: LayerDescriptor, rng: np.random.Generator) -> dict:
    """Uniform int8 operands for ``desc``; weights and activations at scale 1/64."""
    if isinstance(desc, Conv4x4):
        t = {
            "input": random_int8(rng, (desc.h_in, desc.w_in, desc.c_in)),
            "weights": random_int8(rng, (desc.c_out, 4, 4, desc.c_in)),
        }
    elif isinstance(desc, FullyConnected):
        t = {
            "input": random_int8(rng, (desc.tokens, desc.c_in)),
            "weights": random_int8(rng, (desc.c_out, desc.c_in)),
        }
    elif isinstance(desc, WindowAttention):
        dims = (desc.num_windows, desc.tokens_per_window, desc.embed_dim)
        t = {name: random_int8(rng, dims) for name in ("q", "k", "v")}
    else:
        raise TypeError(type(desc).__name__)
    if desc.residual:
        t["skip"] = random_int8(rng, desc.output_shape)
    return t


def _post_ops(desc: LayerDescriptor, out: QTensor, tensors: dict) -> QTensor:
    # skip connection first, then layer norm on the sum
    if desc.residual:
        out = oracle.residual_add(out, tensors["skip"])
    if desc.post_norm:
        out = oracle.layernorm_row(out)
    return out


def oracle_layer(desc: LayerDescriptor, tensors: dict):
    """Reference accumulators and final int8 output for ``desc``.

    Returns ``(acc, score_acc_or_None, output)`` with ``acc`` shaped like the
    layer output ``[tokens, channels]``.
    """
    if isinstance(desc, Conv4x4):
        res = oracle.oracle_conv4x4(tensors["input"], tensors["weights"])
        acc = res.acc_tensor.reshape(desc.output_shape)
        out = QTensor(res.tensor.data.reshape(desc.output_shape), res.tensor.scale)
        return acc, None, _post_ops(desc, out, tensors)
    if isinstance(desc, FullyConnected):
        res = oracle.oracle_fc(tensors["input"], tensors["weights"], activation=desc.activation,
                               act_scale=ACT_SCALE)
        return res.acc_tensor, None, _post_ops(desc, res.tensor, tensors)
    res = oracle.oracle_window_attention(tensors["q"], tensors["k"], tensors["v"], desc.num_heads)
    return res.acc_tensor, res.score_acc, _post_ops(desc, res.tensor, tensors)


def _fc_like_output(acc: np.ndarray, acc_scale: float, activation: str) -> QTensor:
    scale = calibrate_scale(acc * acc_scale)
    out = requantize(acc, acc_scale, scale)
    if activation == "gelu":
        table = oracle.build_gelu_table(scale, ACT_SCALE)
        out = QTensor(oracle.gelu_lut(out.data, table), ACT_SCALE)
    return out


def simulate_layer(
    desc: LayerDescriptor,
    tensors: Optional[dict] = None,
    cfg: Optional[HwConfig] = None,
    partition: BufferPartition = DEFAULT_PARTITION,
    ledger: Optional[TrafficLedger] = None,
    trace: Optional[IO[str]] = None,
    check: bool = True,
    bandwidth: Optional[float] = None,
    layer_id: str = "",
) -> LayerRun:
    """Schedule and simulate ``desc``.

    Without ``tensors`` only control flow and counters are simulated.  With
    tensors the datapath runs and, if ``check`` is set, the accumulators and
    final int8 output are compared with the oracle.  ``bandwidth`` caps
    off-chip traffic in bytes per cycle; loads overlap compute, so only the
    excess shows up as stall cycles.
    """
    cfg = cfg or HwConfig()
    ledger = ledger if ledger is not None else TrafficLedger()
    sched = schedule_layer(desc, cfg, partition, layer_id)
    engine = PeArray(cfg, ledger=ledger, trace=trace)

    stats = SimStats.empty(cfg)
    results = []
    ops_for = _operand_builder(desc, tensors, cfg) if tensors is not None else None
    for i, (phase, s, res) in enumerate(zip(sched.phases, sched.schedules, sched.residency.phases)):
        operands = ops_for(i, results) if ops_for else None
        out = engine.run(s, operands, res)
        stats = stats + out.stats
        results.append(out.acc)

    plan = sched.residency
    ledger.dram_in(plan.dram_weight_bytes + plan.dram_input_bytes)
    ledger.dram_out(plan.dram_output_bytes)
    stall = 0
    if bandwidth is not None:
        stall = max(0, -(-plan.dram_bytes // bandwidth) - stats.cycles)
    stats = replace(
        stats,
        useful_mac_ops=sum(p.useful_macs() for p in sched.phases),
        dram_bytes=plan.dram_bytes,
        stall_cycles=int(stall),
        cycles=stats.cycles + int(stall),
    )
    if tensors is None:
        return LayerRun(stats, sched)

    acc, score_acc, output = _assemble(desc, tensors, results)
    if not check:
        return LayerRun(stats, sched, acc, output)
    ref_acc, ref_scores, ref_out = oracle_layer(desc, tensors)
    mismatches = int(np.count_nonzero(acc != ref_acc))
    if score_acc is not None:
        mismatches += int(np.count_nonzero(score_acc != ref_scores))
    mismatches += int(np.count_nonzero(output.data != ref_out.data))
    ok = mismatches == 0 and output.scale == ref_out.scale
    return LayerRun(stats, sched, acc, output, ok, mismatches)


def _operand_builder(desc: LayerDescriptor, tensors: dict, cfg: HwConfig):
    pack = lambda m: pack_vectors(m, cfg)  # noqa: E731
    if isinstance(desc, Conv4x4):
        ops = Operands(pack(conv_weight_matrix(tensors["weights"].data)),
                       pack(conv_input_matrix(tensors["input"].data)))
        return lambda i, prev: ops
    if isinstance(desc, FullyConnected):
        ops = Operands(pack(tensors["weights"].data), pack(tensors["input"].data))
        return lambda i, prev: ops

    H, d = desc.num_heads, desc.head_dim
    T = desc.tokens_per_window
    q = split_heads(tensors["q"].data, H)
    k = split_heads(tensors["k"].data, H)
    v = split_heads(tensors["v"].data, H)

    def build(i, prev):
        if i == 0:
            return Operands(pack(q.reshape(-1, d)), pack(k.reshape(-1, d)))
        probs = _attention_probs(desc, tensors, prev[0])
        vt = v.transpose(0, 2, 1).reshape(-1, T)
        return Operands(pack(vt), pack(probs.data.reshape(-1, T)))

    return build


def _attention_probs(desc: WindowAttention, tensors: dict, score_acc: np.ndarray) -> QTensor:
    W, H, T = desc.num_windows, desc.num_heads, desc.tokens_per_window
    return oracle.attention_probs(
        score_acc.reshape(W, H, T, T), tensors["q"].scale, tensors["k"].scale, desc.head_dim
    )


def _assemble(desc: LayerDescriptor, tensors: dict, results: list):
    if isinstance(desc, (Conv4x4, FullyConnected)):
        acc = results[0].reshape(desc.output_shape)
        t = tensors
        out = _fc_like_output(acc, t["input"].scale * t["weights"].scale,
                              getattr(desc, "activation", "none"))
        return acc, None, _post_ops(desc, out, tensors)
    W, H, T = desc.num_windows, desc.num_heads, desc.tokens_per_window
    scores = results[0].reshape(W, H, T, T)
    acc = merge_heads(results[1].reshape(W * H, T, desc.head_dim), W, H)
    out = _fc_like_output(acc, oracle.PROB_SCALE * tensors["v"].scale, "none")
    return acc, scores, _post_ops(desc, out, tensors)
