import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rowvit.core_types import (
    Conv4x4,
    FullyConnected,
    HwConfig,
    UnsupportedMappingError,
    WindowAttention,
)
from rowvit.layer_exec import random_tensors, simulate_layer
from rowvit.pe_array_sim import PeArray
from rowvit.row_scheduler import (
    analytic_cycles,
    av_cycles_per_head,
    conv_cycles_per_channel,
    fc_cycles,
    flops_report,
    plan_for,
    qk_cycles_per_head,
    schedule_attention,
    schedule_conv,
    schedule_fc,
    schedule_layer,
)

CFG = HwConfig()


def simulated_cycles(sched):
    return sum(PeArray(CFG).run(s).stats.cycles for s in sched.schedules)


# Conv ------------------------------------------------------------------------------


def test_conv_448_cycles_per_channel():
    assert conv_cycles_per_channel(Conv4x4(224, 224, 3, 1)) == 448
    sched = schedule_conv(Conv4x4(224, 224, 3, 1))
    assert sched.cycles == 448


def test_conv_full_layer():
    desc = Conv4x4(224, 224, 3, 96)
    sched = schedule_conv(desc)
    assert analytic_cycles(desc) == 43008
    assert simulated_cycles(sched) == 43008
    assert sched.plan.blocks_used == 12


def test_conv_single_patch():
    assert analytic_cycles(Conv4x4(4, 4, 3, 1)) == 1


def test_conv_needs_rgb():
    with pytest.raises(UnsupportedMappingError):
        schedule_conv(Conv4x4(8, 8, 4, 2))
    with pytest.raises(UnsupportedMappingError):
        plan_for(Conv4x4(8, 8, 3, 2), HwConfig(num_blocks=16))
    with pytest.raises(TypeError):
        schedule_conv(FullyConnected(1, 4, 1))


# FC --------------------------------------------------------------------------------


@pytest.mark.parametrize("shape, cycles", [
    ((7, 96, 1), 2),
    ((49, 96, 96), 1344),
    ((1, 4, 1), 1),
    ((3136, 96, 96), 86016),
])
def test_fc_examples(shape, cycles):
    desc = FullyConnected(*shape)
    assert fc_cycles(*shape) == cycles
    assert analytic_cycles(desc) == cycles
    assert schedule_fc(desc).cycles == cycles


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 56), st.integers(4, 768), st.integers(1, 96))
def test_fc_schedule_length_matches_formula(tokens, c_in, c_out):
    expect = -(-tokens // 7) * -(-c_in // 48) * c_out
    assert schedule_fc(FullyConnected(tokens, c_in, c_out)).cycles == expect


# Attention -------------------------------------------------------------------------


def test_attention_swin_window():
    desc = WindowAttention(1, 49, 32, 1)
    plan = plan_for(desc)
    assert qk_cycles_per_head(49) == 343
    assert plan.phase_cycles[0] == 343
    assert plan.phase_blocks[0] == 8
    # A.V: 7 token groups x 2 channel tiles x 32 output columns
    assert av_cycles_per_head(49, 32) == plan.phase_cycles[1] == 448
    assert plan.phase_blocks[1] == 12
    assert schedule_attention(desc).cycles == 343 + 448


def test_each_q_row_takes_seven_cycles():
    sched = schedule_attention(WindowAttention(1, 49, 32, 1)).schedules[0]
    rows, counts = np.unique(sched.weight_row, return_counts=True)
    assert rows.tolist() == list(range(49))
    assert set(counts.tolist()) == {7}
    active = (sched.kvec >= 0).sum(axis=1)
    assert set(active.tolist()) == {8}


def test_attention_seven_tokens():
    assert plan_for(WindowAttention(1, 7, 32, 1)).phase_cycles[0] == 7


def test_attention_scales_with_windows_and_heads():
    one = analytic_cycles(WindowAttention(1, 49, 32, 1))
    assert analytic_cycles(WindowAttention(64, 49, 96, 3)) == 64 * 3 * one


def test_attention_head_dim_limit():
    with pytest.raises(UnsupportedMappingError):
        plan_for(WindowAttention(1, 49, 160, 4))
    plan_for(WindowAttention(1, 49, 128, 4))


# Analytics and schedules agree -----------------------------------------------------

layers = st.one_of(
    st.builds(lambda h, w, c: Conv4x4(4 * h, 4 * w, 3, c),
              st.integers(1, 12), st.integers(1, 12), st.integers(1, 8)),
    st.builds(FullyConnected, st.integers(0, 60), st.integers(0, 200), st.integers(0, 40)),
    st.builds(lambda w, t, h, d: WindowAttention(w, t, h * d, h),
              st.integers(1, 3), st.integers(1, 30), st.integers(1, 3), st.integers(1, 32)),
)


@settings(max_examples=200, deadline=None)
@given(layers)
def test_analytic_equals_simulated(desc):
    sched = schedule_layer(desc)
    assert simulated_cycles(sched) == analytic_cycles(desc) == sched.plan.analytic_cycles
    plan = sched.plan
    assert plan.blocks_used <= CFG.num_blocks
    assert 0.0 <= plan.analytic_utilization <= 1.0


@pytest.mark.parametrize("desc", [
    FullyConnected(0, 96, 96), FullyConnected(7, 0, 96), FullyConnected(7, 96, 0),
])
def test_empty_extent_is_zero_cycles(desc):
    assert analytic_cycles(desc) == 0
    assert schedule_layer(desc).cycles == 0


# Utilization -----------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.integers(1, 20))
def test_aligned_fc_runs_at_full_utilization(g, t, c_out):
    desc = FullyConnected(7 * g, 48 * t, c_out)
    run = simulate_layer(desc)
    assert run.stats.utilization == 1.0


def test_qk_block_occupancy_two_thirds():
    plan = plan_for(WindowAttention(1, 49, 32, 1))
    assert plan.phase_blocks[0] / CFG.num_blocks == pytest.approx(2 / 3)
    sched = schedule_attention(WindowAttention(1, 49, 32, 1)).schedules[0]
    stats = PeArray(CFG).run(sched).stats
    assert stats.utilization == pytest.approx(2 / 3)


# Padding soundness -----------------------------------------------------------------


@pytest.mark.parametrize("desc", [
    FullyConnected(11, 50, 9),
    FullyConnected(3, 5, 2, activation="gelu"),
    Conv4x4(12, 20, 3, 5),
    WindowAttention(2, 10, 30, 3),
    WindowAttention(1, 5, 6, 2),
])
def test_ragged_tiles_stay_bit_exact(desc):
    tensors = random_tensors(desc, np.random.default_rng(0))
    run = simulate_layer(desc, tensors)
    assert run.oracle_ok, f"{run.mismatches} mismatches"


# FLOPs report ----------------------------------------------------------------------


def test_flops_single_conv():
    rep = flops_report([Conv4x4(224, 224, 3, 96)])
    assert rep.flops_share("conv") == 1.0
    assert rep.params_share("conv") == 1.0
    assert rep.flops["conv"] == 2 * 3136 * 96 * 48


def test_flops_shares_sum_to_one():
    rep = flops_report([Conv4x4(8, 8, 3, 4), FullyConnected(4, 8, 8),
                        WindowAttention(1, 4, 8, 2)])
    assert sum(rep.flops_share(k) for k in rep.flops) == pytest.approx(1.0)
    assert sum(rep.params_share(k) for k in rep.params) == pytest.approx(1.0)
    assert rep.params["attention"] == 0


def test_flops_report_rejects_empty():
    with pytest.raises(ValueError):
        flops_report([])


def test_stage1_block_attention_cycle_share():
    block = [
        FullyConnected(3136, 96, 288),
        WindowAttention(64, 49, 96, 3),
        FullyConnected(3136, 96, 96, residual=True, post_norm=True),
        FullyConnected(3136, 96, 384, activation="gelu"),
        FullyConnected(3136, 384, 96, residual=True, post_norm=True),
    ]
    cycles = [analytic_cycles(x) for x in block]
    share = cycles[1] / sum(cycles)
    assert share <= 0.03, f"attention takes {share:.2%} of a stage-1 block"
