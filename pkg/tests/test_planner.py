from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmlora.errors import ContractError, PlanError
from ssmlora.planner import (
    QKV,
    QUERY,
    VALUE,
    InsertionPlan,
    ModelDims,
    PlanEntry,
    alternating_ratio,
    budget_report,
    count_params,
    plan_alternating,
    plan_by_name,
    plan_dense,
    plan_skip_one,
)

ROBERTA_LARGE = ModelDims(L=24, d=1024)
# (r, dense LoRA on Q+V, alternating SSMLoRA), RoBERTa-large dims
BUDGET_TABLE = [
    (1, 98_304, 49_200),
    (2, 196_608, 98_496),
    (4, 393_216, 197_376),
    (8, 786_432, 396_288),
    (16, 1_572_864, 798_720),
]


def test_alternating_layout():
    plan = plan_alternating(4)
    assert [(e.layer, e.kind) for e in plan] == [(0, QUERY), (1, VALUE), (2, QUERY), (3, VALUE)]
    assert plan.chains() == {QUERY: [0, 2], VALUE: [1, 3]}


def test_alternating_l24_counts():
    plan = plan_alternating(24)
    assert len(plan) == 24
    assert {k: len(v) for k, v in plan.chains().items()} == {QUERY: 12, VALUE: 12}
    assert plan.layers() == list(range(24))


def test_skip_one_layout():
    assert [e.layer for e in plan_skip_one(12)] == [0, 2, 4, 6, 8, 10]
    assert all(e.kind == QKV for e in plan_skip_one(12))
    assert len(plan_skip_one(1)) == 1


def test_dense_layout():
    assert len(plan_dense(24, (QUERY, VALUE))) == 48
    assert len(plan_dense(5, ())) == 0
    assert len(plan_dense(1, (QUERY,))) == 1


def test_plan_by_name_and_unknown():
    assert plan_by_name("dense-lora", 3).methods() == ["lora"]
    assert plan_by_name("dense-ssmlora", 3).methods() == ["ssmlora"]
    assert len(plan_by_name("none", 3)) == 0
    with pytest.raises(PlanError):
        plan_by_name("every-third", 3)


def test_duplicate_slot_rejected():
    with pytest.raises(PlanError):
        InsertionPlan((PlanEntry(0, QUERY, "lora"), PlanEntry(0, QUERY, "ssmlora")))
    with pytest.raises(PlanError):
        plan_alternating(2) | plan_dense(2, (QUERY,))


def test_bad_inputs():
    with pytest.raises(ContractError):
        plan_alternating(0)
    with pytest.raises(ContractError):
        ModelDims(L=0, d=8)
    with pytest.raises(PlanError):
        PlanEntry(0, QUERY, "prefix")
    with pytest.raises(ContractError):
        count_params(plan_alternating(2), ModelDims(2, 8), 0)


def test_records_roundtrip():
    plan = plan_alternating(5)
    assert InsertionPlan.from_records(plan.to_records(), plan.name) == plan


# counting -----------------------------------------------------------------------------

@pytest.mark.parametrize("r,lora,ssm", BUDGET_TABLE)
def test_budget_table_pairs(r, lora, ssm):
    assert count_params(plan_dense(24, (QUERY, VALUE)), ROBERTA_LARGE, r) == lora
    assert count_params(plan_alternating(24), ROBERTA_LARGE, r) == ssm


def test_alternating_closed_form():
    assert count_params(plan_alternating(24), ROBERTA_LARGE, 8) == 24 * (2 * 1024 * 8 + 2 * 64)
    assert count_params(plan_alternating(24), ROBERTA_LARGE, 1) == 24 * (2 * 1024 + 2)


def test_empty_plan_counts_zero():
    assert count_params(InsertionPlan(), ROBERTA_LARGE, 8) == 0


def test_method_override():
    plan = plan_alternating(24)
    assert count_params(plan, ROBERTA_LARGE, 8, method="lora") == 24 * 2 * 1024 * 8


def test_fused_projection_count():
    gpt2 = ModelDims(L=12, d=768, fused_qkv_out=2304)
    assert count_params(plan_skip_one(12), gpt2, 1) == 6 * (768 + 2304 + 2)
    assert count_params(plan_dense(12, (QKV,)), gpt2, 1) == 12 * (768 + 2304)


def test_budget_report_ratios():
    rep = budget_report([plan_by_name("dense-lora", 24), plan_alternating(24)], ROBERTA_LARGE, [8])
    row = rep.get("alternating", 8)
    assert row.ratio == Fraction(129, 256) and float(row.ratio) == 0.50390625
    assert rep.get("dense-lora", 8).ratio == 1
    with pytest.raises(KeyError):
        rep.get("alternating", 3)
    with pytest.raises(ContractError):
        budget_report([], ROBERTA_LARGE, [8])


def test_ratio_is_one_when_rank_equals_width():
    dims = ModelDims(L=6, d=16)
    rep = budget_report([plan_dense(6, (QUERY, VALUE)), plan_alternating(6)], dims, [16])
    assert rep.get("alternating", 16).ratio == 1


# properties ---------------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(L=st.integers(1, 64), d=st.integers(1, 4096), r=st.integers(1, 64))
def test_ratio_equals_closed_form(L, d, r):
    dims = ModelDims(L=L if L % 2 == 0 else L + 1, d=d)
    ssm = count_params(plan_alternating(dims.L), dims, r)
    lora = count_params(plan_dense(dims.L, (QUERY, VALUE)), dims, r)
    assert Fraction(ssm, lora) == alternating_ratio(d, r) == Fraction(1, 2) + Fraction(r, 2 * d)
    if d > r:
        assert ssm < lora


def test_ratio_tends_to_half():
    assert [float(alternating_ratio(d, 8)) - 0.5 for d in (64, 1024, 2 ** 20)] == sorted(
        [float(alternating_ratio(d, 8)) - 0.5 for d in (64, 1024, 2 ** 20)], reverse=True)
    assert alternating_ratio(2 ** 30, 1) - Fraction(1, 2) < Fraction(1, 10 ** 9)


@settings(max_examples=100, deadline=None)
@given(L=st.integers(1, 40), d=st.integers(1, 256), r=st.integers(1, 16), split=st.integers(0, 40))
def test_counting_is_plan_linear(L, d, r, split):
    dims = ModelDims(L=L, d=d, fused_qkv_out=3 * d)
    entries = plan_alternating(L).entries + plan_skip_one(L).entries
    a, b = InsertionPlan(entries[:split]), InsertionPlan(entries[split:])
    assert count_params(a | b, dims, r) == count_params(a, dims, r) + count_params(b, dims, r)


@pytest.mark.parametrize("L", range(1, 129))
def test_pattern_invariants(L):
    alt = plan_alternating(L)
    kinds = {e.layer: e.kind for e in alt}
    assert sorted(kinds) == list(range(L))
    assert all(kinds[l] != kinds[l + 1] for l in range(L - 1))
    skip = [e.layer for e in plan_skip_one(L)]
    assert len(skip) in (L // 2, (L + 1) // 2)
    assert all(b - a >= 2 for a, b in zip(skip, skip[1:]))
