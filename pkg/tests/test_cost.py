import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latencut.cost import (
    analytic_flops,
    closed_form_pw,
    discrete_speedup,
    estimate_speedup,
    instrumented_count,
    processed_words,
    speedup_report,
)
from latencut.model_io import BERT_BASE, Model, ModelConfig
from latencut.runner import forward_baseline, forward_pruned
from latencut.schedule import RetentionPlan, make_schedule, retention_plan

BERT = ModelConfig(**BERT_BASE)
profiles = st.lists(st.floats(0.05, 1.0), min_size=1, max_size=24)


def test_table_shares_paper_variant():
    r = analytic_flops(BERT, 512, "paper")
    assert r.shares["attention_self"] * 100 == pytest.approx(25.1, abs=0.05)
    assert r.shares["feed_forward"] * 100 == pytest.approx(74.9, abs=0.05)
    assert r.shares["embedding"] * 100 == pytest.approx(0.003, abs=0.001)
    assert r.shares["classifier"] * 100 == pytest.approx(0.0013, abs=0.0005)
    assert sum(r.shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_both_attention_terms_reported():
    r = analytic_flops(BERT, 512, "corrected")
    T, L, H = 512, 12, 768
    assert r.attention_self_paper == 6 * L * T * H**2 + 2 * H * T * L**2
    assert r.attention_self_corrected == 6 * L * T * H**2 + 4 * L * T**2 * H
    assert r.flops["attention_self"] == r.attention_self_corrected


def test_zero_length_zeroes_t_terms():
    r = analytic_flops(BERT, 0)
    for k in ("embedding", "attention_self", "attention_output", "intermediate", "output"):
        assert r.flops[k] == 0
    assert r.flops["pooler"] == 2 * 768**2


def test_unit_evaluation_gives_coefficients():
    cfg = ModelConfig(num_layers=1, hidden_size=1, num_heads=1, max_seq=1, vocab_size=1,
                      num_labels=1, intermediate_size=4)
    r = analytic_flops(cfg, 1, "paper")
    assert r.flops == {"embedding": 7, "attention_self": 8, "attention_output": 2,
                       "intermediate": 8, "output": 8, "pooler": 2, "classifier_output": 2}


def test_report_exports(tmp_path):
    r = analytic_flops(BERT, 128).with_plan(retention_plan([0.9] * 12, 128))
    r.save_json(tmp_path / "c.json")
    assert json.loads((tmp_path / "c.json").read_text())["k_speedup"] == pytest.approx(r.k_speedup)
    r.save_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "layer,sublayer,analytic_flops,share" and len(lines) == 8
    assert r.pw_total <= r.pw_baseline
    assert r.k_speedup == pytest.approx(r.pw_baseline / r.pw_total, abs=1e-9)


def test_processed_words_identity_and_hand_values():
    per, total = processed_words(RetentionPlan((64,) * 7))
    assert per == [64.0] * 6 and total == 64 * 6
    per, total = processed_words(RetentionPlan((512, 409)))
    assert per == [434.75] and total == 434.75


def test_closed_form_examples():
    assert closed_form_pw([1.0] * 12, 100, 12) == pytest.approx(1200)
    assert closed_form_pw([1.0, 0.5], 100) == pytest.approx(162.5)


def test_speedup_examples():
    assert estimate_speedup([1.0] * 7) == pytest.approx(1.0)
    assert estimate_speedup([1.0, 0.5]) == pytest.approx(8 / 6.5)
    assert estimate_speedup([1.0, 0.5]) == pytest.approx(1.2308, abs=1e-4)


def test_worked_example_report():
    rep = speedup_report([0.8] * 12, 512)
    assert 3.0 <= rep["formula_speedup"] <= 3.1
    assert rep["discrete_speedup"] == pytest.approx(512 * 12 / processed_words(
        retention_plan([0.8] * 12, 512))[1])
    assert rep["difference"] == pytest.approx(rep["discrete_speedup"] - rep["formula_speedup"])


@settings(max_examples=300, deadline=None)
@given(profiles, st.integers(1, 4096))
def test_speedup_times_pw_identity(alpha, t):
    L = len(alpha)
    assert estimate_speedup(alpha) * closed_form_pw(alpha, t) == pytest.approx(t * L, rel=1e-9)


@settings(max_examples=300, deadline=None)
@given(profiles)
def test_speedup_at_least_one(alpha):
    k = estimate_speedup(alpha)
    assert k >= 1 - 1e-12
    if all(a == 1.0 for a in alpha):
        assert k == pytest.approx(1.0)
    else:
        assert k > 1.0


@settings(max_examples=300, deadline=None)
@given(profiles, st.integers(0, 23), st.floats(0.01, 1.0))
def test_lowering_an_entry_never_slows_down(alpha, idx, factor):
    idx %= len(alpha)
    lowered = list(alpha)
    lowered[idx] *= factor
    assert estimate_speedup(lowered) >= estimate_speedup(alpha) - 1e-12


@settings(max_examples=300, deadline=None)
@given(profiles, st.integers(1, 4096))
def test_floor_gap_bound(alpha, t):
    """Floors only lose word-vectors; each layer's loss is < 1 and later layers carry it."""
    plan = retention_plan(alpha, t)
    if min(plan.t) == 1 and t * float(np.prod(alpha)) < 1:
        return  # the max(1, .) clamp is outside the continuous model
    L = len(alpha)
    gap = closed_form_pw(alpha, t) - processed_words(plan)[1]
    if min(plan.t) > 1:
        assert -1e-9 <= gap
    assert abs(gap) <= L * (L + 1) / 2


def test_discrete_speedup_identity_schedule():
    assert discrete_speedup([1.0] * 5, 77) == 1.0


def test_instrumented_count_absent_without_trace():
    assert instrumented_count(None) is None


def test_instrumented_matches_corrected_formula_small():
    cfg = ModelConfig(num_layers=2, hidden_size=32, num_heads=4, max_seq=24, vocab_size=60, num_labels=3)
    model = Model.random(cfg, 0)
    T = 24
    run = forward_baseline(model, list(range(T)), count_flops=True)
    analytic = analytic_flops(cfg, T, "corrected")
    encoder_ln = 2 * 7 * T * cfg.hidden_size * cfg.num_layers
    assert run.flops == analytic.total + encoder_ln
    assert run.flops == pytest.approx(analytic.total, rel=0.10)


def test_pruned_flop_ratio_tracks_pw_ratio():
    cfg = ModelConfig(num_layers=4, hidden_size=128, num_heads=4, max_seq=128, vocab_size=100)
    model = Model.random(cfg, 2)
    ids = np.random.default_rng(0).integers(0, 100, 128)
    sched = make_schedule([0.8] * 4, 1.0)
    base = forward_baseline(model, ids, count_flops=True)
    pruned = forward_pruned(model, ids, sched, count_flops=True)
    predicted = pruned.pw_baseline / pruned.pw_total
    assert base.flops / pruned.flops == pytest.approx(predicted, rel=0.10)
