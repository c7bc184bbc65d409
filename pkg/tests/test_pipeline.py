import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rarelex.corpus import BucketConfig, subsample
from rarelex.distill import distill_forward
from rarelex.pipeline import (
    PRESETS,
    ExperimentReport,
    RunConfig,
    StopDecision,
    Strategy,
    early_stop_check,
    parse_strategy,
    plan_budgets,
    preset,
    run,
)
from rarelex.synthlang import GenConfig, generate
from rarelex.toynmt import NatStudent, teacher_fit


class TestParse:
    def test_preset_stage_shapes(self):
        expected = {
            1: (("raw",),),
            2: (("kd",),),
            3: (("raw", "kd"),),
            4: (("raw",), ("kd",)),
            5: (("raw", "rkd", "kd"),),
            6: (("raw",), ("rkd", "kd")),
            7: (("raw",), ("rkd", "kd"), ("kd",)),
        }
        for k, stages in expected.items():
            assert parse_strategy(PRESETS[k]).stages == stages
            assert preset(k).stages == stages
            assert preset(k).name == f"#{k}"

    def test_render_round_trip_on_presets(self):
        for text in PRESETS.values():
            strat = parse_strategy(text)
            assert strat.render() == text
            assert parse_strategy(strat.render()) == strat

    def test_whitespace_tolerated(self):
        assert parse_strategy(" raw -> rkd + kd ").render() == "raw->rkd+kd"

    def test_unknown_atom_with_position(self):
        with pytest.raises(ValueError, match="unknown atom 'foo' at position 0"):
            parse_strategy("foo")
        with pytest.raises(ValueError, match="unknown atom 'fast' at position 5"):
            parse_strategy("raw->fast")

    def test_syntax_errors_with_position(self):
        with pytest.raises(ValueError, match="position 5: expected an atom"):
            parse_strategy("raw->")
        with pytest.raises(ValueError, match="position 0: expected an atom"):
            parse_strategy("")
        with pytest.raises(ValueError, match="position 3: expected '->' or '\\+'"):
            parse_strategy("raw&kd")
        with pytest.raises(ValueError, match="expected an atom"):
            parse_strategy("+kd")

    def test_strategy_validation(self):
        with pytest.raises(ValueError, match="at least one stage"):
            Strategy(())
        with pytest.raises(ValueError, match="unknown atom"):
            Strategy((("raw", "bogus"),))

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="preset must be one of"):
            preset(0)

    def test_atoms_set(self):
        assert preset(7).atoms() == {"raw", "rkd", "kd"}
        assert preset(1).atoms() == {"raw"}


class TestPlanBudgets:
    def test_three_stage_default_split(self):
        assert plan_budgets(70000, preset(7)) == (20000, 20000, 30000)
        assert plan_budgets(7, preset(7)) == (2, 2, 3)

    def test_custom_fractions(self):
        cfg = RunConfig(25000, fractions=(8 / 25, 8 / 25, 9 / 25))
        assert plan_budgets(25000, preset(7), cfg) == (8000, 8000, 9000)

    def test_one_and_two_stage_splits(self):
        assert plan_budgets(12345, preset(2)) == (12345,)
        assert plan_budgets(70000, preset(4)) == (20000, 50000)

    def test_too_few_steps(self):
        with pytest.raises(ValueError, match="at least one step"):
            plan_budgets(2, preset(7))

    def test_fraction_count_mismatch(self):
        cfg = RunConfig(100, fractions=(0.5, 0.5))
        with pytest.raises(ValueError, match="2 fractions for 3 stages"):
            plan_budgets(100, preset(7), cfg)

    def test_nonpositive_total(self):
        with pytest.raises(ValueError, match="positive step budget"):
            plan_budgets(0, preset(1))

    @given(total=st.integers(50, 10000), n_stages=st.integers(1, 4))
    def test_budgets_partition_the_total(self, total, n_stages):
        strat = parse_strategy("->".join(["raw"] * n_stages))
        budgets = plan_budgets(total, strat)
        assert sum(budgets) == total
        assert all(b >= 1 for b in budgets)


class TestEarlyStop:
    def test_fixed_step_never_stops(self):
        assert not early_stop_check([50.0] * 100, "fixed-step").stop

    def test_threshold_fires_at_ninety_percent(self):
        trace = [20.0, 26.0, 27.5]
        hits = [
            early_stop_check(trace[: k + 1], "bleu-threshold", reference=30.0).stop
            for k in range(3)
        ]
        assert hits == [False, False, True]
        decision = early_stop_check(trace, "bleu-threshold", reference=30.0)
        assert decision.value == 27.5

    def test_threshold_boundary_inclusive(self):
        assert early_stop_check([27.0], "bleu-threshold", reference=30.0).stop

    def test_patience_stops_near_the_max(self):
        trace = [10.0, 12.0, 18.0, 17.9, 17.8, 17.7, 17.6]
        first_stop = next(
            k
            for k in range(1, len(trace) + 1)
            if early_stop_check(trace[:k], "bleu-threshold", patience=3).stop
        )
        peak = trace.index(max(trace)) + 1
        assert peak < first_stop <= peak + 3

    def test_rising_trace_keeps_going(self):
        assert not early_stop_check([1.0, 2.0, 3.0], "bleu-threshold", patience=3).stop

    def test_needs_reference_or_patience(self):
        with pytest.raises(ValueError, match="reference score or a patience"):
            early_stop_check([1.0], "bleu-threshold")

    def test_empty_trace_and_bad_rule(self):
        assert not early_stop_check([], "bleu-threshold", reference=1.0).stop
        with pytest.raises(ValueError, match="stop rule"):
            early_stop_check([1.0], "bleu-thresh")


class TestRunConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="theta"):
            RunConfig(100, theta=1.5)
        with pytest.raises(ValueError, match="stop rule"):
            RunConfig(100, stop_rule="maybe")
        with pytest.raises(ValueError, match="sum to 1"):
            RunConfig(100, fractions=(0.5, 0.6))
        with pytest.raises(ValueError, match="positive step budget"):
            RunConfig(0)

    def test_cadence_default(self):
        assert RunConfig(2000).cadence == 40
        assert RunConfig(100).cadence == 10
        assert RunConfig(2000, eval_every=25).cadence == 25


@pytest.fixture(scope="module")
def world():
    sample = generate(GenConfig(vocab_size=120, n_pairs=600, seed=3))
    raw = sample.corpus
    val = subsample(raw, raw.pair_ids()[:60])
    teachers = {"s2t": teacher_fit(raw, "s2t"), "t2s": teacher_fit(raw, "t2s")}
    return raw, val, teachers


class TestRun:
    def test_single_stage_matches_plain_training(self, world):
        raw, _, teachers = world
        cfg = RunConfig(60, seed=5, link_subset=0)
        report = run(parse_strategy("kd"), raw, teachers, NatStudent(), cfg)
        kd = distill_forward(raw, teachers["s2t"])
        plain = NatStudent(seed=5).fit(kd, steps=60)
        assert report.executed_steps == 60
        hyp = plain.predict(raw.source_sentences())
        from rarelex.metrics import bleu

        assert report.metrics["bleu"] == bleu(hyp, raw.target_sentences()).score

    def test_stage_budgets_executed(self, world):
        raw, val, teachers = world
        cfg = RunConfig(210, eval_every=70, seed=1, validation=val, link_subset=0)
        report = run(preset(7), raw, teachers, NatStudent(), cfg)
        assert [r.steps_executed for r in report.stages] == [60, 60, 90]
        assert report.executed_steps == 210
        assert all(r.steps_planned == e for r, e in zip(report.stages, (60, 60, 90)))

    def test_early_stop_rolls_into_final_stage(self, world):
        raw, val, teachers = world
        cfg = RunConfig(
            210,
            eval_every=10,
            seed=1,
            validation=val,
            stop_rule="bleu-threshold",
            reference_score=0.01,
            link_subset=0,
        )
        report = run(preset(4), raw, teachers, NatStudent(), cfg)
        first, last = report.stages
        assert first.stop is not None and first.stop.stop
        assert first.steps_executed < first.steps_planned
        assert last.steps_executed == last.steps_planned + (
            first.steps_planned - first.steps_executed
        )
        assert report.executed_steps == 210
        assert last.stop is None

    def test_threshold_rule_ignored_without_leading_raw_stage(self, world):
        raw, val, teachers = world
        cfg = RunConfig(
            40,
            eval_every=10,
            seed=1,
            validation=val,
            stop_rule="bleu-threshold",
            reference_score=0.001,
            link_subset=0,
        )
        report = run(parse_strategy("kd"), raw, teachers, NatStudent(), cfg)
        assert report.stages[0].steps_executed == 40
        assert report.stages[0].stop is None

    def test_threshold_rule_requires_validation(self, world):
        raw, _, teachers = world
        cfg = RunConfig(40, stop_rule="bleu-threshold", reference_score=1.0, link_subset=0)
        with pytest.raises(ValueError, match="needs a validation set"):
            run(preset(4), raw, teachers, NatStudent(), cfg)

    def test_missing_teacher(self, world):
        raw, _, teachers = world
        cfg = RunConfig(40, link_subset=0)
        with pytest.raises(ValueError, match="atom 'rkd' needs a t2s teacher"):
            run(preset(6), raw, {"s2t": teachers["s2t"]}, NatStudent(), cfg)

    def test_mislabeled_teacher(self, world):
        raw, _, teachers = world
        cfg = RunConfig(40, link_subset=0)
        swapped = {"s2t": teachers["t2s"]}
        with pytest.raises(ValueError, match="reports direction 't2s'"):
            run(parse_strategy("kd"), raw, swapped, NatStudent(), cfg)

    def test_raw_provenance_required(self, world):
        raw, _, teachers = world
        kd = distill_forward(raw, teachers["s2t"])
        cfg = RunConfig(40, link_subset=0)
        with pytest.raises(ValueError, match="expected a raw corpus"):
            run(preset(1), kd, teachers, NatStudent(), cfg)

    def test_deterministic_report_json(self, world):
        raw, val, teachers = world
        cfg = RunConfig(60, eval_every=30, seed=2, validation=val, link_subset=0)
        a = run(preset(4), raw, teachers, NatStudent(), cfg)
        b = run(preset(4), raw, teachers, NatStudent(), cfg)
        assert a.canonical() == b.canonical()
        c = run(preset(4), raw, teachers, NatStudent(), RunConfig(60, eval_every=30, seed=3, validation=val, link_subset=0))
        assert c.config_digest != a.config_digest

    def test_evaluation_cadence_does_not_disturb_training(self, world):
        raw, val, teachers = world
        base = dict(seed=4, validation=val, link_subset=0)
        a = run(preset(4), raw, teachers, NatStudent(), RunConfig(70, eval_every=10, **base))
        b = run(preset(4), raw, teachers, NatStudent(), RunConfig(70, eval_every=35, **base))
        assert a.metrics == b.metrics

    def test_links_table_covers_used_atoms(self, world):
        raw, _, teachers = world
        buckets = BucketConfig(low_below=2e-3, high_at_least=1e-2)
        cfg = RunConfig(40, seed=1, buckets=buckets, link_subset=150)
        report = run(preset(4), raw, teachers, NatStudent(), cfg)
        assert report.links is not None
        assert {r.tag for r in report.links.reports} == {"raw", "kd"}

    def test_report_round_trips_through_json(self, world):
        raw, val, teachers = world
        cfg = RunConfig(40, eval_every=20, seed=1, validation=val, link_subset=0)
        report = run(preset(1), raw, teachers, NatStudent(), cfg)
        assert json.loads(report.canonical()) == report.to_json()
        text = report.render()
        assert text.splitlines()[0].startswith("strategy raw")

    def test_divergence_names_the_stage(self, world):
        raw, _, teachers = world
        cfg = RunConfig(40, link_subset=0)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(ValueError, match=r"stage 1 \(raw\): non-finite loss"):
                run(preset(1), raw, teachers, NatStudent(learning_rate=1e160), cfg)

    def test_executed_total_enforced(self):
        with pytest.raises(ValueError, match="executed 5 steps but 6"):
            ExperimentReport("raw", "", 0, 6, 5, "x", (), {}, None)

    def test_stop_decision_serializes(self):
        d = StopDecision(True, "done", 1.5)
        assert d.to_json() == {"stop": True, "reason": "done", "value": 1.5}
