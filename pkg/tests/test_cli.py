import json

import pytest

from rarelex.cli import main


def invoke(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture()
def toy(tmp_path, capsys):
    prefix = str(tmp_path / "toy")
    gold = str(tmp_path / "gold.json")
    code, _, _ = invoke(
        capsys, "synth", "--out", prefix, "--pairs", "250", "--vocab", "90",
        "--seed", "2", "--lexicon", gold,
    )
    assert code == 0
    return tmp_path, prefix, gold


class TestSynth:
    def test_writes_both_sides(self, toy, tmp_path):
        _, prefix, _ = toy
        src = (tmp_path / "toy.src").read_text().splitlines()
        tgt = (tmp_path / "toy.tgt").read_text().splitlines()
        assert len(src) == len(tgt) == 250

    def test_seed_changes_output(self, tmp_path, capsys):
        metas = []
        for seed in ("1", "1", "3"):
            out = str(tmp_path / f"c{len(metas)}")
            code, stdout, _ = invoke(
                capsys, "synth", "--out", out, "--pairs", "50", "--vocab", "40",
                "--seed", seed, "--json",
            )
            assert code == 0
            metas.append(json.loads(stdout))
        assert metas[0]["digest"] == metas[1]["digest"]
        assert metas[0]["digest"] != metas[2]["digest"]


class TestStats:
    def test_bucket_shares_sum_to_one(self, toy, capsys):
        _, prefix, _ = toy
        code, stdout, _ = invoke(
            capsys, "stats", "--corpus", prefix, "--side", "target",
            "--low", "0.002", "--high", "0.01", "--json",
        )
        assert code == 0
        report = json.loads(stdout)
        shares = [report["buckets"][b]["share"] for b in ("high", "medium", "low")]
        assert sum(shares) == pytest.approx(1.0)
        types = sum(report["buckets"][b]["types"] for b in ("high", "medium", "low"))
        assert types == report["types"]


class TestAlign:
    def test_writes_pharaoh_lines(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        out = str(tmp_path / "links.txt")
        code, stdout, _ = invoke(
            capsys, "align", "--corpus", prefix, "--out", out, "--json",
        )
        assert code == 0
        report = json.loads(stdout)
        assert report["pairs"] == 250
        assert len((tmp_path / "links.txt").read_text().splitlines()) == 250
        assert report["loglik"] < 0


class TestDistill:
    def test_forward_keeps_source_bytes(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        out = str(tmp_path / "kd")
        code, _, _ = invoke(capsys, "distill", "--raw", prefix, "--out", out)
        assert code == 0
        assert (tmp_path / "kd.src").read_text() == (tmp_path / "toy.src").read_text()
        assert (tmp_path / "kd.tgt").read_text() != (tmp_path / "toy.tgt").read_text()
        manifest = json.loads((tmp_path / "kd.manifest.json").read_text())
        assert manifest["provenance"] == "kd"

    def test_reverse_keeps_target_bytes(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        out = str(tmp_path / "rkd")
        code, _, _ = invoke(
            capsys, "distill", "--raw", prefix, "--mode", "reverse", "--out", out,
        )
        assert code == 0
        assert (tmp_path / "rkd.tgt").read_text() == (tmp_path / "toy.tgt").read_text()

    def test_both_doubles_the_pairs(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        out = str(tmp_path / "bi")
        code, _, _ = invoke(
            capsys, "distill", "--raw", prefix, "--mode", "both", "--out", out,
        )
        assert code == 0
        assert len((tmp_path / "bi.src").read_text().splitlines()) == 500

    def test_lexicon_teacher(self, toy, tmp_path, capsys):
        _, prefix, gold = toy
        out = str(tmp_path / "kdlex")
        code, _, _ = invoke(
            capsys, "distill", "--raw", prefix, "--teacher", "lexicon",
            "--lexicon", gold, "--out", out,
        )
        assert code == 0

    def test_lexicon_teacher_needs_lexicon_flag(self, toy, capsys, tmp_path):
        _, prefix, _ = toy
        code, _, err = invoke(
            capsys, "distill", "--raw", prefix, "--teacher", "lexicon",
            "--out", str(tmp_path / "x"),
        )
        assert code == 2
        assert "usage error" in err


class TestLfw:
    def test_three_dataset_table(self, toy, tmp_path, capsys):
        _, prefix, gold = toy
        for mode, name in (("forward", "kd"), ("reverse", "rkd")):
            assert invoke(
                capsys, "distill", "--raw", prefix, "--mode", mode,
                "--out", str(tmp_path / name),
            )[0] == 0
        ids = str(tmp_path / "ids.json")
        with open(ids, "w") as fh:
            json.dump(list(range(0, 250, 2)), fh)
        out = str(tmp_path / "table.json")
        code, stdout, _ = invoke(
            capsys, "lfw", "--raw", prefix, "--kd", str(tmp_path / "kd"),
            "--rkd", str(tmp_path / "rkd"), "--subset", ids, "--judge", gold,
            "--low", "0.002", "--high", "0.01", "--out", out, "--json",
        )
        assert code == 0
        table = json.loads(stdout)
        rows = {(r["tag"], r["direction"]) for r in table["reports"]}
        assert rows == {(t, d) for t in ("raw", "kd", "rkd") for d in ("s2t", "t2s")}
        assert json.loads((tmp_path / "table.json").read_text()) == table

    def test_bad_subset_payload(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            json.dump({"ids": [1]}, fh)
        code, _, err = invoke(
            capsys, "lfw", "--raw", prefix, "--subset", bad,
        )
        assert code == 1
        assert "JSON list of pair ids" in err


class TestTrainEval:
    def test_train_then_eval(self, toy, tmp_path, capsys):
        _, prefix, gold = toy
        ckpt = str(tmp_path / "student.npz")
        trace = str(tmp_path / "trace.jsonl")
        code, stdout, _ = invoke(
            capsys, "train", "--corpus", prefix, "--steps", "40", "--seed", "1",
            "--out", ckpt, "--trace", trace, "--json",
        )
        assert code == 0
        assert json.loads(stdout)["steps"] == 40
        assert len((tmp_path / "trace.jsonl").read_text().splitlines()) == 40
        code, stdout, _ = invoke(
            capsys, "eval", "--student", ckpt, "--corpus", prefix,
            "--judge", gold, "--low", "0.002", "--high", "0.01", "--json",
        )
        assert code == 0
        metrics = json.loads(stdout)
        assert set(metrics) == {"bleu", "alf_low", "lexacc", "lfw_output_ratio"}


class TestRunStrategy:
    def test_plan_only_table8_budgets(self, capsys):
        code, stdout, _ = invoke(
            capsys, "run-strategy", "--preset", "7", "--total-steps", "70000",
            "--plan-only", "--json",
        )
        assert code == 0
        plan = json.loads(stdout)
        assert plan["budgets"] == [20000, 20000, 30000]
        assert plan["strategy"] == "raw->rkd+kd->kd"

    def test_raw_required_without_plan_only(self, capsys):
        code, _, err = invoke(
            capsys, "run-strategy", "--preset", "1", "--total-steps", "100",
        )
        assert code == 2
        assert "usage error" in err

    def test_full_run_byte_identical_reports(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        args = (
            "run-strategy", "--preset", "4", "--raw", prefix, "--total-steps", "60",
            "--seed", "3", "--link-subset", "0", "--eval-every", "30",
        )
        out_a, out_b = str(tmp_path / "a.json"), str(tmp_path / "b.json")
        assert invoke(capsys, *args, "--out", out_a)[0] == 0
        assert invoke(capsys, *args, "--out", out_b)[0] == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_expression_flag(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        code, stdout, _ = invoke(
            capsys, "run-strategy", "--strategy", "raw", "--raw", prefix,
            "--total-steps", "30", "--link-subset", "0", "--json",
        )
        assert code == 0
        assert json.loads(stdout)["strategy"] == "raw"

    def test_preset_and_strategy_conflict(self, capsys):
        code, _, _ = invoke(
            capsys, "run-strategy", "--preset", "1", "--strategy", "raw",
            "--total-steps", "10",
        )
        assert code == 2


class TestReport:
    def test_renders_saved_report(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        out = str(tmp_path / "rep.json")
        assert invoke(
            capsys, "run-strategy", "--preset", "4", "--raw", prefix,
            "--total-steps", "60", "--link-subset", "60", "--out", out,
            "--low", "0.002", "--high", "0.01",
        )[0] == 0
        code, stdout, _ = invoke(capsys, "report", "--input", out)
        assert code == 0
        assert stdout.startswith("strategy raw->kd")
        assert "low-frequency links:" in stdout


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        code, _, _ = invoke(capsys, "frobnicate")
        assert code == 2

    def test_missing_file_is_domain_error(self, tmp_path, capsys):
        code, _, err = invoke(
            capsys, "stats", "--corpus", str(tmp_path / "absent"),
        )
        assert code == 1
        assert err.startswith("error:")

    def test_help_exits_zero(self, capsys):
        assert invoke(capsys, "--help")[0] == 0

    def test_failed_command_leaves_no_output_file(self, toy, tmp_path, capsys):
        _, prefix, _ = toy
        bad = str(tmp_path / "bad.json")
        with open(bad, "w") as fh:
            json.dump([999999], fh)
        out = tmp_path / "never.json"
        code, _, _ = invoke(
            capsys, "lfw", "--raw", prefix, "--subset", bad, "--out", str(out),
        )
        assert code == 1
        assert not out.exists()
