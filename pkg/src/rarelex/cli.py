"""Command-line surface: batch workflows over file corpora with JSON reports.

Corpora live in paired token files named PREFIX.src and PREFIX.tgt, one
sentence per line. Every command accepts --json to print a machine-readable
report on stdout; file outputs are written atomically. Exit codes: 0 success,
1 domain error (bad data, missing file), 2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .align import AlignConfig, em_train, viterbi_align, write_pharaoh
from .corpus import (
    Bucket,
    BucketConfig,
    ParallelCorpus,
    build_freq_profile,
    ingest,
    write_corpus,
)
from .distill import (
    FileTranslator,
    build_bidirectional,
    distill_forward,
    distill_reverse,
    manifest,
)
from .lfwlinks import LinkJudge, compare_datasets
from .pipeline import (
    RunConfig,
    evaluate_student,
    parse_strategy,
    plan_budgets,
    preset,
    run,
)
from .synthlang import generate, read_lexicon, standard_config, write_lexicon
from .toynmt import LexicalTeacher, NatStudent, teacher_fit
from .util import atomic_write_json, canonical_json


class UsageError(Exception):
    """Invalid flag combination detected after argparse."""


def load_corpus(prefix: str, provenance: str = "raw") -> ParallelCorpus:
    return ingest(f"{prefix}.src", f"{prefix}.tgt", provenance)


def save_corpus(corpus: ParallelCorpus, prefix: str) -> None:
    write_corpus(corpus, f"{prefix}.src", f"{prefix}.tgt")


def judge_from(spec: str | None) -> LinkJudge:
    """accept-all, or a path to a gold lexicon / plain reference lexicon."""
    if spec is None or spec == "accept-all":
        return LinkJudge.accept_all()
    with open(spec, encoding="utf-8") as fh:
        obj = json.load(fh)
    if isinstance(obj, dict) and "entries" in obj:
        return LinkJudge.from_lexicon(read_lexicon(spec))
    return LinkJudge.from_file(spec)


def buckets_from(args: argparse.Namespace) -> BucketConfig | None:
    if args.low is None and args.high is None:
        return None
    cfg = BucketConfig()
    return BucketConfig(
        low_below=args.low if args.low is not None else cfg.low_below,
        high_at_least=args.high if args.high is not None else cfg.high_at_least,
    )


def align_config_from(args: argparse.Namespace) -> AlignConfig | None:
    fields = {}
    if getattr(args, "iterations", None) is not None:
        fields["iterations"] = args.iterations
    if getattr(args, "null_mass", None) is not None:
        fields["null_mass"] = args.null_mass
    if getattr(args, "tension", None) is not None:
        fields["tension"] = args.tension
    return AlignConfig(**fields) if fields else None


def emit(args: argparse.Namespace, obj, text: str | None = None) -> None:
    if args.json:
        print(canonical_json(obj))
    elif text is not None:
        print(text)


def cmd_synth(args: argparse.Namespace) -> int:
    config = standard_config(args.seed, args.pairs)
    if args.vocab is not None:
        config = dataclasses.replace(config, vocab_size=args.vocab)
    sample = generate(config)
    save_corpus(sample.corpus, args.out)
    if args.lexicon:
        write_lexicon(sample.lexicon, args.lexicon)
    meta = sample.corpus.metadata()
    meta["generator"] = dataclasses.asdict(config)
    emit(args, meta, f"wrote {len(sample.corpus)} pairs to {args.out}.src/.tgt")
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    profile = build_freq_profile(corpus, args.side, buckets_from(args))
    counts = profile.vocab.counts
    total = sum(counts)
    buckets = {}
    for bucket in (Bucket.HIGH, Bucket.MEDIUM, Bucket.LOW):
        mask = profile.mask(bucket)
        occ = int(sum(c for c, m in zip(counts, mask) if m))
        buckets[bucket.label] = {
            "types": int(mask.sum()),
            "occurrences": occ,
            "share": occ / total,
        }
    report = {
        "side": args.side,
        "types": len(profile.vocab),
        "tokens": total,
        "pairs": len(corpus),
        "buckets": buckets,
        "bucket_config": profile.config.to_json(),
    }
    lines = [f"{args.side}: {report['types']} types, {total} tokens, {len(corpus)} pairs"]
    for label, row in buckets.items():
        lines.append(
            f"  {label:6s} {row['types']:6d} types  {row['occurrences']:8d} occ  {100 * row['share']:6.2f}%"
        )
    emit(args, report, "\n".join(lines))
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    config = align_config_from(args)
    table = em_train(corpus, args.direction, config)
    links = viterbi_align(table, corpus, config)
    write_pharaoh(links, args.out)
    report = {
        "direction": args.direction,
        "pairs": len(corpus),
        "links": sum(len(l) for l in links),
        "loglik": table.loglik_trace[-1] if table.loglik_trace else None,
        "out": args.out,
    }
    emit(args, report, f"aligned {report['pairs']} pairs, {report['links']} links -> {args.out}")
    return 0


def cmd_lfw(args: argparse.Namespace) -> int:
    datasets = [("raw", load_corpus(args.raw, "raw"))]
    if args.kd:
        datasets.append(("kd", load_corpus(args.kd, "kd")))
    if args.rkd:
        datasets.append(("rkd", load_corpus(args.rkd, "rkd")))
    with open(args.subset, encoding="utf-8") as fh:
        subset = json.load(fh)
    if not isinstance(subset, list) or not all(isinstance(i, int) for i in subset):
        raise ValueError(f"{args.subset} must hold a JSON list of pair ids")
    table = compare_datasets(
        datasets, subset, judge_from(args.judge), align_config_from(args), buckets_from(args)
    )
    if args.out:
        atomic_write_json(args.out, table.to_json())
    emit(args, table.to_json(), table.render())
    return 0


def cmd_distill(args: argparse.Namespace) -> int:
    raw = load_corpus(args.raw, "raw")
    directions = {"forward": ("s2t",), "reverse": ("t2s",), "both": ("s2t", "t2s")}[args.mode]
    teachers = {}
    for direction in directions:
        if args.teacher == "em":
            teachers[direction] = teacher_fit(raw, direction, align_config_from(args))
        elif args.teacher == "lexicon":
            if not args.lexicon:
                raise UsageError("--teacher lexicon needs --lexicon")
            teachers[direction] = LexicalTeacher.from_lexicon(read_lexicon(args.lexicon), direction)
        else:
            if not args.translations:
                raise UsageError("--teacher file needs --translations")
            teachers[direction] = FileTranslator(args.translations, direction)
    if args.mode == "forward":
        distilled = distill_forward(raw, teachers["s2t"])
        teacher = teachers["s2t"]
    elif args.mode == "reverse":
        distilled = distill_reverse(raw, teachers["t2s"])
        teacher = teachers["t2s"]
    else:
        distilled = build_bidirectional(raw, teachers["s2t"], teachers["t2s"])
        teacher = teachers["s2t"]
    save_corpus(distilled, args.out)
    info = manifest(distilled, teacher, raw)
    atomic_write_json(f"{args.out}.manifest.json", info)
    emit(args, info, f"wrote {len(distilled)} pairs to {args.out}.src/.tgt")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus, args.provenance)
    student = NatStudent(
        dim=args.dim,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    student.fit(corpus, steps=args.steps)
    student.save(args.out)
    if args.trace:
        student.write_trace(args.trace)
    report = {
        "steps": student.step_,
        "final_loss": student.trace_[-1]["loss"] if student.trace_ else None,
        "config_digest": student.config_digest(),
        "out": args.out,
    }
    emit(args, report, f"trained {report['steps']} steps, final loss {report['final_loss']}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    student = NatStudent.load(args.student)
    corpus = load_corpus(args.corpus)
    raw = load_corpus(args.raw) if args.raw else corpus
    metrics = evaluate_student(
        student, corpus, raw, judge_from(args.judge), buckets_from(args)
    )
    if args.out:
        atomic_write_json(args.out, metrics)
    lines = [f"{key}: {metrics[key]}" for key in sorted(metrics)]
    emit(args, metrics, "\n".join(lines))
    return 0


def cmd_run_strategy(args: argparse.Namespace) -> int:
    strategy = preset(args.preset) if args.preset is not None else parse_strategy(args.strategy)
    fractions = None
    if args.fractions:
        fractions = tuple(float(x) for x in args.fractions.split(","))
    validation = load_corpus(args.validation) if args.validation else None
    config = RunConfig(
        total_steps=args.total_steps,
        fractions=fractions,
        stop_rule=args.stop_rule,
        theta=args.theta,
        reference_score=args.reference,
        patience=args.patience,
        eval_every=args.eval_every,
        seed=args.seed,
        validation=validation,
        buckets=buckets_from(args),
        align=align_config_from(args),
        judge=judge_from(args.judge) if args.judge else None,
        link_subset=args.link_subset,
    )
    if args.plan_only:
        budgets = plan_budgets(args.total_steps, strategy, config)
        obj = {
            "strategy": strategy.render(),
            "name": strategy.name,
            "budgets": list(budgets),
        }
        emit(args, obj, f"{strategy.render()}: budgets {' '.join(str(b) for b in budgets)}")
        return 0
    if not args.raw:
        raise UsageError("--raw is required unless --plan-only is given")
    raw = load_corpus(args.raw, "raw")
    teachers = {}
    atoms = strategy.atoms()
    if "kd" in atoms:
        teachers["s2t"] = teacher_fit(raw, "s2t", config.align)
    if "rkd" in atoms:
        teachers["t2s"] = teacher_fit(raw, "t2s", config.align)
    student = NatStudent(dim=args.dim, learning_rate=args.lr, batch_size=args.batch_size)
    report = run(strategy, raw, teachers, student, config)
    if args.out:
        atomic_write_json(args.out, report.to_json())
    emit(args, report.to_json(), report.render())
    return 0


def _render_report_dict(obj: dict) -> str:
    label = f" ({obj['name']})" if obj.get("name") else ""
    lines = [
        f"strategy {obj['strategy']}{label}  seed {obj['seed']}  steps {obj['total_steps']}"
    ]
    for i, stage in enumerate(obj.get("stages", []), 1):
        note = ""
        stop = stage.get("stop")
        if stop and stop.get("stop"):
            note = f"  [stopped: {stop['reason']}]"
        lines.append(
            f"  stage {i}: {stage['expression']}  "
            f"{stage['steps_executed']}/{stage['steps_planned']} steps{note}"
        )
    lines.append("metrics:")
    for key in sorted(obj.get("metrics", {})):
        lines.append(f"  {key}: {obj['metrics'][key]}")
    links = obj.get("links")
    if links:
        lines.append("low-frequency links:")
        for row in links.get("reports", []):
            lines.append(
                f"  {row['tag']:8s} {row['direction']}  R {row['recall']:5.1f}  "
                f"P {row['precision']:5.1f}  F1 {row['f1']:5.1f}"
            )
    return "\n".join(lines)


def cmd_report(args: argparse.Namespace) -> int:
    with open(args.input, encoding="utf-8") as fh:
        obj = json.load(fh)
    emit(args, obj, _render_report_dict(obj))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rarelex",
        description="Synthetic-language workbench for distillation and low-frequency word studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, seed: bool = False) -> None:
        p.add_argument("--json", action="store_true", help="print a JSON report on stdout")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    def bucket_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--low", type=float, default=None, help="low bucket: relative frequency below this")
        p.add_argument("--high", type=float, default=None, help="high bucket: relative frequency at least this")

    def align_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--iterations", type=int, default=None)
        p.add_argument("--null-mass", type=float, default=None, dest="null_mass")
        p.add_argument("--tension", type=float, default=None)

    p = sub.add_parser("synth", help="generate a synthetic parallel corpus")
    common(p, seed=True)
    p.add_argument("--out", required=True, metavar="PREFIX")
    p.add_argument("--pairs", type=int, default=20000)
    p.add_argument("--vocab", type=int, default=None)
    p.add_argument("--lexicon", default=None, help="also write the gold lexicon here")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="frequency bucket profile of one corpus side")
    common(p)
    p.add_argument("--corpus", required=True, metavar="PREFIX")
    p.add_argument("--side", choices=("source", "target"), default="target")
    bucket_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("align", help="train word alignment and write Pharaoh links")
    common(p)
    p.add_argument("--corpus", required=True, metavar="PREFIX")
    p.add_argument("--direction", choices=("s2t", "t2s"), default="s2t")
    p.add_argument("--out", required=True)
    align_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("lfw", help="compare low-frequency word links across datasets")
    common(p)
    p.add_argument("--raw", required=True, metavar="PREFIX")
    p.add_argument("--kd", default=None, metavar="PREFIX")
    p.add_argument("--rkd", default=None, metavar="PREFIX")
    p.add_argument("--subset", required=True, help="JSON list of pair ids")
    p.add_argument("--judge", default="accept-all", help="accept-all or a lexicon file")
    bucket_flags(p)
    align_flags(p)
    p.add_argument("--out", default=None, help="write the JSON table here")
    p.set_defaults(func=cmd_lfw)

    p = sub.add_parser("distill", help="replace one side of a corpus with teacher output")
    common(p)
    p.add_argument("--raw", required=True, metavar="PREFIX")
    p.add_argument("--mode", choices=("forward", "reverse", "both"), default="forward")
    p.add_argument("--teacher", choices=("em", "lexicon", "file"), default="em")
    p.add_argument("--lexicon", default=None, help="gold lexicon for --teacher lexicon")
    p.add_argument("--translations", default=None, help="line file for --teacher file")
    p.add_argument("--out", required=True, metavar="PREFIX")
    align_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("train", help="train a student model on a corpus")
    common(p, seed=True)
    p.add_argument("--corpus", required=True, metavar="PREFIX")
    p.add_argument("--provenance", choices=("raw", "kd", "rkd", "mixed"), default="raw")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--trace", default=None, help="write the loss trace here (JSON lines)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained student on a corpus")
    common(p)
    p.add_argument("--student", required=True, help="checkpoint path (.npz)")
    p.add_argument("--corpus", required=True, metavar="PREFIX")
    p.add_argument("--raw", default=None, metavar="PREFIX", help="frequency reference corpus")
    p.add_argument("--judge", default="accept-all")
    bucket_flags(p)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-strategy", help="train through a staged strategy and report")
    common(p, seed=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", type=int, default=None, help="preset number 1-7")
    group.add_argument("--strategy", default=None, help="expression such as raw->rkd+kd->kd")
    p.add_argument("--raw", default=None, metavar="PREFIX")
    p.add_argument("--validation", default=None, metavar="PREFIX")
    p.add_argument("--total-steps", type=int, required=True, dest="total_steps")
    p.add_argument("--fractions", default=None, help="comma-separated stage fractions")
    p.add_argument("--stop-rule", choices=("fixed-step", "bleu-threshold"), default="fixed-step", dest="stop_rule")
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--reference", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None, dest="eval_every")
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--batch-size", type=int, default=32, dest="batch_size")
    p.add_argument("--judge", default=None)
    p.add_argument("--link-subset", type=int, default=200, dest="link_subset")
    bucket_flags(p)
    align_flags(p)
    p.add_argument("--plan-only", action="store_true", dest="plan_only")
    p.add_argument("--out", default=None, help="write the JSON report here")
    p.set_defaults(func=cmd_run_strategy)

    p = sub.add_parser("report", help="render a saved strategy report")
    common(p)
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
