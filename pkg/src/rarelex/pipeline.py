"""Staged training recipes over one student.

A strategy expression such as "raw->rkd+kd->kd" names a sequence of stages,
each trained on a dataset assembled from the atoms raw, kd (forward-distilled)
and rkd (reverse-distilled). One student instance is carried through all
stages; the step budget is split across stages up front and always adds up to
the configured total, even when the raw pretraining stage stops early.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from sklearn.base import clone

from .align import AlignConfig
from .corpus import BucketConfig, ParallelCorpus, build_freq_profile, concat
from .distill import Translator, distill_forward, distill_reverse
from .lfwlinks import ComparisonTable, LinkJudge, compare_datasets
from .metrics import alf, bleu, bucketed_lexacc, lfw_output_ratio
from .toynmt import NatStudent
from .util import canonical_json, rng_for

ATOMS = ("raw", "kd", "rkd")

PRESETS = {
    1: "raw",
    2: "kd",
    3: "raw+kd",
    4: "raw->kd",
    5: "raw+rkd+kd",
    6: "raw->rkd+kd",
    7: "raw->rkd+kd->kd",
}

STOP_RULES = ("fixed-step", "bleu-threshold")


@dataclass(frozen=True)
class Strategy:
    """Ordered stages; each stage is a tuple of dataset atoms joined by '+'."""

    stages: tuple[tuple[str, ...], ...]
    name: str = ""

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("a strategy needs at least one stage")
        for stage in self.stages:
            if not stage:
                raise ValueError("a stage needs at least one atom")
            for atom in stage:
                if atom not in ATOMS:
                    raise ValueError(f"unknown atom {atom!r}")

    def render(self) -> str:
        return "->".join("+".join(stage) for stage in self.stages)

    def atoms(self) -> set[str]:
        return {a for stage in self.stages for a in stage}


def parse_strategy(text: str) -> Strategy:
    """Parse stage '->' stage where stage is atom ('+' atom)*."""
    pos = 0
    n = len(text)

    def skip_space() -> None:
        nonlocal pos
        while pos < n and text[pos].isspace():
            pos += 1

    def read_atom() -> str:
        nonlocal pos
        skip_space()
        start = pos
        while pos < n and (text[pos].isalnum() or text[pos] == "_"):
            pos += 1
        if pos == start:
            raise ValueError(f"syntax error at position {start}: expected an atom")
        word = text[start:pos]
        if word not in ATOMS:
            raise ValueError(f"unknown atom {word!r} at position {start}")
        return word

    stages: list[tuple[str, ...]] = []
    while True:
        atoms = [read_atom()]
        while True:
            skip_space()
            if pos < n and text[pos] == "+":
                pos += 1
                atoms.append(read_atom())
            else:
                break
        stages.append(tuple(atoms))
        skip_space()
        if pos >= n:
            break
        if text.startswith("->", pos):
            pos += 2
        else:
            raise ValueError(f"syntax error at position {pos}: expected '->' or '+'")
    return Strategy(tuple(stages))


def preset(number: int) -> Strategy:
    if number not in PRESETS:
        raise ValueError(f"preset must be one of {sorted(PRESETS)}, got {number}")
    return Strategy(parse_strategy(PRESETS[number]).stages, name=f"#{number}")


@dataclass(frozen=True)
class RunConfig:
    """Budget split, early-stop rule and evaluation settings for one run."""

    total_steps: int
    fractions: tuple[float, ...] | None = None
    stop_rule: str = "fixed-step"
    theta: float = 0.9
    reference_score: float | None = None
    patience: int | None = None
    eval_every: int | None = None
    seed: int = 0
    validation: ParallelCorpus | None = field(default=None, compare=False)
    buckets: BucketConfig | None = None
    align: AlignConfig | None = None
    judge: LinkJudge | None = None
    link_subset: int = 200

    def __post_init__(self) -> None:
        if self.total_steps <= 0:
            raise ValueError(f"need a positive step budget, got {self.total_steps}")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"stop rule must be one of {STOP_RULES}, got {self.stop_rule!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"need 0 < theta <= 1, got {self.theta}")
        if self.fractions is not None:
            if any(f <= 0 for f in self.fractions):
                raise ValueError("stage fractions must be positive")
            if abs(sum(self.fractions) - 1.0) > 1e-9:
                raise ValueError(f"stage fractions must sum to 1, got {sum(self.fractions)}")
        if self.eval_every is not None and self.eval_every <= 0:
            raise ValueError("evaluation cadence must be positive")
        if self.link_subset < 0:
            raise ValueError("link subset size cannot be negative")

    @property
    def cadence(self) -> int:
        if self.eval_every is not None:
            return self.eval_every
        return max(self.total_steps // 50, 10)

    def to_json(self) -> dict:
        return {
            "total_steps": self.total_steps,
            "fractions": list(self.fractions) if self.fractions else None,
            "stop_rule": self.stop_rule,
            "theta": self.theta,
            "reference_score": self.reference_score,
            "patience": self.patience,
            "eval_every": self.eval_every,
            "seed": self.seed,
            "validation_digest": self.validation.digest() if self.validation else None,
            "buckets": self.buckets.to_json() if self.buckets else None,
            "align": dataclasses.asdict(self.align) if self.align else None,
            "judge": self.judge.variant if self.judge else None,
            "link_subset": self.link_subset,
        }


def plan_budgets(
    total_steps: int, strategy: Strategy, config: RunConfig | None = None
) -> tuple[int, ...]:
    """Split the total into per-stage budgets, rounding residue to the last stage."""
    if total_steps <= 0:
        raise ValueError(f"need a positive step budget, got {total_steps}")
    n = len(strategy.stages)
    fractions = config.fractions if config is not None and config.fractions else None
    if fractions is None:
        fractions = {
            1: (1.0,),
            2: (2 / 7, 5 / 7),
            3: (2 / 7, 2 / 7, 3 / 7),
        }.get(n, (1.0 / n,) * n)
    if len(fractions) != n:
        raise ValueError(f"{len(fractions)} fractions for {n} stages")
    # The epsilon keeps an exact fraction of the total (70000 * 2/7) from
    # flooring one below its intended share.
    budgets = [int(total_steps * f + 1e-9) for f in fractions[:-1]]
    budgets.append(total_steps - sum(budgets))
    if min(budgets) < 1:
        raise ValueError(
            f"{total_steps} steps cannot give {n} stages at least one step each"
        )
    return tuple(budgets)


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: str
    value: float | None = None

    def to_json(self) -> dict:
        return {"stop": self.stop, "reason": self.reason, "value": self.value}


def early_stop_check(
    trace: Sequence[float],
    rule: str,
    reference: float | None = None,
    theta: float = 0.9,
    patience: int | None = None,
) -> StopDecision:
    """Decide whether raw pretraining should stop after the latest evaluation.

    With a reference score the stage stops once validation reaches theta times
    that score. Without one, a patience window over the running maximum stands
    in for knowing the best raw score ahead of time.
    """
    if rule not in STOP_RULES:
        raise ValueError(f"stop rule must be one of {STOP_RULES}, got {rule!r}")
    if rule == "fixed-step":
        return StopDecision(False, "fixed-step rule never stops early")
    if reference is None and patience is None:
        raise ValueError("bleu-threshold early stop needs a reference score or a patience")
    if not trace:
        return StopDecision(False, "no evaluations yet")
    latest = trace[-1]
    if reference is not None:
        target = theta * reference
        if latest >= target:
            return StopDecision(True, f"validation {latest:g} reached {theta:g} x {reference:g}", latest)
        return StopDecision(False, f"validation {latest:g} below {target:g}", latest)
    best = max(trace)
    since_best = len(trace) - 1 - trace.index(best)
    if since_best >= patience:
        return StopDecision(True, f"no improvement over {best:g} in {since_best} evaluations", best)
    return StopDecision(False, f"still improving toward {best:g}", latest)


@dataclass(frozen=True)
class StageRecord:
    expression: str
    steps_planned: int
    steps_executed: int
    dataset: dict
    validation: tuple[tuple[int, float], ...]
    final_loss: float | None
    stop: StopDecision | None = None

    def to_json(self) -> dict:
        return {
            "expression": self.expression,
            "steps_planned": self.steps_planned,
            "steps_executed": self.steps_executed,
            "dataset": self.dataset,
            "validation": [[step, score] for step, score in self.validation],
            "final_loss": self.final_loss,
            "stop": self.stop.to_json() if self.stop else None,
        }


@dataclass(frozen=True)
class ExperimentReport:
    strategy: str
    name: str
    seed: int
    total_steps: int
    executed_steps: int
    config_digest: str
    stages: tuple[StageRecord, ...]
    metrics: dict
    links: ComparisonTable | None

    def __post_init__(self) -> None:
        if self.executed_steps != self.total_steps:
            raise ValueError(
                f"executed {self.executed_steps} steps but {self.total_steps} were configured"
            )

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "name": self.name,
            "seed": self.seed,
            "total_steps": self.total_steps,
            "executed_steps": self.executed_steps,
            "config_digest": self.config_digest,
            "stages": [r.to_json() for r in self.stages],
            "metrics": self.metrics,
            "links": self.links.to_json() if self.links else None,
        }

    def canonical(self) -> str:
        return canonical_json(self.to_json())

    def render(self) -> str:
        label = f" ({self.name})" if self.name else ""
        lines = [f"strategy {self.strategy}{label}  seed {self.seed}  steps {self.total_steps}"]
        for i, r in enumerate(self.stages, 1):
            note = f"  [stopped: {r.stop.reason}]" if r.stop and r.stop.stop else ""
            lines.append(
                f"  stage {i}: {r.expression}  {r.steps_executed}/{r.steps_planned} steps{note}"
            )
        lines.append("metrics:")
        for key in sorted(self.metrics):
            lines.append(f"  {key}: {self.metrics[key]}")
        if self.links is not None:
            lines.append(self.links.render())
        return "\n".join(lines)


def config_digest(strategy: Strategy, config: RunConfig) -> str:
    payload = canonical_json({"strategy": strategy.render(), "config": config.to_json()})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _stage_datasets(
    strategy: Strategy, raw: ParallelCorpus, teachers: Mapping[str, Translator]
) -> tuple[list[ParallelCorpus], dict[str, ParallelCorpus]]:
    if raw.provenance != "raw":
        raise ValueError(f"expected a raw corpus, got provenance {raw.provenance!r}")
    cache: dict[str, ParallelCorpus] = {"raw": raw}

    def materialize(atom: str) -> ParallelCorpus:
        if atom not in cache:
            direction = "s2t" if atom == "kd" else "t2s"
            if direction not in teachers:
                raise ValueError(f"atom {atom!r} needs a {direction} teacher")
            build = distill_forward if atom == "kd" else distill_reverse
            cache[atom] = build(raw, teachers[direction])
        return cache[atom]

    datasets = []
    for stage in strategy.stages:
        parts = [materialize(a) for a in stage]
        ds = parts[0]
        for part in parts[1:]:
            ds = concat(ds, part)
        datasets.append(ds)
    return datasets, cache


def _evaluate_bleu(student: NatStudent, validation: ParallelCorpus) -> float:
    hyp = student.predict(validation.source_sentences())
    return bleu(hyp, validation.target_sentences()).score


def evaluate_student(
    student: NatStudent,
    eval_corpus: ParallelCorpus,
    raw: ParallelCorpus,
    judge: LinkJudge | None = None,
    buckets: BucketConfig | None = None,
) -> dict:
    """Decode the evaluation set and score it: corpus BLEU, low-bucket
    containment, bucketed lexical accuracy and the low-frequency share of
    the output. Frequency profiles come from the raw corpus so bucket
    membership does not drift with the evaluation slice; per-bucket entries
    are None when the slice misses a bucket entirely."""
    hyp = student.predict(eval_corpus.source_sentences())
    judge = judge if judge is not None else LinkJudge.accept_all()
    src_profile = build_freq_profile(raw, "source", buckets)
    tgt_profile = build_freq_profile(raw, "target", buckets)
    sources = eval_corpus.source_sentences()
    references = eval_corpus.target_sentences()
    try:
        alf_low = alf(sources, hyp, judge, src_profile).accuracy
    except ValueError:
        alf_low = None
    try:
        lexacc = bucketed_lexacc(sources, hyp, judge, src_profile).to_json()
    except ValueError:
        lexacc = None
    return {
        "bleu": bleu(hyp, references).score,
        "alf_low": alf_low,
        "lexacc": lexacc,
        "lfw_output_ratio": lfw_output_ratio(hyp, tgt_profile),
    }


def run(
    strategy: Strategy,
    raw: ParallelCorpus,
    teachers: Mapping[str, Translator],
    student: NatStudent,
    config: RunConfig,
) -> ExperimentReport:
    """Train one student through the strategy's stages and report on it.

    The student argument is an unfitted prototype; it is cloned and reseeded
    from the config so repeated runs are independent and reproducible. Early
    stopping applies only to a leading raw-only stage and hands its unused
    steps to the final stage, keeping the executed total fixed.
    """
    for direction, teacher in teachers.items():
        if teacher.direction != direction:
            raise ValueError(
                f"teacher registered under {direction!r} reports direction {teacher.direction!r}"
            )
    budgets = list(plan_budgets(config.total_steps, strategy, config))
    planned = tuple(budgets)
    datasets, atom_corpora = _stage_datasets(strategy, raw, teachers)

    stop_eligible = (
        config.stop_rule == "bleu-threshold"
        and len(strategy.stages) > 1
        and strategy.stages[0] == ("raw",)
    )
    if stop_eligible and config.validation is None:
        raise ValueError("bleu-threshold early stop needs a validation set")

    worker: NatStudent = clone(student)
    worker.set_params(seed=config.seed)
    union = datasets[0]
    for ds in datasets[1:]:
        union = concat(union, ds)
    worker.fit(union, steps=0)

    records: list[StageRecord] = []
    step_base = 0
    for i in range(len(strategy.stages)):
        expression = "+".join(strategy.stages[i])
        budget = budgets[i]
        data = datasets[i]
        executed = 0
        val_points: list[tuple[int, float]] = []
        stop: StopDecision | None = None
        while executed < budget:
            chunk = min(config.cadence, budget - executed)
            try:
                worker.partial_fit(data, chunk)
            except ValueError as exc:
                raise ValueError(f"stage {i + 1} ({expression}): {exc}") from exc
            executed += chunk
            if config.validation is not None:
                score = _evaluate_bleu(worker, config.validation)
                val_points.append((step_base + executed, score))
                if stop_eligible and i == 0:
                    decision = early_stop_check(
                        [s for _, s in val_points],
                        config.stop_rule,
                        reference=config.reference_score,
                        theta=config.theta,
                        patience=config.patience,
                    )
                    if decision.stop:
                        stop = decision
                        budgets[-1] += budget - executed
                        break
        step_base += executed
        final_loss = worker.trace_[-1]["loss"] if worker.trace_ else None
        records.append(
            StageRecord(
                expression,
                planned[i],
                executed,
                data.metadata(),
                tuple(val_points),
                final_loss,
                stop,
            )
        )

    eval_corpus = config.validation if config.validation is not None else raw
    judge = config.judge if config.judge is not None else LinkJudge.accept_all()
    metrics = evaluate_student(worker, eval_corpus, raw, judge, config.buckets)

    links: ComparisonTable | None = None
    if config.link_subset > 0:
        used = [("raw", raw)]
        for atom in ("kd", "rkd"):
            if atom in atom_corpora:
                used.append((atom, atom_corpora[atom]))
        size = min(config.link_subset, len(raw))
        rng = rng_for(config.seed, "pipeline.subset")
        ids = sorted(rng.choice(raw.pair_ids(), size=size, replace=False).tolist())
        try:
            links = compare_datasets(used, ids, judge, config.align, config.buckets)
        except ValueError:
            links = None  # the sampled subset can miss the low bucket entirely

    total_executed = sum(r.steps_executed for r in records)
    return ExperimentReport(
        strategy.render(),
        strategy.name,
        config.seed,
        config.total_steps,
        total_executed,
        config_digest(strategy, config),
        tuple(records),
        metrics,
        links,
    )
