"""Evaluation metrics: tokenized BLEU, lexicon-judged lexical accuracy,
low-frequency output ratio, and the paired sign test.

Lexical accuracy is alignment-free: a source occurrence in the requested
bucket counts as correct when the hypothesis still has an unconsumed token
the judge accepts for it.  Each hypothesis token can satisfy at most one
source occurrence, so repeated rare words must be translated repeatedly.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from scipy.stats import binomtest

from .corpus import Bucket, FreqProfile
from .lfwlinks import LinkJudge
from .util import render_table

Sentences = Sequence[Sequence[str]]


@dataclass(frozen=True)
class BleuScore:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_tokens: int
    ref_tokens: int

    def to_json(self) -> dict:
        return {
            "bleu": self.score,
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "hyp_tokens": self.hyp_tokens,
            "ref_tokens": self.ref_tokens,
        }


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(zip(*(tokens[k:] for k in range(n))))


def bleu(hypotheses: Sentences, references: Sentences, max_n: int = 4) -> BleuScore:
    """Corpus BLEU with clipped modified precision and brevity penalty.

    Unsmoothed: any order with zero matches (or zero candidate n-grams)
    zeroes the whole score.
    """
    if not hypotheses:
        raise ValueError("cannot score an empty hypothesis set")
    if len(hypotheses) != len(references):
        raise ValueError(
            f"sentence count mismatch {len(hypotheses)}≠{len(references)}"
        )
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_tokens = sum(len(h) for h in hypotheses)
    ref_tokens = sum(len(r) for r in references)
    for hyp, ref in zip(hypotheses, references):
        for n in range(1, max_n + 1):
            if len(hyp) < n:
                break
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            totals[n - 1] += len(hyp) - n + 1
    precisions = tuple(
        m / t if t else 0.0 for m, t in zip(matches, totals)
    )
    bp = 1.0 if hyp_tokens >= ref_tokens else math.exp(1.0 - ref_tokens / hyp_tokens)
    if any(p == 0.0 for p in precisions):
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)
    return BleuScore(score, precisions, bp, hyp_tokens, ref_tokens)


def sentence_bleu(hyp: Sequence[str], ref: Sequence[str], max_n: int = 4) -> float:
    """Per-sentence BLEU with add-one smoothing on orders above 1.

    Smoothing keeps short sentences off the floor so paired comparisons
    (the sign test) stay informative; corpus BLEU remains unsmoothed.
    """
    if not hyp:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hyp_counts = _ngrams(hyp, n)
        ref_counts = _ngrams(ref, n)
        matched = sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
        total = max(len(hyp) - n + 1, 0)
        if n > 1:
            matched, total = matched + 1, total + 1
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    bp = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return 100.0 * bp * math.exp(log_sum / max_n)


@dataclass(frozen=True)
class AlfScore:
    """Lexical-choice accuracy over one frequency bucket."""

    bucket: str
    correct: int
    total: int

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total

    def to_json(self) -> dict:
        return {"bucket": self.bucket, "accuracy": self.accuracy,
                "correct": self.correct, "total": self.total}


def _bucket_counts(
    sources: Sentences,
    hypotheses: Sentences,
    judge: LinkJudge,
    profile: FreqProfile,
    bucket: Bucket,
) -> tuple[int, int]:
    if len(sources) != len(hypotheses):
        raise ValueError(f"sentence count mismatch {len(sources)}≠{len(hypotheses)}")
    correct = total = 0
    for src, hyp in zip(sources, hypotheses):
        available = Counter(hyp)
        for tok in src:
            if profile.bucket(tok) is not bucket:
                continue
            total += 1
            for cand in hyp:
                if available[cand] > 0 and judge.accepts(tok, cand):
                    available[cand] -= 1
                    correct += 1
                    break
    return correct, total


def alf(
    sources: Sentences,
    hypotheses: Sentences,
    judge: LinkJudge,
    profile: FreqProfile,
    bucket: Bucket = Bucket.LOW,
) -> AlfScore:
    """Accuracy of lexical choice restricted to one source-side bucket."""
    correct, total = _bucket_counts(sources, hypotheses, judge, profile, bucket)
    if total == 0:
        raise ValueError(f"no {bucket.label}-bucket source tokens to evaluate")
    return AlfScore(bucket.label, correct, total)


@dataclass(frozen=True)
class LexAccReport:
    """Per-bucket lexical accuracy with the count-weighted aggregate."""

    scores: Mapping[str, float]
    counts: Mapping[str, int]

    def to_json(self) -> dict:
        order = ["all", "high", "medium", "low"]
        return {
            "accuracy": {k: self.scores[k] for k in order},
            "counts": {k: self.counts[k] for k in order},
        }


def bucketed_lexacc(
    sources: Sentences,
    hypotheses: Sentences,
    judge: LinkJudge,
    profile: FreqProfile,
) -> LexAccReport:
    """Lexical accuracy per bucket; "all" aggregates by occurrence counts."""
    scores: dict[str, float] = {}
    counts: dict[str, int] = {}
    correct_sum = total_sum = 0
    for bucket in (Bucket.HIGH, Bucket.MEDIUM, Bucket.LOW):
        correct, total = _bucket_counts(sources, hypotheses, judge, profile, bucket)
        if total == 0:
            raise ValueError(f"no {bucket.label}-bucket source tokens to evaluate")
        scores[bucket.label] = 100.0 * correct / total
        counts[bucket.label] = total
        correct_sum += correct
        total_sum += total
    scores["all"] = 100.0 * correct_sum / total_sum
    counts["all"] = total_sum
    return LexAccReport(scores, counts)


def render_lexacc(tagged: Sequence[tuple[str, LexAccReport]]) -> str:
    headers = ["model", "All", "High", "Medium", "Low"]
    rows = [
        [tag] + [f"{rep.scores[k]:.1f}" for k in ("all", "high", "medium", "low")]
        for tag, rep in tagged
    ]
    return render_table(headers, rows)


def lfw_output_ratio(hypotheses: Sentences, profile: FreqProfile) -> float:
    """Percent of generated tokens that are Low-bucket under the profile.

    The profile must come from the origin raw target side so distilled or
    generated text is measured against the original vocabulary.
    """
    total = sum(len(h) for h in hypotheses)
    if total == 0:
        raise ValueError("cannot measure an empty output")
    low = sum(
        1 for h in hypotheses for tok in h if profile.bucket(tok) is Bucket.LOW
    )
    return 100.0 * low / total


@dataclass(frozen=True)
class SignTestResult:
    p_value: float
    wins: int
    losses: int
    ties: int

    def to_json(self) -> dict:
        return {"p_value": self.p_value, "wins": self.wins,
                "losses": self.losses, "ties": self.ties}


def sign_test(scores_a: Sequence[float], scores_b: Sequence[float]) -> SignTestResult:
    """Two-sided exact binomial test on per-sentence wins; ties discarded."""
    if len(scores_a) != len(scores_b):
        raise ValueError(f"score count mismatch {len(scores_a)}≠{len(scores_b)}")
    wins = sum(1 for a, b in zip(scores_a, scores_b) if a > b)
    losses = sum(1 for a, b in zip(scores_a, scores_b) if a < b)
    ties = len(scores_a) - wins - losses
    if wins + losses == 0:
        raise ValueError("all paired scores tie; sign test undefined")
    p = binomtest(wins, wins + losses, 0.5, alternative="two-sided").pvalue
    return SignTestResult(float(p), wins, losses, ties)
