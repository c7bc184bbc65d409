"""Directional recall/precision analysis of low-frequency-word alignment links.

For s2t analysis the frequency side is the source; for t2s it is the target.
All bucket decisions come from a frequency profile of the origin raw corpus,
so distilled variants are scored against the vocabulary they were derived
from.  Recall is occurrence-level over a fixed evaluation subset: a Low
occurrence counts as aligned only when the analyzed dataset still carries the
same token at that pair and position and the position participates in a link.
Replacing a rare token therefore costs recall, which is exactly the loss the
analysis is meant to expose.  Precision is judged by a pluggable predicate
standing in for human evaluation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import AbstractSet, Mapping, Sequence

from .align import AlignConfig, check_direction, em_train, viterbi_align
from .corpus import (
    Bucket,
    BucketConfig,
    FreqProfile,
    ParallelCorpus,
    build_freq_profile,
    subsample,
)
from .synthlang import GoldLexicon
from .util import canonical_json, digest_of, render_table


def freq_side(direction: str) -> str:
    """The side whose low-frequency tokens the analysis tracks."""
    check_direction(direction)
    return "source" if direction == "s2t" else "target"


def _check_profile(profile: FreqProfile, direction: str) -> str:
    side = freq_side(direction)
    if profile.side != side:
        raise ValueError(
            f"profile side {profile.side!r} does not match the {direction} "
            f"frequency side {side!r}"
        )
    return side


@dataclass(frozen=True)
class LfwLink:
    """One alignment link whose frequency-side token is low-frequency."""

    pair_id: int
    source_index: int
    target_index: int
    source_token: str
    target_token: str
    direction: str

    @property
    def freq_index(self) -> int:
        return self.source_index if self.direction == "s2t" else self.target_index

    @property
    def freq_token(self) -> str:
        return self.source_token if self.direction == "s2t" else self.target_token

    def to_json(self) -> dict:
        return {
            "pair_id": self.pair_id,
            "source_index": self.source_index,
            "target_index": self.target_index,
            "source_token": self.source_token,
            "target_token": self.target_token,
            "direction": self.direction,
        }


JUDGE_VARIANTS = ("gold-lexicon", "reference-lexicon", "accept-all")


@dataclass(frozen=True)
class LinkJudge:
    """Pure predicate deciding whether a (source, target) link is correct.

    The acceptable-target map is always keyed by source token, regardless of
    which direction's links are being judged.
    """

    variant: str
    entries: Mapping[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.variant not in JUDGE_VARIANTS:
            raise ValueError(f"unknown judge variant {self.variant!r}")

    @classmethod
    def accept_all(cls) -> "LinkJudge":
        return cls("accept-all")

    @classmethod
    def from_lexicon(cls, lexicon: GoldLexicon) -> "LinkJudge":
        entries = {src: lexicon.acceptable(src) for src in lexicon.entries}
        return cls("gold-lexicon", entries)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Sequence[str]]) -> "LinkJudge":
        entries = {src: frozenset(tgts) for src, tgts in mapping.items()}
        return cls("reference-lexicon", entries)

    @classmethod
    def from_file(cls, path) -> "LinkJudge":
        """Load a reference lexicon: a JSON object of source -> target list."""
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise ValueError("reference lexicon must be a JSON object")
        return cls.from_mapping(obj)

    def accepts(self, source_token: str, target_token: str) -> bool:
        if self.variant == "accept-all":
            return True
        return target_token in self.entries.get(source_token, frozenset())


def f1_of(recall: float, precision: float) -> float:
    """Harmonic mean on the percent scale; zero when both terms are zero."""
    if recall + precision == 0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


@dataclass(frozen=True)
class LinkReport:
    """One Table-2-style row: directional R/P/F1 plus the underlying counts."""

    tag: str
    direction: str
    recall: float
    precision: float
    f1: float
    low_total: int
    low_linked: int
    links_total: int
    links_ok: int

    @classmethod
    def from_counts(
        cls,
        tag: str,
        direction: str,
        low_total: int,
        low_linked: int,
        links_total: int,
        links_ok: int,
    ) -> "LinkReport":
        check_direction(direction)
        if low_total <= 0:
            raise ValueError("no low-frequency tokens in subset")
        recall = 100.0 * low_linked / low_total
        precision = 100.0 * links_ok / links_total if links_total else 0.0
        return cls(
            tag,
            direction,
            round(recall, 1),
            round(precision, 1),
            round(f1_of(recall, precision), 1),
            low_total,
            low_linked,
            links_total,
            links_ok,
        )

    def to_json(self) -> dict:
        return {
            "tag": self.tag,
            "direction": self.direction,
            "recall": self.recall,
            "precision": self.precision,
            "f1": self.f1,
            "counts": {
                "low_total": self.low_total,
                "low_linked": self.low_linked,
                "links_total": self.links_total,
                "links_ok": self.links_ok,
            },
        }


def extract_lfw_links(
    alignments: Sequence[AbstractSet[tuple[int, int]]],
    corpus: ParallelCorpus,
    profile: FreqProfile,
    direction: str,
) -> list[LfwLink]:
    """Keep every link whose frequency-side token is Low under the profile.

    Occurrence-level: one LfwLink per qualifying link, in pair order with
    links sorted positionally.  Tokens the profile has never seen are not Low.
    """
    side = _check_profile(profile, direction)
    if len(alignments) != len(corpus.pairs):
        raise ValueError(
            f"alignment count {len(alignments)} does not match pair count {len(corpus.pairs)}"
        )
    out: list[LfwLink] = []
    src_sur = corpus.source_vocab.surfaces
    tgt_sur = corpus.target_vocab.surfaces
    for pair, links in zip(corpus.pairs, alignments):
        for i, j in sorted(links):
            s, t = src_sur[pair.source[i]], tgt_sur[pair.target[j]]
            if profile.bucket(s if side == "source" else t) is Bucket.LOW:
                out.append(LfwLink(pair.pair_id, i, j, s, t, direction))
    return out


def link_prf(
    links: Sequence[LfwLink],
    subset: ParallelCorpus,
    profile: FreqProfile,
    judge: LinkJudge,
    direction: str,
    tag: str = "",
) -> LinkReport:
    """Score extracted links against the subset's Low occurrences.

    R = Low occurrences of the subset matched by some link (same pair id,
    position, and token) / all Low occurrences in the subset.  P = links the
    judge accepts / all links.
    """
    side = _check_profile(profile, direction)
    subset_ids = set(subset.pair_ids())
    matched: set[tuple[int, int, str]] = set()
    links_ok = 0
    for link in links:
        if link.direction != direction:
            raise ValueError(f"link direction {link.direction!r} does not match {direction!r}")
        if link.pair_id not in subset_ids:
            raise ValueError(f"link references pair id {link.pair_id} outside the subset")
        if judge.accepts(link.source_token, link.target_token):
            links_ok += 1
        matched.add((link.pair_id, link.freq_index, link.freq_token))
    low_total = low_linked = 0
    sentences = subset.source_sentences() if side == "source" else subset.target_sentences()
    for pair, sent in zip(subset.pairs, sentences):
        for k, tok in enumerate(sent):
            if profile.bucket(tok) is Bucket.LOW:
                low_total += 1
                if (pair.pair_id, k, tok) in matched:
                    low_linked += 1
    return LinkReport.from_counts(tag, direction, low_total, low_linked, len(links), links_ok)


@dataclass(frozen=True)
class ComparisonTable:
    """LFW link reports for several datasets, two directions each."""

    reports: tuple[LinkReport, ...]
    metadata: dict

    def report(self, tag: str, direction: str) -> LinkReport:
        for r in self.reports:
            if r.tag == tag and r.direction == direction:
                return r
        raise KeyError(f"no report for {tag!r} {direction!r}")

    def to_json(self) -> dict:
        return {
            "metadata": self.metadata,
            "reports": [r.to_json() for r in self.reports],
        }

    def canonical(self) -> str:
        return canonical_json(self.to_json())

    def render(self) -> str:
        headers = ["dataset"]
        for d in ("s2t", "t2s"):
            headers += [f"{d} R", f"{d} P", f"{d} F1"]
        rows = []
        for tag in dict.fromkeys(r.tag for r in self.reports):
            row = [tag]
            for d in ("s2t", "t2s"):
                r = self.report(tag, d)
                row += [f"{r.recall:.1f}", f"{r.precision:.1f}", f"{r.f1:.1f}"]
            rows.append(row)
        return render_table(headers, rows)


def compare_datasets(
    datasets: Sequence[tuple[str, ParallelCorpus]] | Mapping[str, ParallelCorpus],
    subset_ids: Sequence[int],
    judge: LinkJudge,
    config: AlignConfig | None = None,
    buckets: BucketConfig | None = None,
) -> ComparisonTable:
    """Train, decode, and score every dataset in both directions.

    Alignment is trained on each full dataset and decoded on the pair-id
    matched subset.  Frequency profiles and the recall denominator always
    come from the origin raw corpus, identified by provenance.
    """
    if isinstance(datasets, Mapping):
        tagged = list(datasets.items())
    else:
        tagged = list(datasets)
    if len({tag for tag, _ in tagged}) != len(tagged):
        raise ValueError("dataset tags must be unique")
    raws = [c for _, c in tagged if c.provenance == "raw"]
    if not raws:
        raise ValueError("no dataset with provenance 'raw' to anchor frequency profiles")
    if len({c.digest() for c in raws}) > 1:
        raise ValueError("multiple distinct 'raw' datasets; origin is ambiguous")
    origin = raws[0]
    config = config or AlignConfig()
    buckets = buckets or BucketConfig()
    subset_ids = list(subset_ids)
    raw_subset = subsample(origin, subset_ids)
    profiles = {
        "s2t": build_freq_profile(origin, "source", buckets),
        "t2s": build_freq_profile(origin, "target", buckets),
    }
    reports = []
    for tag, dataset in tagged:
        dsub = subsample(dataset, subset_ids)
        for direction in ("s2t", "t2s"):
            table = em_train(dataset, direction, config)
            aligns = viterbi_align(table, dsub)
            links = extract_lfw_links(aligns, dsub, profiles[direction], direction)
            reports.append(
                link_prf(links, raw_subset, profiles[direction], judge, direction, tag)
            )
    metadata = {
        "subset": "pair-id matched",
        "subset_size": len(subset_ids),
        "subset_digest": digest_of([",".join(map(str, subset_ids))]),
        "origin_digest": origin.digest(),
        "judge": judge.variant,
        "align_config": config.to_json(),
        "bucket_config": buckets.to_json(),
    }
    return ComparisonTable(tuple(reports), metadata)
