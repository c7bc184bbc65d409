"""Parallel corpora with token vocabularies and frequency-bucket profiles.

A corpus is a list of sentence pairs over two vocabularies, tagged with a
provenance ("raw", "kd", "rkd", or "mixed" for concatenations).  Frequency
profiles assign every token to a Low / Medium / High bucket, either by
relative-frequency thresholds or by cumulative-mass rank.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .util import atomic_write_text, digest_of

PROVENANCES = ("raw", "kd", "rkd", "mixed")


class Bucket(IntEnum):
    """Frequency bucket; ordering follows frequency (LOW < MEDIUM < HIGH)."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Vocab:
    """Immutable surface-form vocabulary with dense ids and per-id counts."""

    surfaces: tuple[str, ...]
    counts: tuple[int, ...]
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.surfaces) != len(self.counts):
            raise ValueError("surfaces and counts differ in length")
        if any(c < 0 for c in self.counts):
            raise ValueError("negative token count")
        index = {s: i for i, s in enumerate(self.surfaces)}
        if len(index) != len(self.surfaces):
            raise ValueError("duplicate surface form in vocabulary")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_counts(cls, counts: Mapping[str, int]) -> "Vocab":
        surfaces = tuple(counts)
        return cls(surfaces, tuple(counts[s] for s in surfaces))

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sequence[str]]) -> "Vocab":
        """Ids are assigned in first-occurrence order."""
        counts: dict[str, int] = {}
        for sent in sentences:
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        return cls.from_counts(counts)

    def __len__(self) -> int:
        return len(self.surfaces)

    def __contains__(self, surface: str) -> bool:
        return surface in self._index

    @property
    def total(self) -> int:
        return sum(self.counts)

    def id(self, surface: str) -> int:
        try:
            return self._index[surface]
        except KeyError:
            raise ValueError(f"unknown token {surface!r}") from None

    def surface(self, token_id: int) -> str:
        return self.surfaces[token_id]

    def encode(self, tokens: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.id(t) for t in tokens)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.surfaces[i] for i in ids]

    def merge(self, other: "Vocab") -> tuple["Vocab", list[int], list[int]]:
        """Merge by surface form, summing counts.

        Returns the merged vocab plus id remaps for self and other.
        """
        counts: dict[str, int] = dict(zip(self.surfaces, self.counts))
        for s, c in zip(other.surfaces, other.counts):
            counts[s] = counts.get(s, 0) + c
        merged = Vocab.from_counts(counts)
        remap_self = [merged.id(s) for s in self.surfaces]
        remap_other = [merged.id(s) for s in other.surfaces]
        return merged, remap_self, remap_other


@dataclass(frozen=True)
class SentencePair:
    pair_id: int
    source: tuple[int, ...]
    target: tuple[int, ...]


@dataclass(frozen=True)
class ParallelCorpus:
    source_vocab: Vocab
    target_vocab: Vocab
    pairs: tuple[SentencePair, ...]
    provenance: str
    # For concatenations: (component provenance, original pair id) per pair.
    origin: tuple[tuple[str, int], ...] | None = None

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        seen: set[int] = set()
        ns, nt = len(self.source_vocab), len(self.target_vocab)
        for p in self.pairs:
            if not p.source or not p.target:
                raise ValueError(f"pair {p.pair_id}: empty sentence")
            if p.pair_id in seen:
                raise ValueError(f"duplicate pair id {p.pair_id}")
            seen.add(p.pair_id)
            if any(i < 0 or i >= ns for i in p.source):
                raise ValueError(f"pair {p.pair_id}: source id out of range")
            if any(j < 0 or j >= nt for j in p.target):
                raise ValueError(f"pair {p.pair_id}: target id out of range")
        if self.origin is not None and len(self.origin) != len(self.pairs):
            raise ValueError("origin map length differs from pair count")

    def __len__(self) -> int:
        return len(self.pairs)

    def pair_ids(self) -> list[int]:
        return [p.pair_id for p in self.pairs]

    def source_sentences(self) -> list[list[str]]:
        return [self.source_vocab.decode(p.source) for p in self.pairs]

    def target_sentences(self) -> list[list[str]]:
        return [self.target_vocab.decode(p.target) for p in self.pairs]

    def digest(self) -> str:
        # Safe to cache on a frozen instance; decoding every pair is the
        # expensive part for large corpora.
        cached = getattr(self, "_digest_cache", None)
        if cached is None:
            lines = [" ".join(s) for s in self.source_sentences()]
            lines.append("\x1d")
            lines += [" ".join(t) for t in self.target_sentences()]
            cached = digest_of(lines)
            object.__setattr__(self, "_digest_cache", cached)
        return cached

    def metadata(self) -> dict:
        meta = {
            "provenance": self.provenance,
            "pairs": len(self.pairs),
            "source_vocab": len(self.source_vocab),
            "target_vocab": len(self.target_vocab),
            "source_tokens": sum(len(p.source) for p in self.pairs),
            "target_tokens": sum(len(p.target) for p in self.pairs),
            "digest": self.digest(),
        }
        if self.origin is not None:
            meta["origin"] = [[tag, pid] for tag, pid in self.origin]
        return meta


def ingest(source_path, target_path, provenance: str = "raw") -> ParallelCorpus:
    """Read a sentence-per-line parallel text pair into a corpus.

    Both files must have the same number of lines and no empty sentences;
    tokens are whitespace-separated.
    """
    with open(source_path, encoding="utf-8") as fh:
        src_lines = fh.read().splitlines()
    with open(target_path, encoding="utf-8") as fh:
        tgt_lines = fh.read().splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"line count mismatch {len(src_lines)}≠{len(tgt_lines)}")
    src_tok = [line.split() for line in src_lines]
    tgt_tok = [line.split() for line in tgt_lines]
    for k, toks in enumerate(src_tok, start=1):
        if not toks:
            raise ValueError(f"source line {k}: empty sentence")
    for k, toks in enumerate(tgt_tok, start=1):
        if not toks:
            raise ValueError(f"target line {k}: empty sentence")
    return from_token_lists(src_tok, tgt_tok, provenance)


def from_token_lists(
    src_tok: Sequence[Sequence[str]],
    tgt_tok: Sequence[Sequence[str]],
    provenance: str = "raw",
) -> ParallelCorpus:
    if len(src_tok) != len(tgt_tok):
        raise ValueError(f"line count mismatch {len(src_tok)}≠{len(tgt_tok)}")
    src_vocab = Vocab.from_sentences(src_tok)
    tgt_vocab = Vocab.from_sentences(tgt_tok)
    pairs = tuple(
        SentencePair(i, src_vocab.encode(s), tgt_vocab.encode(t))
        for i, (s, t) in enumerate(zip(src_tok, tgt_tok))
    )
    return ParallelCorpus(src_vocab, tgt_vocab, pairs, provenance)


def write_corpus(corpus: ParallelCorpus, source_path, target_path) -> None:
    atomic_write_text(
        source_path, "".join(" ".join(s) + "\n" for s in corpus.source_sentences())
    )
    atomic_write_text(
        target_path, "".join(" ".join(t) + "\n" for t in corpus.target_sentences())
    )


@dataclass(frozen=True)
class BucketConfig:
    """Bucket assignment rule.

    mode "relfreq": Low iff relfreq < low_below, High iff relfreq >=
    high_at_least.  mode "cumulative": High covers the top high_mass of
    probability mass, Low the bottom low_mass, with frequency ties never
    split across buckets.
    """

    mode: str = "relfreq"
    low_below: float = 1e-4
    high_at_least: float = 1e-3
    high_mass: float = 0.5
    low_mass: float = 0.05

    def __post_init__(self) -> None:
        if self.mode not in ("relfreq", "cumulative"):
            raise ValueError(f"unknown bucket mode {self.mode!r}")
        if self.mode == "relfreq":
            if not (0.0 < self.low_below <= self.high_at_least):
                raise ValueError("need 0 < low_below <= high_at_least")
        else:
            if not (0.0 < self.high_mass < 1.0 and 0.0 < self.low_mass < 1.0):
                raise ValueError("cumulative masses must lie in (0, 1)")
            if self.high_mass + self.low_mass >= 1.0:
                raise ValueError("high_mass + low_mass must be < 1")

    def to_json(self) -> dict:
        if self.mode == "relfreq":
            return {
                "mode": self.mode,
                "low_below": self.low_below,
                "high_at_least": self.high_at_least,
            }
        return {"mode": self.mode, "high_mass": self.high_mass, "low_mass": self.low_mass}


@dataclass(frozen=True)
class FreqProfile:
    """Per-token relative frequencies and bucket assignments for one side."""

    side: str
    vocab: Vocab
    relfreq: np.ndarray
    buckets: np.ndarray
    config: BucketConfig

    def bucket_id(self, token_id: int) -> Bucket:
        return Bucket(int(self.buckets[token_id]))

    def bucket(self, surface: str) -> Bucket | None:
        """Bucket of a surface form; None when the token is unknown here."""
        if surface not in self.vocab:
            return None
        return self.bucket_id(self.vocab.id(surface))

    def mask(self, bucket: Bucket) -> np.ndarray:
        return self.buckets == int(bucket)

    def type_counts(self) -> dict[str, int]:
        return {b.label: int(self.mask(b).sum()) for b in Bucket}

    def to_json(self) -> dict:
        return {
            "side": self.side,
            "config": self.config.to_json(),
            "tokens": [
                {
                    "token": s,
                    "count": int(c),
                    "relfreq": float(self.relfreq[i]),
                    "bucket": self.bucket_id(i).label,
                }
                for i, (s, c) in enumerate(zip(self.vocab.surfaces, self.vocab.counts))
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FreqProfile":
        cfg = BucketConfig(**obj["config"])
        toks = obj["tokens"]
        vocab = Vocab(
            tuple(t["token"] for t in toks), tuple(int(t["count"]) for t in toks)
        )
        relfreq = np.array([t["relfreq"] for t in toks], dtype=np.float64)
        labels = {b.label: int(b) for b in Bucket}
        buckets = np.array([labels[t["bucket"]] for t in toks], dtype=np.int8)
        return cls(obj["side"], vocab, relfreq, buckets, cfg)


def _cumulative_buckets(relfreq: np.ndarray, cfg: BucketConfig) -> np.ndarray:
    order = np.argsort(-relfreq, kind="stable")
    sorted_rf = relfreq[order]
    cum = np.cumsum(sorted_rf)
    hi_stop = int(np.searchsorted(cum, cfg.high_mass, side="left"))
    f_high = sorted_rf[min(hi_stop, len(sorted_rf) - 1)]
    cum_low = np.cumsum(sorted_rf[::-1])
    lo_stop = int(np.searchsorted(cum_low, cfg.low_mass, side="left"))
    f_low = sorted_rf[::-1][min(lo_stop, len(sorted_rf) - 1)]
    buckets = np.full(len(relfreq), int(Bucket.MEDIUM), dtype=np.int8)
    high = relfreq >= f_high
    buckets[high] = int(Bucket.HIGH)
    buckets[(relfreq <= f_low) & ~high] = int(Bucket.LOW)
    return buckets


def build_freq_profile(
    corpus: ParallelCorpus, side: str, config: BucketConfig | None = None
) -> FreqProfile:
    """Profile one side of a corpus from its vocabulary counts.

    Counts come from the vocabulary, so a profile built on a parent corpus
    stays valid for its subsamples.
    """
    if side not in ("source", "target"):
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")
    config = config or BucketConfig()
    vocab = corpus.source_vocab if side == "source" else corpus.target_vocab
    if len(vocab) == 0:
        raise ValueError("cannot profile an empty vocabulary")
    counts = np.asarray(vocab.counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("cannot profile a vocabulary with zero total count")
    relfreq = counts / total
    if config.mode == "relfreq":
        buckets = np.full(len(vocab), int(Bucket.MEDIUM), dtype=np.int8)
        buckets[relfreq < config.low_below] = int(Bucket.LOW)
        buckets[relfreq >= config.high_at_least] = int(Bucket.HIGH)
    else:
        buckets = _cumulative_buckets(relfreq, config)
    return FreqProfile(side, vocab, relfreq, buckets, config)


def subsample(corpus: ParallelCorpus, pair_ids: Sequence[int]) -> ParallelCorpus:
    """Select pairs by id, in the order given.

    Pair ids, provenance, and the parent vocabularies (hence parent
    frequencies) are preserved.
    """
    by_id = {p.pair_id: k for k, p in enumerate(corpus.pairs)}
    unknown = sorted(set(pid for pid in pair_ids if pid not in by_id))
    if unknown:
        raise ValueError(f"unknown pair ids: {unknown}")
    if len(set(pair_ids)) != len(pair_ids):
        raise ValueError("duplicate pair ids in subsample request")
    pairs = tuple(corpus.pairs[by_id[pid]] for pid in pair_ids)
    origin = None
    if corpus.origin is not None:
        origin = tuple(corpus.origin[by_id[pid]] for pid in pair_ids)
    return ParallelCorpus(
        corpus.source_vocab, corpus.target_vocab, pairs, corpus.provenance, origin
    )


def concat(a: ParallelCorpus, b: ParallelCorpus) -> ParallelCorpus:
    """Concatenate two corpora, merging vocabularies by surface form.

    Pair ids are re-indexed from zero; the origin map records each pair's
    component provenance and original id.
    """
    src_vocab, smap_a, smap_b = a.source_vocab.merge(b.source_vocab)
    tgt_vocab, tmap_a, tmap_b = a.target_vocab.merge(b.target_vocab)
    pairs = []
    origin = []
    for p in a.pairs:
        pairs.append(
            SentencePair(
                len(pairs),
                tuple(smap_a[i] for i in p.source),
                tuple(tmap_a[j] for j in p.target),
            )
        )
        origin.append((a.provenance, p.pair_id))
    for p in b.pairs:
        pairs.append(
            SentencePair(
                len(pairs),
                tuple(smap_b[i] for i in p.source),
                tuple(tmap_b[j] for j in p.target),
            )
        )
        origin.append((b.provenance, p.pair_id))
    return ParallelCorpus(src_vocab, tgt_vocab, tuple(pairs), "mixed", tuple(origin))
