"""Synthetic bilingual corpora with known lexical ground truth.

Source tokens are drawn i.i.d. from a truncated Zipf distribution.  Every
source word owns a small set of translation modes: a word-specific primary
target plus minor modes that are either word-specific or drawn from a shared
pool of generic targets (so frequent target forms translate many sources,
as in natural bitext).  Target sentences are produced word for word from the
modes, then perturbed by local adjacent swaps; the exact gold alignment is
kept for every pair.  Everything is deterministic given the config seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import ParallelCorpus, from_token_lists
from .util import atomic_write_text, rng_for

Links = frozenset[tuple[int, int]]


@dataclass(frozen=True)
class GoldLexicon:
    """Per source word: translation modes as (target surface, probability)."""

    entries: Mapping[str, tuple[tuple[str, float], ...]]

    def __post_init__(self) -> None:
        for src, modes in self.entries.items():
            if not modes:
                raise ValueError(f"lexicon entry {src!r} has no modes")
            total = sum(p for _, p in modes)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"lexicon entry {src!r}: mode mass {total} != 1")
            if any(p <= 0.0 for _, p in modes):
                raise ValueError(f"lexicon entry {src!r}: non-positive mode probability")
            targets = [t for t, _ in modes]
            if len(set(targets)) != len(targets):
                raise ValueError(f"lexicon entry {src!r}: duplicate target mode")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, src: str) -> bool:
        return src in self.entries

    def modes(self, src: str) -> tuple[tuple[str, float], ...]:
        try:
            return self.entries[src]
        except KeyError:
            raise ValueError(f"unknown source token {src!r}") from None

    def acceptable(self, src: str) -> frozenset[str]:
        return frozenset(t for t, _ in self.modes(src))

    def modal_translation(self, src: str) -> str:
        """Highest-probability mode; ties resolved to the smallest surface."""
        return sorted(self.modes(src), key=lambda m: (-m[1], m[0]))[0][0]

    def to_json(self) -> dict:
        return {
            "entries": {
                src: [[t, p] for t, p in modes] for src, modes in self.entries.items()
            }
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GoldLexicon":
        return cls(
            {
                src: tuple((t, float(p)) for t, p in modes)
                for src, modes in obj["entries"].items()
            }
        )


def write_lexicon(lexicon: GoldLexicon, path) -> None:
    atomic_write_text(path, json.dumps(lexicon.to_json(), indent=1, sort_keys=True) + "\n")


def read_lexicon(path) -> GoldLexicon:
    with open(path, encoding="utf-8") as fh:
        return GoldLexicon.from_json(json.load(fh))


class ModalTranslator:
    """Oracle teacher translating token-by-token with the gold modal choice."""

    direction = "s2t"

    def __init__(self, lexicon: GoldLexicon):
        self.lexicon = lexicon
        self._cache = {s: lexicon.modal_translation(s) for s in lexicon.entries}

    @property
    def description(self) -> str:
        return "gold-lexicon modal teacher"

    def translate(self, tokens: Sequence[str]) -> list[str]:
        out = []
        for t in tokens:
            if t not in self._cache:
                raise ValueError(f"unknown source token {t!r}")
            out.append(self._cache[t])
        return out


@dataclass(frozen=True)
class GenConfig:
    vocab_size: int
    n_pairs: int
    seed: int = 0
    zipf_s: float = 1.0
    modes_min: int = 1
    modes_max: int = 4
    mode_decay: float = 0.6
    share_prob: float = 0.35
    pool_size: int = 60
    len_min: int = 2
    len_max: int = 5
    swap_prob: float = 0.1

    def __post_init__(self) -> None:
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be >= 1")
        if self.zipf_s <= 0.0:
            raise ValueError("zipf_s must be > 0")
        if not (1 <= self.modes_min <= self.modes_max):
            raise ValueError("need 1 <= modes_min <= modes_max")
        if not (0.0 < self.mode_decay <= 1.0):
            raise ValueError("mode_decay must lie in (0, 1]")
        if not (0.0 <= self.share_prob <= 1.0):
            raise ValueError("share_prob must lie in [0, 1]")
        if self.share_prob > 0.0 and self.pool_size < self.modes_max - 1:
            raise ValueError("pool_size too small for modes_max shared modes")
        if not (1 <= self.len_min <= self.len_max):
            raise ValueError("need 1 <= len_min <= len_max")
        if not (0.0 <= self.swap_prob <= 0.5):
            raise ValueError("swap_prob must lie in [0, 0.5]")

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def standard_config(seed: int, n_pairs: int = 20_000) -> GenConfig:
    """The benchmark language used throughout the experiments."""
    return GenConfig(vocab_size=2000, n_pairs=n_pairs, seed=seed)


@dataclass(frozen=True)
class SynthSample:
    corpus: ParallelCorpus
    lexicon: GoldLexicon
    alignments: tuple[Links, ...]
    config: GenConfig


def _source_surfaces(vocab_size: int) -> list[str]:
    width = len(str(vocab_size - 1))
    return [f"s{r:0{width}d}" for r in range(vocab_size)]


def build_lexicon(config: GenConfig) -> GoldLexicon:
    rng = rng_for(config.seed, "synthlang.lexicon")
    sources = _source_surfaces(config.vocab_size)
    pool = [f"p{g:02d}" for g in range(config.pool_size)]
    entries: dict[str, tuple[tuple[str, float], ...]] = {}
    for w, src in enumerate(sources):
        k = int(rng.integers(config.modes_min, config.modes_max + 1))
        weights = config.mode_decay ** np.arange(k)
        weights = weights / weights.sum()
        shared = []
        if k > 1 and config.share_prob > 0.0:
            take = rng.random(k - 1) < config.share_prob
            n_shared = int(take.sum())
            picks = rng.choice(config.pool_size, size=n_shared, replace=False)
            shared_iter = iter(pool[int(g)] for g in picks)
            shared = [next(shared_iter) if t else None for t in take]
        targets = [f"t{src[1:]}_0"]
        for m in range(1, k):
            s = shared[m - 1] if shared else None
            targets.append(s if s is not None else f"t{src[1:]}_{m}")
        entries[src] = tuple((t, float(p)) for t, p in zip(targets, weights))
    return GoldLexicon(entries)


def _zipf_pmf(vocab_size: int, s: float) -> np.ndarray:
    ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
    pmf = ranks ** -s
    return pmf / pmf.sum()


def generate(config: GenConfig, lexicon: GoldLexicon | None = None) -> SynthSample:
    """Draw a corpus (with gold alignments) from the configured language.

    Pass an existing lexicon to sample held-out data from the same language;
    it must cover the configured vocabulary.
    """
    if lexicon is None:
        lexicon = build_lexicon(config)
    sources = _source_surfaces(config.vocab_size)
    for src in sources:
        if src not in lexicon:
            raise ValueError(f"lexicon does not cover source token {src!r}")
    # Dense mode tables for vectorized sampling.
    max_modes = max(len(lexicon.modes(s)) for s in sources)
    target_names: list[str] = []
    target_index: dict[str, int] = {}
    mode_targets = np.zeros((config.vocab_size, max_modes), dtype=np.intp)
    mode_cum = np.ones((config.vocab_size, max_modes), dtype=np.float64)
    for w, src in enumerate(sources):
        modes = lexicon.modes(src)
        cum = 0.0
        for m, (tgt, p) in enumerate(modes):
            if tgt not in target_index:
                target_index[tgt] = len(target_names)
                target_names.append(tgt)
            mode_targets[w, m] = target_index[tgt]
            cum += p
            mode_cum[w, m] = cum
        mode_cum[w, len(modes) - 1] = 1.0 + 1e-12

    rng = rng_for(config.seed, "synthlang.sentences")
    lengths = rng.integers(config.len_min, config.len_max + 1, size=config.n_pairs)
    total = int(lengths.sum())
    pmf = _zipf_pmf(config.vocab_size, config.zipf_s)
    flat_src = rng.choice(config.vocab_size, size=total, p=pmf)
    u = rng.random(total)
    mode_idx = np.minimum(
        (mode_cum[flat_src] < u[:, None]).sum(axis=1), max_modes - 1
    )
    flat_tgt = mode_targets[flat_src, mode_idx]
    swap_u = rng.random(total)

    bounds = np.cumsum(lengths)[:-1]
    src_sents: list[list[str]] = []
    tgt_sents: list[list[str]] = []
    alignments: list[Links] = []
    for seg_src, seg_tgt, seg_u in zip(
        np.split(flat_src, bounds), np.split(flat_tgt, bounds), np.split(swap_u, bounds)
    ):
        n = len(seg_src)
        perm = list(range(n))
        tgt = [target_names[t] for t in seg_tgt]
        j = 0
        while j < n - 1:
            if seg_u[j] < config.swap_prob:
                tgt[j], tgt[j + 1] = tgt[j + 1], tgt[j]
                perm[j], perm[j + 1] = perm[j + 1], perm[j]
                j += 2
            else:
                j += 1
        src_sents.append([sources[w] for w in seg_src])
        tgt_sents.append(tgt)
        alignments.append(frozenset((i, perm[i]) for i in range(n)))
    corpus = from_token_lists(src_sents, tgt_sents, "raw")
    return SynthSample(corpus, lexicon, tuple(alignments), config)
