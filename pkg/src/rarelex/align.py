"""IBM Model 1 word alignment by EM, with an optional diagonal position prior.

The aligner is directed.  Direction "s2t" conditions on source tokens: the
table holds t(target-word | source-word) and every target position picks one
source position (or NULL) at decode time.  Direction "t2s" swaps the roles.
The position prior follows the usual tension form exp(-tension * |i/n - j/m|)
and reduces exactly to Model 1 at tension 0; NULL alignment receives a fixed
p0 share of each posterior.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import AbstractSet, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import ParallelCorpus, Vocab
from .util import atomic_write_text

DIRECTIONS = ("s2t", "t2s")

NULL_SURFACE = "<null>"

Links = frozenset[tuple[int, int]]


def check_direction(direction: str) -> str:
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    return direction


@dataclass(frozen=True)
class AlignConfig:
    iterations: int = 5
    null_mass: float = 0.08
    tension: float = 4.0
    decode_floor: float = 1e-12

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not (0.0 <= self.null_mass < 1.0):
            raise ValueError("null_mass must lie in [0, 1)")
        if self.tension < 0.0:
            raise ValueError("tension must be >= 0")
        if self.decode_floor <= 0.0:
            raise ValueError("decode_floor must be > 0")

    def to_json(self) -> dict:
        return {
            "iterations": self.iterations,
            "null_mass": self.null_mass,
            "tension": self.tension,
            "decode_floor": self.decode_floor,
        }


@dataclass
class TranslationTable:
    """Row-stochastic conditionals t(conditioned | conditioning).

    probs has one row per conditioning token plus a final NULL row; columns
    follow the conditioned-side vocabulary.
    """

    direction: str
    cond_vocab: Vocab
    out_vocab: Vocab
    probs: np.ndarray
    config: AlignConfig
    loglik_trace: list[float] = field(default_factory=list)

    @property
    def null_row(self) -> int:
        return len(self.cond_vocab)

    def prob(self, cond: str, out: str) -> float:
        i = self.null_row if cond == NULL_SURFACE else self.cond_vocab.id(cond)
        return float(self.probs[i, self.out_vocab.id(out)])

    def to_json(self, min_prob: float = 0.0) -> dict:
        def row(i: int) -> list[list]:
            cols = np.nonzero(self.probs[i] > min_prob)[0]
            entries = sorted(
                ((self.out_vocab.surface(j), float(self.probs[i, j])) for j in cols),
                key=lambda e: (-e[1], e[0]),
            )
            return [[s, p] for s, p in entries]

        conditionals = {
            self.cond_vocab.surface(i): row(i) for i in range(len(self.cond_vocab))
        }
        conditionals[NULL_SURFACE] = row(self.null_row)
        return {
            "direction": self.direction,
            "config": self.config.to_json(),
            "loglik_trace": list(self.loglik_trace),
            "conditionals": conditionals,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TranslationTable":
        conditionals = obj["conditionals"]
        cond_surfaces = [s for s in conditionals if s != NULL_SURFACE]
        out_surfaces: list[str] = []
        seen = set()
        for entries in conditionals.values():
            for s, _ in entries:
                if s not in seen:
                    seen.add(s)
                    out_surfaces.append(s)
        cond_vocab = Vocab(tuple(cond_surfaces), (0,) * len(cond_surfaces))
        out_vocab = Vocab(tuple(out_surfaces), (0,) * len(out_surfaces))
        probs = np.zeros((len(cond_vocab) + 1, len(out_vocab)))
        for cond, entries in conditionals.items():
            i = len(cond_vocab) if cond == NULL_SURFACE else cond_vocab.id(cond)
            for s, p in entries:
                probs[i, out_vocab.id(s)] = p
        return cls(
            obj["direction"],
            cond_vocab,
            out_vocab,
            probs,
            AlignConfig(**obj["config"]),
            [float(x) for x in obj["loglik_trace"]],
        )


def _sides(corpus: ParallelCorpus, direction: str) -> tuple[Vocab, Vocab]:
    if direction == "s2t":
        return corpus.source_vocab, corpus.target_vocab
    return corpus.target_vocab, corpus.source_vocab


class _Group:
    """Pairs sharing a (conditioning length, conditioned length) shape."""

    __slots__ = ("rows", "E", "F", "Eb", "Fb", "delta")

    def __init__(self, rows, E, F, tension: float):
        self.rows = rows
        self.E = E
        self.F = F
        b, n = E.shape
        m = F.shape[1]
        self.Eb = np.broadcast_to(E[:, :, None], (b, n, m)).reshape(-1)
        self.Fb = np.broadcast_to(F[:, None, :], (b, n, m)).reshape(-1)
        i = np.arange(n, dtype=np.float64)[:, None] / n
        j = np.arange(m, dtype=np.float64)[None, :] / m
        delta = np.exp(-tension * np.abs(i - j))
        self.delta = delta / delta.sum(axis=0, keepdims=True)


def _grouped(
    corpus: ParallelCorpus, direction: str, tension: float, cond_map=None, out_map=None
) -> list[_Group]:
    buckets: dict[tuple[int, int], list[int]] = {}
    for k, p in enumerate(corpus.pairs):
        e, f = (p.source, p.target) if direction == "s2t" else (p.target, p.source)
        buckets.setdefault((len(e), len(f)), []).append(k)
    groups = []
    for (n, m), rows in sorted(buckets.items()):
        E = np.empty((len(rows), n), dtype=np.intp)
        F = np.empty((len(rows), m), dtype=np.intp)
        for r, k in enumerate(rows):
            p = corpus.pairs[k]
            e, f = (p.source, p.target) if direction == "s2t" else (p.target, p.source)
            E[r] = e
            F[r] = f
        if cond_map is not None:
            E = cond_map[E]
        if out_map is not None:
            F = out_map[F]
        groups.append(_Group(rows, E, F, tension))
    return groups


def em_train(
    corpus: ParallelCorpus, direction: str = "s2t", config: AlignConfig | None = None
) -> TranslationTable:
    """Estimate the translation table by expectation maximization.

    With zero iterations the uniform-initialized table is returned and the
    log-likelihood trace is empty.
    """
    check_direction(direction)
    config = config or AlignConfig()
    cond_vocab, out_vocab = _sides(corpus, direction)
    ne, nf = len(cond_vocab), len(out_vocab)
    if nf == 0 or ne == 0:
        raise ValueError("cannot align an empty corpus")
    t = np.full((ne + 1, nf), 1.0 / nf)
    trace: list[float] = []
    if config.iterations == 0:
        return TranslationTable(direction, cond_vocab, out_vocab, t, config, trace)
    groups = _grouped(corpus, direction, config.tension)
    p0 = config.null_mass
    for _ in range(config.iterations):
        counts = np.zeros_like(t)
        ll = 0.0
        for g in groups:
            sub = t[g.E[:, :, None], g.F[:, None, :]]
            w = (1.0 - p0) * g.delta[None, :, :] * sub
            wn = p0 * t[ne, g.F]
            z = w.sum(axis=1) + wn
            ll += float(np.log(z).sum())
            np.add.at(counts, (g.Eb, g.Fb), (w / z[:, None, :]).reshape(-1))
            if p0 > 0.0:
                np.add.at(counts, (ne, g.F.reshape(-1)), (wn / z).reshape(-1))
        trace.append(ll)
        totals = counts.sum(axis=1, keepdims=True)
        uniform = np.full((1, nf), 1.0 / nf)
        t = np.where(totals > 0.0, counts / np.where(totals > 0.0, totals, 1.0), uniform)
    return TranslationTable(direction, cond_vocab, out_vocab, t, config, trace)


def _remap(table_vocab: Vocab, corpus_vocab: Vocab, oov_index: int) -> np.ndarray | None:
    if table_vocab is corpus_vocab or table_vocab.surfaces == corpus_vocab.surfaces:
        return None
    remap = np.empty(len(corpus_vocab), dtype=np.intp)
    for i, s in enumerate(corpus_vocab.surfaces):
        remap[i] = table_vocab.id(s) if s in table_vocab else oov_index
    return remap


def viterbi_align(
    table: TranslationTable,
    corpus: ParallelCorpus,
    config: AlignConfig | None = None,
) -> list[Links]:
    """Hard-decode one alignment per conditioned position.

    Links are (source index, target index) pairs regardless of direction.
    Ties prefer the smaller conditioning position; NULL yields no link.
    Token pairs without table support score at the decode floor.
    """
    config = config or table.config
    direction = table.direction
    cond_corpus, out_corpus = _sides(corpus, direction)
    ne, nf = len(table.cond_vocab), len(table.out_vocab)
    # Virtual floor row/column for tokens unknown to the table.
    t = np.zeros((ne + 2, nf + 1))
    t[: ne + 1, :nf] = table.probs
    cond_map = _remap(table.cond_vocab, cond_corpus, ne + 1)
    out_map = _remap(table.out_vocab, out_corpus, nf)
    groups = _grouped(corpus, direction, config.tension, cond_map, out_map)
    p0 = config.null_mass
    floor = config.decode_floor
    result: list[Links | None] = [None] * len(corpus)
    for g in groups:
        sub = np.maximum(t[g.E[:, :, None], g.F[:, None, :]], floor)
        w = (1.0 - p0) * g.delta[None, :, :] * sub
        wn = p0 * np.maximum(t[ne, g.F], floor)
        stacked = np.concatenate([w, wn[:, None, :]], axis=1)
        best = stacked.argmax(axis=1)
        n = g.E.shape[1]
        for r, row in enumerate(g.rows):
            links = []
            for j, i in enumerate(best[r]):
                if i == n:
                    continue
                links.append((int(i), j) if direction == "s2t" else (j, int(i)))
            result[row] = frozenset(links)
    return result  # type: ignore[return-value]


def link_f1(
    predicted: Sequence[AbstractSet[tuple[int, int]]],
    reference: Sequence[AbstractSet[tuple[int, int]]],
) -> float:
    """Micro-averaged link F1 against a reference alignment."""
    if len(predicted) != len(reference):
        raise ValueError("alignment collections differ in length")
    hit = sum(len(p & r) for p, r in zip(predicted, reference))
    np_, nr = sum(len(p) for p in predicted), sum(len(r) for r in reference)
    prec = hit / np_ if np_ else 0.0
    rec = hit / nr if nr else 0.0
    return 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)


def format_pharaoh(links: AbstractSet[tuple[int, int]]) -> str:
    return " ".join(f"{i}-{j}" for i, j in sorted(links))


def parse_pharaoh(line: str, lineno: int = 1) -> Links:
    links = []
    for tok in line.split():
        left, sep, right = tok.partition("-")
        if not sep or not left.isdigit() or not right.isdigit():
            raise ValueError(f"line {lineno}: malformed alignment entry {tok!r}")
        links.append((int(left), int(right)))
    return frozenset(links)


def write_pharaoh(alignments: Sequence[AbstractSet[tuple[int, int]]], path) -> None:
    atomic_write_text(path, "".join(format_pharaoh(a) + "\n" for a in alignments))


def read_pharaoh(path) -> list[Links]:
    with open(path, encoding="utf-8") as fh:
        return [parse_pharaoh(line, k) for k, line in enumerate(fh.read().splitlines(), 1)]


class IbmModel1(BaseEstimator):
    """Directed EM aligner with the estimator interface.

    fit() learns the translation table on a corpus; align()/predict()
    Viterbi-decodes link sets for a (possibly different) corpus.
    """

    def __init__(
        self,
        direction: str = "s2t",
        iterations: int = 5,
        null_mass: float = 0.08,
        tension: float = 4.0,
        decode_floor: float = 1e-12,
    ):
        self.direction = direction
        self.iterations = iterations
        self.null_mass = null_mass
        self.tension = tension
        self.decode_floor = decode_floor

    def _config(self) -> AlignConfig:
        return AlignConfig(
            iterations=self.iterations,
            null_mass=self.null_mass,
            tension=self.tension,
            decode_floor=self.decode_floor,
        )

    def fit(self, corpus: ParallelCorpus, y=None) -> "IbmModel1":
        self.table_ = em_train(corpus, self.direction, self._config())
        self.loglik_trace_ = list(self.table_.loglik_trace)
        return self

    def align(self, corpus: ParallelCorpus) -> list[Links]:
        check_is_fitted(self, "table_")
        return viterbi_align(self.table_, corpus)

    def predict(self, corpus: ParallelCorpus) -> list[Links]:
        return self.align(corpus)
