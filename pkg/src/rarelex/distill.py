"""Sequence-level distillation of parallel corpora.

Forward distillation keeps the source side and replaces each target sentence
with a teacher translation of its source; reverse distillation keeps the
target side and replaces each source sentence.  The bidirectional set is the
concatenation of both.  Teachers are anything satisfying the Translator
contract, which lets precomputed outputs produced elsewhere be replayed from
a file without any model code.
"""
from __future__ import annotations

from typing import Protocol, Sequence, runtime_checkable

from .align import check_direction
from .corpus import ParallelCorpus, SentencePair, Vocab, concat
from .util import digest_of


@runtime_checkable
class Translator(Protocol):
    direction: str
    description: str

    def translate(self, tokens: Sequence[str]) -> list[str]: ...


class FileTranslator:
    """Replays precomputed translations line-by-line, in call order."""

    def __init__(self, path, direction: str = "s2t", description: str | None = None):
        self.direction = check_direction(direction)
        self.description = description or "file replay"
        with open(path, encoding="utf-8") as fh:
            self._lines = [line.split() for line in fh.read().splitlines()]
        self._cursor = 0

    @property
    def remaining(self) -> int:
        return len(self._lines) - self._cursor

    def translate(self, tokens: Sequence[str]) -> list[str]:
        if self._cursor >= len(self._lines):
            raise ValueError(f"file translator exhausted after {len(self._lines)} lines")
        out = self._lines[self._cursor]
        self._cursor += 1
        return list(out)


def _translate_all(
    teacher: Translator, sentences: Sequence[list[str]], pair_ids: Sequence[int]
) -> list[list[str]]:
    out = []
    for pid, sent in zip(pair_ids, sentences):
        try:
            hyp = teacher.translate(sent)
        except Exception as exc:
            raise RuntimeError(f"teacher failed on pair {pid}: {exc}") from exc
        if not hyp:
            raise RuntimeError(f"teacher failed on pair {pid}: empty translation")
        out.append(list(hyp))
    return out


def distill_forward(raw: ParallelCorpus, teacher: Translator) -> ParallelCorpus:
    """Replace target sentences with teacher translations of the sources.

    Pair ids and the source side are preserved bit-exactly.
    """
    if teacher.direction != "s2t":
        raise ValueError(f"forward distillation needs an s2t teacher, got {teacher.direction!r}")
    ids = raw.pair_ids()
    hyps = _translate_all(teacher, raw.source_sentences(), ids)
    tgt_vocab = Vocab.from_sentences(hyps)
    pairs = tuple(
        SentencePair(p.pair_id, p.source, tgt_vocab.encode(h))
        for p, h in zip(raw.pairs, hyps)
    )
    return ParallelCorpus(raw.source_vocab, tgt_vocab, pairs, "kd")


def distill_reverse(raw: ParallelCorpus, teacher: Translator) -> ParallelCorpus:
    """Replace source sentences with teacher translations of the targets.

    Pair ids and the target side are preserved bit-exactly.
    """
    if teacher.direction != "t2s":
        raise ValueError(f"reverse distillation needs a t2s teacher, got {teacher.direction!r}")
    ids = raw.pair_ids()
    hyps = _translate_all(teacher, raw.target_sentences(), ids)
    src_vocab = Vocab.from_sentences(hyps)
    pairs = tuple(
        SentencePair(p.pair_id, src_vocab.encode(h), p.target)
        for p, h in zip(raw.pairs, hyps)
    )
    return ParallelCorpus(src_vocab, raw.target_vocab, pairs, "rkd")


def build_bidirectional(
    raw: ParallelCorpus, fwd_teacher: Translator, rev_teacher: Translator
) -> ParallelCorpus:
    """Concatenate forward and reverse distillations of the same corpus."""
    return concat(distill_forward(raw, fwd_teacher), distill_reverse(raw, rev_teacher))


def manifest(distilled: ParallelCorpus, teacher: Translator, origin: ParallelCorpus) -> dict:
    """Provenance record for a distilled corpus, suitable for JSON output."""
    return {
        "provenance": distilled.provenance,
        "pairs": len(distilled),
        "teacher": {"direction": teacher.direction, "description": teacher.description},
        "origin_digest": origin.digest(),
        "digest": distilled.digest(),
        "manifest_digest": digest_of(
            [distilled.provenance, teacher.direction, teacher.description,
             origin.digest(), distilled.digest()]
        ),
    }
