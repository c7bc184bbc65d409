"""Desk-scale translation models: a lexical argmax teacher and a
non-autoregressive log-linear student.

The student predicts every target position independently from one source
embedding chosen by a rounded proportional position map, which keeps the
conditional-independence structure under study while training in seconds.
Plain SGD and explicit gradients make finite-difference checks exact.
"""
from __future__ import annotations

import functools
import json
import math
from typing import Callable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .align import AlignConfig, TranslationTable, check_direction, em_train
from .corpus import ParallelCorpus, Vocab
from .synthlang import GoldLexicon
from .util import digest_of, rng_for


class LexicalTeacher:
    """Token-by-token argmax translator; ties go to the lowest target id.

    Tokens outside the mapping are copied through unchanged, so the output
    always has the input's length.
    """

    def __init__(self, mapping: dict[str, str], direction: str, description: str):
        self.direction = check_direction(direction)
        self.description = description
        self._map = dict(mapping)

    @classmethod
    def from_table(cls, table: TranslationTable) -> "LexicalTeacher":
        ne = len(table.cond_vocab)
        best = np.asarray(table.probs[:ne]).argmax(axis=1)
        mapping = {
            table.cond_vocab.surface(i): table.out_vocab.surface(int(best[i]))
            for i in range(ne)
        }
        return cls(mapping, table.direction, "lexical argmax teacher")

    @classmethod
    def from_lexicon(cls, lexicon: GoldLexicon, direction: str = "s2t") -> "LexicalTeacher":
        if direction == "t2s":
            # Invert: each target goes to the source that emits it with the
            # highest mode probability, ties to the smaller surface.
            best: dict[str, tuple[float, str]] = {}
            for src in lexicon.entries:
                for tgt, prob in lexicon.modes(src):
                    cand = (-prob, src)
                    if tgt not in best or cand < best[tgt]:
                        best[tgt] = cand
            mapping = {tgt: src for tgt, (_, src) in best.items()}
        else:
            mapping = {src: lexicon.modal_translation(src) for src in lexicon.entries}
        return cls(mapping, direction, "gold modal argmax teacher")

    def translate(self, tokens: Sequence[str]) -> list[str]:
        return [self._map.get(t, t) for t in tokens]


def teacher_fit(
    corpus: ParallelCorpus, direction: str = "s2t", config: AlignConfig | None = None
) -> LexicalTeacher:
    """EM-train a translation table and wrap its argmax as a Translator."""
    return LexicalTeacher.from_table(em_train(corpus, direction, config))


@functools.lru_cache(maxsize=4096)
def position_map(target_length: int, source_length: int) -> np.ndarray:
    """Rounded proportional index map from target to source positions."""
    j = np.arange(target_length)
    m = np.floor(j * source_length / target_length + 0.5).astype(np.intp)
    np.clip(m, 0, source_length - 1, out=m)
    # Cached across calls; callers only ever index with it.
    m.flags.writeable = False
    return m


class NatStudent(BaseEstimator):
    """Per-position log-linear model trained with plain SGD.

    Position j's distribution is softmax(E[x_{m(j)}] @ W + b); the embedding
    matrix has one extra padding row for unknown source tokens.  Target
    length at decode time comes from a count-based model over target-minus-
    source length differences.
    """

    def __init__(
        self,
        dim: int = 32,
        learning_rate: float = 0.5,
        batch_size: int = 32,
        label_smoothing: float = 0.1,
        init_scale: float = 0.1,
        seed: int = 0,
    ):
        self.dim = dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.label_smoothing = label_smoothing
        self.init_scale = init_scale
        self.seed = seed

    # -- setup ----------------------------------------------------------

    def _check_params(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.label_smoothing < 1.0):
            raise ValueError("label_smoothing must lie in [0, 1)")

    def _init_from(self, corpus: ParallelCorpus) -> None:
        self._check_params()
        self.source_vocab_ = corpus.source_vocab
        self.target_vocab_ = corpus.target_vocab
        rng = rng_for(self.seed, "toynmt.init")
        ns, nt = len(self.source_vocab_) + 1, len(self.target_vocab_)
        self.embeddings_ = self.init_scale * rng.standard_normal((ns, self.dim))
        self.projection_ = self.init_scale * rng.standard_normal((self.dim, nt))
        self.bias_ = np.zeros(nt)
        self.delta_counts_: dict[int, int] = {}
        self.trace_: list[dict] = []
        self.step_ = 0
        self.oov_sources_ = 0
        self._rng = rng_for(self.seed, "toynmt.train")
        self._epoch_corpus: ParallelCorpus | None = None
        self._epoch_order: np.ndarray | None = None
        self._epoch_cursor = 0
        self._staged_corpus: ParallelCorpus | None = None
        self._staged_arrays: tuple[list, list] = ([], [])
        self._counted_digests: set[str] = set()

    @property
    def pad_row(self) -> int:
        return len(self.source_vocab_)

    def config_digest(self) -> str:
        keys = sorted(self.get_params())
        return digest_of([f"{k}={self.get_params()[k]}" for k in keys])

    # -- encoding -------------------------------------------------------

    def _encode_source(self, tokens: Sequence[str]) -> np.ndarray:
        ids = np.empty(len(tokens), dtype=np.intp)
        for k, t in enumerate(tokens):
            if t in self.source_vocab_:
                ids[k] = self.source_vocab_.id(t)
            else:
                ids[k] = self.pad_row
                self.oov_sources_ += 1
        return ids

    def _stage_data(self, corpus: ParallelCorpus) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Re-encode a corpus into the student's id space.

        The result is cached per corpus object, and the length-delta and OOV
        statistics are accumulated once per distinct corpus content, so
        repeated training calls on the same data do not double-count.
        """
        if self._staged_corpus is corpus:
            return self._staged_arrays
        src_map = np.empty(len(corpus.source_vocab), dtype=np.intp)
        oov_types = set()
        for i, s in enumerate(corpus.source_vocab.surfaces):
            if s in self.source_vocab_:
                src_map[i] = self.source_vocab_.id(s)
            else:
                src_map[i] = self.pad_row
                oov_types.add(i)
        tgt_map = np.empty(len(corpus.target_vocab), dtype=np.intp)
        for i, s in enumerate(corpus.target_vocab.surfaces):
            if s not in self.target_vocab_:
                raise ValueError(f"target token {s!r} unknown to the student")
            tgt_map[i] = self.target_vocab_.id(s)
        count_stats = corpus.digest() not in self._counted_digests
        if count_stats:
            self._counted_digests.add(corpus.digest())
        sources, targets, rows = [], [], []
        for p in corpus.pairs:
            if count_stats and oov_types:
                self.oov_sources_ += sum(1 for t in p.source if t in oov_types)
            src = src_map[np.asarray(p.source, dtype=np.intp)]
            sources.append(src)
            targets.append(tgt_map[np.asarray(p.target, dtype=np.intp)])
            rows.append(src[position_map(len(p.target), len(p.source))])
            if count_stats:
                d = len(p.target) - len(p.source)
                self.delta_counts_[d] = self.delta_counts_.get(d, 0) + 1
        self._staged_corpus = corpus
        self._staged_arrays = (sources, targets, rows)
        return sources, targets, rows

    # -- forward and gradients -----------------------------------------

    def _logits(self, src_ids: np.ndarray, target_length: int) -> tuple[np.ndarray, np.ndarray]:
        rows = src_ids[position_map(target_length, len(src_ids))]
        e = self.embeddings_[rows]
        return rows, e @ self.projection_ + self.bias_

    def forward(
        self,
        source: Sequence[str],
        target_length: int,
        reference: Sequence[str] | None = None,
    ) -> tuple[np.ndarray, float | None]:
        """Per-position output distributions, plus the loss when a reference
        of matching length is given."""
        check_is_fitted(self, "embeddings_")
        if target_length < 1:
            raise ValueError("target_length must be >= 1")
        src_ids = self._encode_source(source)
        _, z = self._logits(src_ids, target_length)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        loss = None
        if reference is not None:
            if len(reference) != target_length:
                raise ValueError("reference length must equal target_length")
            ref_ids = np.array([self.target_vocab_.id(t) for t in reference])
            loss = float(self._position_losses(z, ref_ids).mean())
        return p, loss

    def _position_losses(self, shifted_logits: np.ndarray, ref_ids: np.ndarray) -> np.ndarray:
        # Cross-entropy against (1 - eps) on the reference plus eps spread
        # uniformly over the target vocabulary.
        logz = np.log(np.exp(shifted_logits).sum(axis=1))
        logp = shifted_logits - logz[:, None]
        eps = self.label_smoothing
        nt = logp.shape[1]
        picked = logp[np.arange(len(ref_ids)), ref_ids]
        return -((1.0 - eps) * picked + eps * logp.sum(axis=1) / nt)

    def loss_and_gradients(
        self, batch: Sequence[tuple[np.ndarray, np.ndarray]]
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean label-smoothed cross-entropy over all positions in the batch,
        with analytic gradients for every parameter array.

        Batch entries are (source ids, target ids) already in this student's
        id spaces; source ids may include the padding row.
        """
        # All sentences share one parameter set, so the batch flattens into a
        # single (positions, vocab) problem; this keeps the step cost in a few
        # large matrix products instead of per-sentence loops.
        rows = np.concatenate(
            [src[position_map(len(tgt), len(src))] for src, tgt in batch]
        )
        refs = np.concatenate([np.asarray(tgt, dtype=np.intp) for _, tgt in batch])
        return self._step_arrays(rows, refs)

    def _step_arrays(
        self, rows: np.ndarray, refs: np.ndarray
    ) -> tuple[float, dict[str, np.ndarray]]:
        check_is_fitted(self, "embeddings_")
        total = len(refs)
        eps = self.label_smoothing
        nt = len(self.target_vocab_)
        pick = np.arange(total)
        e = self.embeddings_[rows]
        z = e @ self.projection_
        z += self.bias_
        z -= z.max(axis=1, keepdims=True)
        zsum = z.sum(axis=1)
        zref = z[pick, refs]
        np.exp(z, out=z)  # z now holds unnormalized probabilities
        denom = z.sum(axis=1)
        logden = np.log(denom)
        picked = zref - logden
        smooth = zsum / nt - logden  # mean log-probability per position
        loss = float(-((1.0 - eps) * picked + eps * smooth).mean())
        g = z
        g /= denom[:, None]
        g[pick, refs] -= 1.0 - eps
        g -= eps / nt
        g /= total
        d_emb = np.zeros_like(self.embeddings_)
        np.add.at(d_emb, rows, g @ self.projection_.T)
        return loss, {"embeddings": d_emb, "projection": e.T @ g, "bias": g.sum(axis=0)}

    # -- training -------------------------------------------------------

    def fit(self, corpus: ParallelCorpus, steps: int = 1000, hook=None) -> "NatStudent":
        """Initialize from the corpus vocabularies and train for `steps`."""
        self._init_from(corpus)
        return self.partial_fit(corpus, steps, hook)

    def partial_fit(
        self,
        corpus: ParallelCorpus,
        steps: int,
        hook: Callable[["NatStudent", int], dict | None] | None = None,
    ) -> "NatStudent":
        """Train for exactly `steps` mini-batch SGD steps, continuing any
        earlier training. Calling again with the same corpus object resumes
        the current shuffling pass, so split calls match one long call; a
        different corpus starts a fresh pass."""
        if steps < 0:
            raise ValueError("steps must be >= 0")
        if not hasattr(self, "embeddings_"):
            self._init_from(corpus)
        if steps == 0:
            # Zero-step calls only establish the parameter shapes; staging
            # and the shuffling pass wait for a real training call.
            return self
        sources, targets, pair_rows = self._stage_data(corpus)
        n = len(sources)
        if self._epoch_corpus is not corpus or self._epoch_order is None:
            self._epoch_corpus = corpus
            self._epoch_order = self._rng.permutation(n)
            self._epoch_cursor = 0
        order = self._epoch_order
        cursor = self._epoch_cursor
        lr = self.learning_rate
        for _ in range(steps):
            if cursor >= n:
                order = self._rng.permutation(n)
                cursor = 0
            take = order[cursor : cursor + self.batch_size]
            cursor += self.batch_size
            rows = np.concatenate([pair_rows[k] for k in take])
            refs = np.concatenate([targets[k] for k in take])
            loss, grads = self._step_arrays(rows, refs)
            self.step_ += 1
            if not math.isfinite(loss):
                raise ValueError(f"non-finite loss at step {self.step_}")
            self.embeddings_ -= lr * grads["embeddings"]
            self.projection_ -= lr * grads["projection"]
            self.bias_ -= lr * grads["bias"]
            entry = {"step": self.step_, "loss": loss}
            if hook is not None:
                extra = hook(self, self.step_)
                if extra:
                    entry.update(extra)
            self.trace_.append(entry)
        self._epoch_order = order
        self._epoch_cursor = cursor
        return self

    # -- decoding -------------------------------------------------------

    def predict_length(self, source_length: int) -> int:
        check_is_fitted(self, "embeddings_")
        if self.delta_counts_:
            best = sorted(
                self.delta_counts_.items(), key=lambda kv: (-kv[1], abs(kv[0]), kv[0])
            )[0][0]
        else:
            best = 0
        return max(1, source_length + best)

    def decode(self, source: Sequence[str]) -> list[str]:
        """Independent per-position argmax at the predicted target length."""
        p, _ = self.forward(source, self.predict_length(len(source)))
        return [self.target_vocab_.surface(int(k)) for k in p.argmax(axis=1)]

    def predict(self, sentences: Sequence[Sequence[str]]) -> list[list[str]]:
        return [self.decode(s) for s in sentences]

    # -- persistence ----------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "embeddings_")
        deltas = sorted(self.delta_counts_.items())
        np.savez(
            path,
            embeddings=self.embeddings_,
            projection=self.projection_,
            bias=self.bias_,
            delta_values=np.array([d for d, _ in deltas], dtype=np.int64),
            delta_counts=np.array([c for _, c in deltas], dtype=np.int64),
            source_surfaces=np.array(self.source_vocab_.surfaces),
            source_counts=np.array(self.source_vocab_.counts, dtype=np.int64),
            target_surfaces=np.array(self.target_vocab_.surfaces),
            target_counts=np.array(self.target_vocab_.counts, dtype=np.int64),
            config=json.dumps(
                {"params": self.get_params(), "digest": self.config_digest(),
                 "step": self.step_}
            ),
        )

    @classmethod
    def load(cls, path) -> "NatStudent":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(data["config"].item())
        student = cls(**meta["params"])
        student.source_vocab_ = Vocab(
            tuple(data["source_surfaces"]), tuple(int(c) for c in data["source_counts"])
        )
        student.target_vocab_ = Vocab(
            tuple(data["target_surfaces"]), tuple(int(c) for c in data["target_counts"])
        )
        student.embeddings_ = data["embeddings"]
        student.projection_ = data["projection"]
        student.bias_ = data["bias"]
        student.delta_counts_ = {
            int(d): int(c) for d, c in zip(data["delta_values"], data["delta_counts"])
        }
        student.trace_ = []
        student.step_ = int(meta["step"])
        student.oov_sources_ = 0
        student._rng = rng_for(student.seed, "toynmt.train")
        student._epoch_corpus = None
        student._epoch_order = None
        student._epoch_cursor = 0
        student._staged_corpus = None
        student._staged_arrays = ([], [])
        student._counted_digests = set()
        return student

    def write_trace(self, path) -> None:
        from .util import atomic_write_text

        lines = "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.trace_)
        atomic_write_text(path, lines)


def student_forward(student: NatStudent, source, target_length, reference=None):
    return student.forward(source, target_length, reference)


def student_train(student: NatStudent, corpus, steps, hook=None) -> list[dict]:
    student.partial_fit(corpus, steps, hook)
    return student.trace_


def student_decode(student: NatStudent, source) -> list[str]:
    return student.decode(source)
