"""Toolkit for studying how knowledge distillation reshapes rare words in
parallel data: synthetic bilingual corpora with gold lexicons, an EM word
aligner, low-frequency link analysis, distilled-dataset construction, a toy
parallel-decoding translation student, and staged training strategies."""

__version__ = "0.1.0"
