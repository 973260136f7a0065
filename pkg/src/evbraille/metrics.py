"""Hierarchical word-reading metrics.

Each metric is conditional on the one before: letter counts are only
compared for words in lines whose word count was right, and exact-word and
per-letter accuracy only over words whose letter count was right.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence


@dataclass(frozen=True)
class WordMetrics:
    words_per_line: float
    letters_per_word: float
    correct_words: float
    correct_letters: float

    def as_tuple(self):
        return (self.words_per_line, self.letters_per_word, self.correct_words, self.correct_letters)

    def to_dict(self):
        return asdict(self)


def _words(line) -> list[str]:
    return line.split() if isinstance(line, str) else list(line)


def _frac(num: int, den: int) -> float:
    # an empty subset scores 0: nothing reached that level
    return num / den if den else 0.0


def compute_word_metrics(predicted: Sequence, truth: Sequence) -> WordMetrics:
    """Lines are strings of space-separated words or lists of words."""
    if len(truth) == 0:
        raise ValueError("ground truth is empty")
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted lines for {len(truth)} ground-truth lines")
    lines_ok = 0
    pairs = []
    for p, g in zip(predicted, truth):
        pw, gw = _words(p), _words(g)
        if len(pw) == len(gw):
            lines_ok += 1
            pairs += list(zip(pw, gw))
    same_len = [(p, g) for p, g in pairs if len(p) == len(g)]
    exact = sum(p == g for p, g in same_len)
    letters = sum(len(g) for _, g in same_len)
    letters_ok = sum(a == b for p, g in same_len for a, b in zip(p, g))
    return WordMetrics(
        _frac(lines_ok, len(truth)),
        _frac(len(same_len), len(pairs)),
        _frac(exact, len(same_len)),
        _frac(letters_ok, letters),
    )


def unconditional_word_accuracy(predicted: Sequence, truth: Sequence) -> float:
    """Fraction of ground-truth words reproduced exactly at their position in the line."""
    total = hits = 0
    for p, g in zip(predicted, truth):
        pw, gw = _words(p), _words(g)
        total += len(gw)
        hits += sum(1 for i, w in enumerate(gw) if i < len(pw) and pw[i] == w)
    return _frac(hits, total)
