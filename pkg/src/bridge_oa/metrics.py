"""Transcript normalization and word error rate."""

from __future__ import annotations

import re
from typing import Sequence

_NON_WORD = re.compile(r"[^a-z0-9']+")


def normalize_text(raw: str) -> list[str]:
    """Lowercase, strip punctuation, and split into tokens.

    Apostrophes survive inside words ("don't") but are stripped from
    token edges. The same normalization is applied to references and
    hypotheses before scoring.
    """
    tokens = _NON_WORD.sub(" ", raw.lower()).split()
    return [t.strip("'") for t in tokens if t.strip("'")]


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Levenshtein word distance with unit substitution/insertion/deletion costs."""
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            cur[j] = min(prev[j - 1] + cost, prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[m]


def wer(ref: Sequence[str], hyp: Sequence[str]) -> float:
    """Word error rate: edit distance divided by reference length.

    Not clipped, so heavily hallucinated hypotheses can exceed 1.
    """
    if len(ref) == 0:
        raise ValueError("reference transcript is empty; WER is undefined")
    return edit_distance(ref, hyp) / len(ref)
