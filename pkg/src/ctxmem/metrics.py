"""Scoring utilities for the benchmarks: ROUGE-L and top-k accuracy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError


@dataclass(frozen=True)
class RougeScore:
    recall: float
    precision: float
    f1: float


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization, lowercased. Applied to both sides of a score."""
    return text.lower().split()


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence length via the classic DP table."""
    m, n = len(a), len(b)
    if m == 0 or n == 0:
        return 0
    prev = [0] * (n + 1)
    for i in range(1, m + 1):
        cur = [0] * (n + 1)
        ai = a[i - 1]
        for j in range(1, n + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[n]


def rouge_l(candidate, reference) -> RougeScore:
    """LCS-based ROUGE-L with empty-input scores defined as 0.

    Accepts token lists or raw strings (tokenized with :func:`tokenize`).
    recall = LCS/|reference|, precision = LCS/|candidate|, f1 = harmonic mean.
    """
    cand = tokenize(candidate) if isinstance(candidate, str) else list(candidate)
    ref = tokenize(reference) if isinstance(reference, str) else list(reference)
    lcs = lcs_length(cand, ref)
    recall = lcs / len(ref) if ref else 0.0
    precision = lcs / len(cand) if cand else 0.0
    f1 = 0.0 if recall + precision == 0 else 2 * recall * precision / (recall + precision)
    return RougeScore(recall=recall, precision=precision, f1=f1)


def topk_accuracy(predictions: Sequence[Sequence[str]], gold: Sequence[str], k: int) -> float:
    """Fraction of rows whose gold label appears among the first k predictions."""
    if len(predictions) != len(gold):
        raise ValidationError(
            f"{len(predictions)} prediction rows vs {len(gold)} gold labels"
        )
    if k < 1:
        raise ValidationError("k must be >= 1")
    if not gold:
        return 0.0
    hits = sum(1 for ranked, label in zip(predictions, gold) if label in list(ranked)[:k])
    return hits / len(gold)
