"""Lexical overlap metrics: ROUGE-N, ROUGE-L and METEOR (exact + stem stages)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .text import tokenize

__all__ = ["MetricScore", "tokenize", "rouge_n", "lcs_length", "rouge_l", "meteor", "stem"]

METEOR_ALPHA = 0.9  # Fmean = PR / (alpha*P + (1-alpha)*R) = 10PR / (R + 9P)
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
STEM_SUFFIXES = ("ing", "ed", "es", "s")
MIN_STEM = 3


@dataclass(frozen=True)
class MetricScore:
    metric: str
    precision: float
    recall: float
    f: float
    # METEOR only: fragmentation penalty applied to Fmean
    penalty: float = 0.0


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(cand: Sequence[str], ref: Sequence[str], n: int = 1) -> MetricScore:
    """Clipped n-gram overlap; zeros when either side has no n-grams."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c, r = _ngrams(cand, n), _ngrams(ref, n)
    total_c, total_r = sum(c.values()), sum(r.values())
    name = f"rouge{n}"
    if not total_c or not total_r:
        return MetricScore(name, 0.0, 0.0, 0.0)
    overlap = sum(min(cnt, r[g]) for g, cnt in c.items())
    p, rec = overlap / total_c, overlap / total_r
    return MetricScore(name, p, rec, _f1(p, rec))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(cand: Sequence[str], ref: Sequence[str]) -> MetricScore:
    """LCS-based ROUGE with a balanced F (beta = 1)."""
    if not cand or not ref:
        return MetricScore("rougeL", 0.0, 0.0, 0.0)
    lcs = lcs_length(cand, ref)
    p, r = lcs / len(cand), lcs / len(ref)
    return MetricScore("rougeL", p, r, _f1(p, r))


def stem(token: str) -> str:
    for suffix in STEM_SUFFIXES:
        if token.endswith(suffix) and len(token) - len(suffix) >= MIN_STEM:
            return token[: -len(suffix)]
    return token


def _align_stage(
    cand_keys: Sequence[str],
    ref_keys: Sequence[str],
    alignment: dict[int, int],
) -> None:
    """Greedily extend ``alignment`` (cand pos -> ref pos) with equal keys.

    Candidate tokens are visited left to right. Each takes the reference
    position that continues the run of its left neighbour when possible,
    otherwise the leftmost free match. Every key type still pairs
    min(count_cand, count_ref) free tokens, so the match count is maximal.
    """
    used = set(alignment.values())
    free: dict[str, list[int]] = {}
    for j, key in enumerate(ref_keys):
        if j not in used:
            free.setdefault(key, []).append(j)
    for i, key in enumerate(cand_keys):
        if i in alignment or not free.get(key):
            continue
        slots = free[key]
        want = alignment.get(i - 1, -2) + 1
        j = want if want in slots else slots[0]
        slots.remove(j)
        alignment[i] = j


def _count_chunks(alignment: dict[int, int]) -> int:
    chunks = 0
    prev: tuple[int, int] | None = None
    for i in sorted(alignment):
        j = alignment[i]
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(cand: Sequence[str], ref: Sequence[str]) -> MetricScore:
    """METEOR with exact then stem matching and the standard fragmentation penalty."""
    alignment: dict[int, int] = {}
    _align_stage(cand, ref, alignment)
    _align_stage([stem(t) for t in cand], [stem(t) for t in ref], alignment)
    m = len(alignment)
    if m == 0:
        return MetricScore("meteor", 0.0, 0.0, 0.0)
    p, r = m / len(cand), m / len(ref)
    fmean = p * r / (METEOR_ALPHA * p + (1 - METEOR_ALPHA) * r)
    penalty = METEOR_GAMMA * (_count_chunks(alignment) / m) ** METEOR_BETA
    return MetricScore("meteor", p, r, fmean * (1 - penalty), penalty)


def lexical_scores(candidate: str, reference: str) -> dict[str, float]:
    c, r = tokenize(candidate), tokenize(reference)
    return {"rouge1": rouge_n(c, r, 1).f, "rougeL": rouge_l(c, r).f, "meteor": meteor(c, r).f}
