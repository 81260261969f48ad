"""Automatic evaluation suite: BLEU-n, Distinct-n, ROUGE-L, strategy accuracy,
perplexity bookkeeping, and the cross-method normalized aggregate score."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

HIGHER_BETTER = "higher_better"
LOWER_BETTER = "lower_better"

# Direction of every metric the aggregate knows about; perplexity is the only
# lower-is-better column.
DEFAULT_DIRECTIONS = {
    "acc": HIGHER_BETTER,
    "ppl": LOWER_BETTER,
    "b1": HIGHER_BETTER,
    "b2": HIGHER_BETTER,
    "b3": HIGHER_BETTER,
    "b4": HIGHER_BETTER,
    "d1": HIGHER_BETTER,
    "d2": HIGHER_BETTER,
    "rl": HIGHER_BETTER,
}


class MetricError(ValueError):
    pass


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(
    candidate: Sequence[str], references: Sequence[Sequence[str]], n: int
) -> float:
    """Modified n-gram precision with brevity penalty, geometric mean over 1..n.

    Zero counts at orders >= 2 get add-one smoothing so short outputs do not
    collapse the geometric mean.
    """
    if not 1 <= n <= 4:
        raise MetricError(f"n must be in 1..4, got {n}")
    return corpus_bleu([candidate], [references], n)


def corpus_bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[Sequence[str]]],
    n: int,
) -> float:
    """Corpus-level BLEU-n over parallel candidate/reference lists, in percent."""
    if not 1 <= n <= 4:
        raise MetricError(f"n must be in 1..4, got {n}")
    if len(candidates) != len(references):
        raise MetricError("candidates and references must have equal length")
    clipped = [0] * n
    totals = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        cand = list(cand)
        refs = [list(r) for r in refs]
        if not refs:
            raise MetricError("every candidate needs at least one reference")
        cand_len += len(cand)
        # Closest reference length, ties to the shorter.
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for order in range(1, n + 1):
            cand_counts = _ngrams(cand, order)
            if not cand_counts:
                continue
            max_ref = Counter()
            for r in refs:
                for gram, c in _ngrams(r, order).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            clipped[order - 1] += sum(min(c, max_ref[gram]) for gram, c in cand_counts.items())
            totals[order - 1] += sum(cand_counts.values())
    if cand_len == 0 or totals[0] == 0:
        return 0.0
    log_sum = 0.0
    for order in range(1, n + 1):
        num, den = clipped[order - 1], totals[order - 1]
        if den == 0:
            return 0.0
        if num == 0:
            if order == 1:
                return 0.0
            num, den = num + 1, den + 1  # add-one smoothing for higher orders
        log_sum += math.log(num / den) / n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * math.exp(log_sum)


def distinct_n(responses: Sequence[Sequence[str]], n: int) -> float:
    """Unique n-grams over total n-grams across all responses, in percent."""
    if n not in (1, 2):
        raise MetricError(f"n must be 1 or 2, got {n}")
    total = 0
    unique = set()
    for resp in responses:
        grams = [tuple(resp[i : i + n]) for i in range(len(resp) - n + 1)]
        total += len(grams)
        unique.update(grams)
    if total == 0:
        return 0.0
    return 100.0 * len(unique) / total


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """Longest common subsequence via the standard DP recurrence."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str], beta: float = 1.2) -> float:
    """LCS F-measure with recall-weighted beta, in percent."""
    if not reference:
        return 0.0
    if not candidate:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    f = (1 + beta**2) * precision * recall / (recall + beta**2 * precision)
    return 100.0 * f


def corpus_rouge_l(
    candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]
) -> float:
    if len(candidates) != len(references):
        raise MetricError("candidates and references must have equal length")
    if not candidates:
        return 0.0
    return sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)


def strategy_acc(
    predictions: Sequence[Sequence[int]], gold: Sequence[int], n: int = 1
) -> float:
    """Fraction of examples whose gold strategy is within the top-n ranks, in percent."""
    if len(predictions) != len(gold):
        raise MetricError("predictions and gold must have equal length")
    if not predictions:
        return 0.0
    hits = sum(1 for ranked, g in zip(predictions, gold) if g in list(ranked)[:n])
    return 100.0 * hits / len(predictions)


@dataclass
class MetricReport:
    """The full ten-entry evaluation record."""

    acc: float
    acc_top_n: dict[int, float]
    ppl: float
    bleu: dict[int, float]
    distinct: dict[int, float]
    rouge_l: float
    s_norm: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "acc_top_n": {str(k): v for k, v in self.acc_top_n.items()},
            "ppl": self.ppl,
            "bleu": {str(k): v for k, v in self.bleu.items()},
            "distinct": {str(k): v for k, v in self.distinct.items()},
            "rouge_l": self.rouge_l,
            "s_norm": self.s_norm,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    def as_row(self) -> dict[str, float]:
        """Flat metric-name -> value map, as consumed by the aggregate score."""
        row = {
            "acc": self.acc,
            "ppl": self.ppl,
            "rl": self.rouge_l,
        }
        for k, v in self.bleu.items():
            row[f"b{k}"] = v
        for k, v in self.distinct.items():
            row[f"d{k}"] = v
        return row


def s_norm(
    table: dict[str, dict[str, Optional[float]]],
    directions: Optional[dict[str, str]] = None,
) -> dict[str, float]:
    """Per-metric min-max normalization across methods, then per-method mean.

    Missing entries (``None`` or absent) are excluded from that method's mean.
    A degenerate metric column (best == worst) contributes 0.5 to every row.
    """
    if len(table) < 2:
        raise MetricError("need at least 2 methods to normalize")
    directions = directions or DEFAULT_DIRECTIONS
    metrics = sorted({m for row in table.values() for m, v in row.items() if v is not None})
    bounds: dict[str, tuple[float, float]] = {}
    for m in metrics:
        vals = [row[m] for row in table.values() if row.get(m) is not None]
        if len(vals) < 2:
            raise MetricError(f"metric {m!r} needs values from at least 2 methods")
        direction = directions.get(m, HIGHER_BETTER)
        if direction == LOWER_BETTER:
            bounds[m] = (min(vals), max(vals))  # (best, worst)
        else:
            bounds[m] = (max(vals), min(vals))
    out = {}
    for method, row in table.items():
        scores = []
        for m in metrics:
            v = row.get(m)
            if v is None:
                continue
            best, worst = bounds[m]
            if best == worst:
                scores.append(0.5)
            else:
                scores.append((v - worst) / (best - worst))
        if not scores:
            raise MetricError(f"method {method!r} has no metric values")
        out[method] = sum(scores) / len(scores)
    return out
