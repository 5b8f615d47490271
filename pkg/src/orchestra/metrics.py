"""Classification metrics: confusion counts, macro SEN/SPE, F1 and rank AUC suites."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import EmptyMatrix, LengthMismatch


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]  # rows = gold, cols = predicted
    abstain: tuple[int, ...]  # per gold label

    @property
    def scored(self) -> int:
        return sum(map(sum, self.counts))

    @property
    def total(self) -> int:
        """All cases, abstentions included."""
        return self.scored + sum(self.abstain)

    def per_label(self) -> list[tuple[int, int, int]]:
        """(TP, FP, FN) per label; abstentions count as misses for their gold label."""
        n = len(self.labels)
        out = []
        for c in range(n):
            tp = self.counts[c][c]
            fp = sum(self.counts[g][c] for g in range(n)) - tp
            fn = sum(self.counts[c]) - tp + self.abstain[c]
            out.append((tp, fp, fn))
        return out

    def supports(self) -> list[int]:
        return [sum(row) + a for row, a in zip(self.counts, self.abstain)]


def confusion(preds: Sequence[str | None], golds: Sequence[str], labels: Sequence[str]) -> ConfusionMatrix:
    """Tally (gold, predicted) pairs; ``None`` predictions are abstentions."""
    if len(preds) != len(golds):
        raise LengthMismatch(f"{len(preds)} predictions for {len(golds)} gold labels")
    index = {label: i for i, label in enumerate(labels)}
    n = len(labels)
    counts = [[0] * n for _ in range(n)]
    abstain = [0] * n
    for p, g in zip(preds, golds):
        if g not in index:
            raise ValueError(f"gold label {g!r} not in label set")
        if p is None:
            abstain[index[g]] += 1
        elif p in index:
            counts[index[g]][index[p]] += 1
        else:
            raise ValueError(f"prediction {p!r} not in label set")
    return ConfusionMatrix(tuple(labels), tuple(map(tuple, counts)), tuple(abstain))


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def macro_metrics(matrix: ConfusionMatrix) -> tuple[float, float | None, float | None]:
    """(accuracy, macro sensitivity, macro specificity), one-vs-rest per class.

    Classes whose denominator is zero are left out of the corresponding mean.
    """
    total = matrix.total
    if total == 0:
        raise EmptyMatrix("no cases to score")
    accuracy = sum(matrix.counts[i][i] for i in range(len(matrix.labels))) / total
    sens, specs = [], []
    for tp, fp, fn in matrix.per_label():
        tn = total - tp - fp - fn
        if tp + fn:
            sens.append(tp / (tp + fn))
        if tn + fp:
            specs.append(tn / (tn + fp))
    return accuracy, _mean(sens), _mean(specs)


def f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_suite(counts: Sequence[tuple[int, int, int]], supports: Sequence[int]) -> tuple[float, float, float]:
    """(micro, macro, weighted) F1 from per-label (TP, FP, FN) counts."""
    if not counts:
        return 0.0, 0.0, 0.0
    per = [f1(*c) for c in counts]
    micro = f1(sum(c[0] for c in counts), sum(c[1] for c in counts), sum(c[2] for c in counts))
    macro = sum(per) / len(per)
    total = sum(supports)
    weighted = sum(f * s for f, s in zip(per, supports)) / total if total else 0.0
    return micro, macro, weighted


def rank_auc(scores: Sequence[float], golds: Sequence[int]) -> float | None:
    """P(random positive outscores random negative), ties counting one half.

    Computed from mid-ranks (Mann-Whitney U). None unless both classes occur.
    """
    pos = sum(1 for g in golds if g)
    neg = len(golds) - pos
    if pos == 0 or neg == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        mid = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mid
        i = j + 1
    rank_sum = sum(r for r, g in zip(ranks, golds) if g)
    return (rank_sum - pos * (pos + 1) / 2) / (pos * neg)


def auc_suite(
    scores: Sequence[Sequence[float]], golds: Sequence[Sequence[int]]
) -> tuple[float | None, float | None, float | None]:
    """(micro, macro, weighted) AUC over per-case, per-label scores and binary golds.

    Labels lacking positives or negatives are skipped for macro and weighted
    but still pooled into micro.
    """
    if len(scores) != len(golds):
        raise LengthMismatch(f"{len(scores)} score rows for {len(golds)} gold rows")
    if not scores:
        return None, None, None
    n_labels = len(scores[0])
    per, weights = [], []
    for c in range(n_labels):
        col_s = [row[c] for row in scores]
        col_g = [row[c] for row in golds]
        auc = rank_auc(col_s, col_g)
        if auc is not None:
            per.append(auc)
            weights.append(sum(1 for g in col_g if g))
    micro = rank_auc([s for row in scores for s in row], [g for row in golds for g in row])
    macro = _mean(per)
    weighted = sum(a * w for a, w in zip(per, weights)) / sum(weights) if per else None
    return micro, macro, weighted
