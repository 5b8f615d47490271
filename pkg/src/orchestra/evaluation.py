"""Answer normalization, multi-trajectory strategies, datasets and metric reports."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import metrics
from .errors import EmptyList, SchemaViolation
from .trace import Question

ABSTAIN = None


@dataclass(frozen=True)
class LabelSet:
    labels: tuple[str, ...]
    aliases: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("canonical labels must be distinct")
        for alias, target in self.aliases.items():
            if target not in self.labels:
                raise ValueError(f"alias {alias!r} targets unknown label {target!r}")

    @classmethod
    def of(cls, question: Question) -> "LabelSet":
        return cls(tuple(question.label_set), dict(question.aliases))

    def terms(self) -> list[tuple[str, str]]:
        pairs = [(label, label) for label in self.labels]
        pairs.extend((alias, target) for alias, target in self.aliases.items())
        return pairs


def normalize_answer(answer: str | None, labels: LabelSet) -> str | None:
    """The single canonical label mentioned in ``answer``; None for zero or several.

    Matching is case-insensitive and whole-word for labels and aliases alike.
    """
    if not answer:
        return ABSTAIN
    found = set()
    for term, target in labels.terms():
        if re.search(r"(?<!\w)" + re.escape(term) + r"(?!\w)", answer, re.IGNORECASE):
            found.add(target)
    return found.pop() if len(found) == 1 else ABSTAIN


def majority_at_k(answers: Sequence[str | None]) -> str | None:
    """Plurality label; ties go to the label that appears earliest."""
    if not answers:
        raise EmptyList("majority vote over no answers")
    votes = Counter(a for a in answers if a is not ABSTAIN)
    if not votes:
        return ABSTAIN
    first = {}
    for i, a in enumerate(answers):
        if a is not ABSTAIN:
            first.setdefault(a, i)
    return min(votes, key=lambda label: (-votes[label], first[label]))


def best_at_k(answers: Iterable[str | None], gold: str) -> bool:
    return any(a == gold for a in answers)


def vote_fractions(answers: Sequence[str | None]) -> dict[str, float]:
    """Share of all trajectories (abstentions included in the denominator) per label."""
    if not answers:
        return {}
    counts = Counter(a for a in answers if a is not ABSTAIN)
    return {label: n / len(answers) for label, n in counts.items()}


# --- datasets ------------------------------------------------------------------


def parse_question(data: object, line: int | None = None) -> Question:
    if not isinstance(data, dict):
        raise SchemaViolation("expected a JSON object", line)
    for key in ("id", "text"):
        if not isinstance(data.get(key), str):
            raise SchemaViolation(f"field {key!r} must be a string", line)
    label_set = data.get("label_set", [])
    if not isinstance(label_set, list) or not all(isinstance(x, str) for x in label_set):
        raise SchemaViolation("label_set must be a list of strings", line)
    if len(set(label_set)) != len(label_set):
        raise SchemaViolation("label_set has duplicates", line)
    gold = data.get("gold")
    if gold is not None and gold not in label_set:
        raise SchemaViolation(f"gold {gold!r} is not in label_set", line)
    attachments = []
    for a in data.get("attachments", []):
        if isinstance(a, dict) and isinstance(a.get("kind"), str) and isinstance(a.get("id"), str):
            attachments.append((a["kind"], a["id"]))
        elif isinstance(a, list) and len(a) == 2 and all(isinstance(x, str) for x in a):
            attachments.append((a[0], a[1]))
        else:
            raise SchemaViolation(f"bad attachment {a!r}", line)
    aliases = data.get("aliases", {})
    if not isinstance(aliases, dict) or any(v not in label_set for v in aliases.values()):
        raise SchemaViolation("aliases must map strings to labels in label_set", line)
    return Question(
        id=data["id"],
        text=data["text"],
        label_set=tuple(label_set),
        gold=gold,
        attachments=tuple(attachments),
        aliases=dict(aliases),
    )


def load_dataset(path: str | Path) -> list[Question]:
    questions: list[Question] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from exc
            q = parse_question(data, lineno)
            if q.id in seen:
                raise SchemaViolation(f"duplicate question id {q.id!r}", lineno)
            seen.add(q.id)
            questions.append(q)
    return questions


# --- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    sensitivity_macro: float | None
    specificity_macro: float | None
    f1_micro: float
    f1_macro: float
    f1_weighted: float
    auc_micro: float | None
    auc_macro: float | None
    auc_weighted: float | None
    n_cases: int
    n_abstain: int

    def to_dict(self) -> dict:
        return asdict(self)


def score_report(
    preds: Sequence[str | None],
    golds: Sequence[str],
    labels: Sequence[str],
    scores: Sequence[Mapping[str, float]] | None = None,
) -> MetricsReport:
    matrix = metrics.confusion(preds, golds, labels)
    acc, sen, spe = metrics.macro_metrics(matrix)
    f1_micro, f1_macro, f1_weighted = metrics.f1_suite(matrix.per_label(), matrix.supports())
    auc = (None, None, None)
    if scores is not None:
        score_rows = [[float(s.get(label, 0.0)) for label in labels] for s in scores]
        gold_rows = [[int(g == label) for label in labels] for g in golds]
        auc = metrics.auc_suite(score_rows, gold_rows)
    return MetricsReport(
        accuracy=acc,
        sensitivity_macro=sen,
        specificity_macro=spe,
        f1_micro=f1_micro,
        f1_macro=f1_macro,
        f1_weighted=f1_weighted,
        auc_micro=auc[0],
        auc_macro=auc[1],
        auc_weighted=auc[2],
        n_cases=len(golds),
        n_abstain=sum(1 for p in preds if p is ABSTAIN),
    )


def strategy_predictions(
    answers: Sequence[str | None], gold: str, strategy: str, k: int
) -> tuple[str | None, dict[str, float]]:
    """Prediction and per-label scores for one case under best@1, majority@k or best@k.

    best@k predicts the gold label when any of the first k trajectories found
    it and otherwise falls back to the majority vote.
    """
    if strategy == "best@1":
        pred = answers[0]
        return pred, ({pred: 1.0} if pred is not ABSTAIN else {})
    head = list(answers[:k])
    fractions = vote_fractions(head)
    if strategy.startswith("majority@"):
        return majority_at_k(head), fractions
    if strategy.startswith("best@"):
        return (gold if best_at_k(head, gold) else majority_at_k(head)), fractions
    raise ValueError(f"unknown strategy {strategy!r}")


def strategy_names(k: int) -> list[str]:
    return ["best@1", f"majority@{k}", f"best@{k}"] if k > 1 else ["best@1"]


def evaluate(
    cases: Sequence[tuple[Question, Sequence[str | None]]], k: int, labels: Sequence[str] | None = None
) -> dict[str, MetricsReport]:
    """Metric reports per strategy for (question, normalized answers) pairs, folded in question-id order."""
    ordered = sorted(cases, key=lambda c: c[0].id)
    scored = [(q, a) for q, a in ordered if q.gold is not None]
    if labels is None:
        labels = scored[0][0].label_set if scored else ()
    reports = {}
    for name in strategy_names(k):
        preds, golds, scores = [], [], []
        for q, answers in scored:
            pred, score = strategy_predictions(answers, q.gold, name, k)
            preds.append(pred)
            golds.append(q.gold)
            scores.append(score)
        reports[name] = score_report(preds, golds, labels, scores)
    return reports


COLUMNS = [
    ("ACC", "accuracy"),
    ("SEN", "sensitivity_macro"),
    ("SPE", "specificity_macro"),
    ("F1-micro", "f1_micro"),
    ("F1-macro", "f1_macro"),
    ("F1-weighted", "f1_weighted"),
    ("AUC-micro", "auc_micro"),
    ("AUC-macro", "auc_macro"),
    ("AUC-weighted", "auc_weighted"),
]


def format_table(reports: Mapping[str, MetricsReport]) -> str:
    """Aligned plain-text table, one row per strategy (SEN/SPE are macro one-vs-rest)."""
    header = ["strategy"] + [c for c, _ in COLUMNS]
    rows = [header]
    for name, rep in reports.items():
        row = [name]
        for _, attr in COLUMNS:
            v = getattr(rep, attr)
            row.append("-" if v is None else f"{v:.4f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if i else cell.ljust(w) for i, (cell, w) in enumerate(zip(r, widths))) for r in rows]
    return "\n".join(lines) + "\n"


def reports_json(reports: Mapping[str, MetricsReport]) -> str:
    return json.dumps({name: rep.to_dict() for name, rep in reports.items()}, indent=2, sort_keys=True) + "\n"
