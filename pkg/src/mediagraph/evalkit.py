"""Evaluation metrics, majority baseline, and result-table rendering."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

FACTUALITY_CLASSES = ("low", "mixed", "high")
BIAS_CLASSES = ("left", "centre", "right")

TASK_CLASSES = {"factuality": FACTUALITY_CLASSES, "bias": BIAS_CLASSES}

REPORT_SCHEMA_VERSION = 1


def confusion_matrix(
    y_true: Sequence, y_pred: Sequence, classes: Sequence
) -> list[list[int]]:
    """counts[i][j] = number of samples with true class i predicted as class j."""
    if len(y_true) != len(y_pred):
        raise ValueError("y_true and y_pred must have the same length")
    index = {c: i for i, c in enumerate(classes)}
    counts = [[0] * len(classes) for _ in classes]
    for t, p in zip(y_true, y_pred):
        counts[index[t]][index[p]] += 1
    return counts


def macro_f1(y_true: Sequence, y_pred: Sequence, classes: Sequence) -> float:
    """Unweighted mean of per-class F1 over the given class set.

    A class with precision + recall == 0 (never predicted and absent, or
    predicted without any hit) contributes F1 = 0, so the mean always
    divides by len(classes).
    """
    if len(y_true) == 0:
        raise ValueError("empty input")
    counts = confusion_matrix(y_true, y_pred, classes)
    n = len(classes)
    total = 0.0
    for i in range(n):
        tp = counts[i][i]
        support = sum(counts[i])
        predicted = sum(counts[j][i] for j in range(n))
        denom = support + predicted  # == tp/P + tp/R rearranged: 2tp/(support+predicted)
        if denom > 0:
            total += 2.0 * tp / denom
    return total / n


def accuracy(y_true: Sequence, y_pred: Sequence) -> float:
    if len(y_true) == 0:
        raise ValueError("empty input")
    hits = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    return hits / len(y_true)


def majority_baseline(train_labels: Sequence) -> str:
    """Constant predictor: the most frequent training class, ties broken
    lexicographically."""
    if len(train_labels) == 0:
        raise ValueError("empty training labels")
    tally: dict[str, int] = {}
    for label in train_labels:
        tally[label] = tally.get(label, 0) + 1
    return min(tally, key=lambda c: (-tally[c], c))


@dataclass
class EvalReport:
    """Cross-validated metrics for one representation channel or ensemble."""

    task: str
    channel: str
    classes: tuple[str, ...]
    fold_macro_f1: list[float]
    fold_accuracy: list[float]
    confusion: list[list[int]]
    details: dict = field(default_factory=dict)

    @property
    def mean_macro_f1(self) -> float:
        return sum(self.fold_macro_f1) / len(self.fold_macro_f1)

    @property
    def mean_accuracy(self) -> float:
        return sum(self.fold_accuracy) / len(self.fold_accuracy)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "channel": self.channel,
            "classes": list(self.classes),
            "fold_macro_f1": self.fold_macro_f1,
            "fold_accuracy": self.fold_accuracy,
            "mean_macro_f1": self.mean_macro_f1,
            "mean_accuracy": self.mean_accuracy,
            "confusion": self.confusion,
            "details": self.details,
        }


def render_report(reports: Sequence[EvalReport]) -> tuple[str, dict]:
    """Text table plus a versioned JSON-serializable dict, rows sorted by
    mean macro-F1 descending (channel name breaks ties)."""
    ordered = sorted(reports, key=lambda r: (-r.mean_macro_f1, r.channel))
    name_width = max([len(r.channel) for r in ordered] + [len("channel")])
    lines = [
        f"{'#':>2}  {'channel':<{name_width}}  {'macro-F1':>8}  {'accuracy':>8}",
        f"{'':->2}  {'':-<{name_width}}  {'':->8}  {'':->8}",
    ]
    for i, r in enumerate(ordered, 1):
        lines.append(
            f"{i:>2}  {r.channel:<{name_width}}  {100 * r.mean_macro_f1:8.2f}  {100 * r.mean_accuracy:8.2f}"
        )
    payload = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "rows": [r.to_dict() for r in ordered],
    }
    return "\n".join(lines) + "\n", payload


def load_labels_csv(path: str | Path) -> dict[str, dict[str, str | None]]:
    """labels.csv rows: domain, factuality, bias; blank cells mean unlabeled."""
    labels: dict[str, dict[str, str | None]] = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            entry: dict[str, str | None] = {}
            for task, classes in TASK_CLASSES.items():
                value = (row.get(task) or "").strip()
                if value and value not in classes:
                    raise ValueError(f"{row['domain']}: unknown {task} label {value!r}")
                entry[task] = value or None
            labels[row["domain"]] = entry
    return labels


def save_labels_csv(labels: dict[str, dict[str, str | None]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["domain", "factuality", "bias"])
        for domain in sorted(labels):
            entry = labels[domain]
            writer.writerow([domain, entry.get("factuality") or "", entry.get("bias") or ""])
