"""Classification metrics: confusion matrix, macro precision/recall/F1, and
one-vs-rest precision-recall curves."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    per_class_precision: list
    per_class_recall: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray                  # [n_cls, n_cls], rows = true class
    pr_curves: dict                        # class -> list of (threshold, p, r)
    degenerate_classes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "per_class_precision": self.per_class_precision,
            "per_class_recall": self.per_class_recall,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
            "degenerate_classes": self.degenerate_classes,
        }


def confusion_matrix(pred, labels, n_classes):
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (labels, pred), 1)
    return m


def compute_metrics(fused_probs, labels, n_classes=None) -> MetricsReport:
    """Score argmax predictions (ties break to the lowest class index) and
    sweep per-class thresholds for PR curves.

    A class absent from both predictions and labels gets precision and recall
    0 and is listed under ``degenerate_classes``.
    """
    fused_probs = np.asarray(fused_probs)
    labels = np.asarray(labels)
    if fused_probs.ndim != 2 or len(labels) != len(fused_probs):
        raise ValueError("compute_metrics: probs must be [N, n_cls] aligned with labels")
    if len(labels) == 0:
        raise ValueError("compute_metrics: empty evaluation set")
    n_cls = n_classes or fused_probs.shape[1]
    pred = np.argmax(fused_probs, axis=1)
    m = confusion_matrix(pred, labels, n_cls)

    accuracy = float(np.trace(m) / m.sum())
    precision, recall, degenerate = [], [], []
    for c in range(n_cls):
        tp = m[c, c]
        pred_c = m[:, c].sum()
        true_c = m[c, :].sum()
        if pred_c == 0 and true_c == 0:
            degenerate.append(c)
            precision.append(0.0)
            recall.append(0.0)
            continue
        precision.append(float(tp / pred_c) if pred_c else 0.0)
        recall.append(float(tp / true_c) if true_c else 0.0)
    macro_p = float(np.mean(precision))
    macro_r = float(np.mean(recall))
    macro_f1 = 0.0 if macro_p + macro_r == 0 else 2 * macro_p * macro_r / (macro_p + macro_r)

    curves = {}
    for c in range(n_cls):
        scores = fused_probs[:, c]
        positive = labels == c
        points = []
        thresholds = np.unique(scores)[::-1]
        for t in thresholds:
            flagged = scores >= t
            tp = int(np.sum(flagged & positive))
            fp = int(np.sum(flagged & ~positive))
            fn = int(np.sum(~flagged & positive))
            prec = tp / (tp + fp) if tp + fp else 1.0
            rec = tp / (tp + fn) if tp + fn else 0.0
            points.append((float(t), float(prec), float(rec)))
        curves[c] = points

    return MetricsReport(accuracy=accuracy, per_class_precision=precision,
                         per_class_recall=recall, macro_precision=macro_p,
                         macro_recall=macro_r, macro_f1=float(macro_f1),
                         confusion=m, pr_curves=curves,
                         degenerate_classes=degenerate)


def save_metrics(report: MetricsReport, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=1)
    with open(os.path.join(out_dir, "pr_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "threshold", "precision", "recall"])
        for c, points in report.pr_curves.items():
            for t, p, r in points:
                writer.writerow([c, f"{t:.10g}", f"{p:.10g}", f"{r:.10g}"])
