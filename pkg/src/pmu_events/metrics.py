"""Classification metrics and the evaluation report schema shared by all methods."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import N_CLASSES, EventClass
from .errors import EmptyInput


def confusion_matrix(predictions, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.size} predictions for {labels.size} labels")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


def f1_scores(predictions, labels, n_classes: int = N_CLASSES) -> dict:
    """One-vs-rest F1 per class and their unweighted mean.

    A class with ``precision + recall = 0`` scores 0; classes absent from both
    labels and predictions are listed under ``"absent"``.
    """
    predictions = np.asarray(predictions)
    if predictions.size == 0:
        raise EmptyInput("no predictions to score")
    cm = confusion_matrix(predictions, labels, n_classes)
    tp = np.diag(cm).astype(float)
    pred_pos = cm.sum(axis=0).astype(float)
    true_pos = cm.sum(axis=1).astype(float)
    precision = np.divide(tp, pred_pos, out=np.zeros(n_classes), where=pred_pos > 0)
    recall = np.divide(tp, true_pos, out=np.zeros(n_classes), where=true_pos > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    absent = [int(c) for c in range(n_classes) if pred_pos[c] == 0 and true_pos[c] == 0]
    return {"per_class": f1, "macro": float(f1.mean()), "absent": absent, "confusion": cm}


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    if predictions.size == 0:
        raise EmptyInput("no predictions to score")
    return float(np.mean(predictions == np.asarray(labels)))


def class_name(c: int) -> str:
    return EventClass(c).name if c < N_CLASSES else str(c)


@dataclass
class EvalReport:
    method: str
    per_class_f1: dict
    macro_f1: float
    accuracy: float
    confusion: list
    absent_classes: list = field(default_factory=list)
    accuracy_curve: list = field(default_factory=list)
    sliding_window: dict | None = None
    no_leakage: bool | None = None
    config_hash: str = ""
    n_test: int = 0
    timings: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, method: str, predictions, labels, **kw) -> "EvalReport":
        res = f1_scores(predictions, labels)
        return cls(
            method=method,
            per_class_f1={class_name(c): float(v) for c, v in enumerate(res["per_class"])},
            macro_f1=res["macro"], accuracy=accuracy(predictions, labels),
            confusion=res["confusion"].tolist(),
            absent_classes=[class_name(c) for c in res["absent"]],
            n_test=int(len(labels)), **kw,
        )

    def to_json(self, include_timings: bool = False) -> dict:
        d = {
            "method": self.method, "per_class_f1": self.per_class_f1, "macro_f1": self.macro_f1,
            "accuracy": self.accuracy, "confusion": self.confusion,
            "absent_classes": self.absent_classes, "accuracy_curve": self.accuracy_curve,
            "sliding_window": self.sliding_window, "no_leakage": self.no_leakage,
            "config_hash": self.config_hash, "n_test": self.n_test, "schema": "eval-report/1",
        }
        if include_timings:
            d["timings"] = self.timings
        return d

    def dumps(self, include_timings: bool = False) -> str:
        return json.dumps(self.to_json(include_timings), indent=2, sort_keys=True)
