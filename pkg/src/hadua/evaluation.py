"""Classification metrics and mutual-information feature importance."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    auc: float
    confusion: list[list[int]]
    per_class_acc: list[float]
    per_class_std: float
    auc_skipped_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, header: dict | None = None) -> str:
        payload = {"header": header or {}, "metrics": self.to_dict()}
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def confusion_matrix(pred, labels, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(pred)), 1)
    return cm


def roc_auc(scores, positives) -> float:
    """Area under the ROC curve by the trapezoidal rule (tied scores form one step)."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos, n_neg = positives.sum(), (~positives).sum()
    if n_pos == 0 or n_neg == 0:
        raise ContractError("ROC AUC needs both positive and negative samples")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positives[order]
    # last index of each run of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(p)[ends]
    fps = (ends + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)


def compute_metrics(probs, labels, n_classes: int | None = None) -> MetricsReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise ContractError("compute_metrics needs a non-empty B x C probability matrix")
    if labels.shape != (probs.shape[0],):
        raise ContractError("labels must have one entry per row")
    C = probs.shape[1] if n_classes is None else n_classes
    if np.any(labels < 0) or np.any(labels >= C):
        raise ContractError("labels out of range")
    pred = np.argmax(probs, axis=1)  # ties resolve to the lowest index
    cm = confusion_matrix(pred, labels, C)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    tp = np.diag(cm).astype(np.float64)

    f1 = np.zeros(C)
    denom = support + predicted
    np.divide(2 * tp, denom, out=f1, where=denom > 0)
    present = support > 0
    per_class_acc = np.zeros(C)
    np.divide(tp, support, out=per_class_acc, where=present)

    aucs, skipped = [], []
    for c in range(C):
        if not present[c] or present.sum() < 2:
            skipped.append(c)
            continue
        aucs.append(roc_auc(probs[:, c], labels == c))
    return MetricsReport(
        accuracy=float(tp.sum() / labels.size),
        macro_f1=float(f1[denom > 0].mean()),
        auc=float(np.mean(aucs)) if aucs else float("nan"),
        confusion=cm.tolist(),
        per_class_acc=per_class_acc.tolist(),
        per_class_std=float(np.std(per_class_acc[present])),
        auc_skipped_classes=skipped,
    )


def equal_frequency_bins(x, bins: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    edges = np.unique(np.quantile(x, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, x, side="right")


def mutual_information(a, b) -> float:
    """Plug-in mutual information (nats) between two discrete sequences."""
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(joint, (ai, bi), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float(np.sum(joint[nz] * np.log(joint[nz] / (pa @ pb)[nz])))


def mi_feature_importance(features, probs, bins: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """MI between each equal-frequency-binned feature and the predicted class.

    Returns ``(mi, degenerate)``; constant features get MI 0 and ``degenerate`` True.
    """
    X = np.asarray(features, dtype=np.float64)
    pred = np.argmax(np.asarray(probs), axis=1)
    if bins < 4:
        raise ContractError("need at least 4 bins")
    if X.shape[0] < 10 * bins:
        raise ContractError(f"need at least {10 * bins} samples for {bins} bins")
    mi = np.zeros(X.shape[1])
    degenerate = np.zeros(X.shape[1], dtype=bool)
    for j in range(X.shape[1]):
        col = X[:, j]
        if np.ptp(col) == 0:
            degenerate[j] = True
            continue
        mi[j] = mutual_information(equal_frequency_bins(col, bins), pred)
    return mi, degenerate


def write_confusion_csv(report: MetricsReport, path) -> None:
    C = len(report.confusion)
    lines = ["true\\pred," + ",".join(str(c) for c in range(C))]
    lines += [f"{i}," + ",".join(str(v) for v in row) for i, row in enumerate(report.confusion)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
