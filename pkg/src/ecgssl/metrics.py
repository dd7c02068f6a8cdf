"""Multi-label scores reported in the results tables: AUROC, AUPRC, exact-match
accuracy, F-beta, G-beta and the reward-weighted challenge metric."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import FormatError, ParameterError, UndefinedMetricError

METRIC_COLUMNS = ("AUROC", "AUPRC", "Acc", "F1", "F2", "G2", "ChM")


def _check_pair(a, b, name_a="scores", name_b="labels") -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    if a.shape != b.shape:
        raise ParameterError(f"{name_a} {a.shape} and {name_b} {b.shape} differ in shape")
    return a, b.astype(np.int64)


def auroc_per_class(scores, labels) -> Dict[int, float]:
    """Mann-Whitney AUROC (ties count one half) for every class with both label values."""
    scores, labels = _check_pair(scores, labels)
    out = {}
    for c in range(labels.shape[1]):
        y = labels[:, c]
        n_pos = int(y.sum())
        n_neg = len(y) - n_pos
        if n_pos == 0 or n_neg == 0:
            continue
        ranks = rankdata(scores[:, c])
        u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
        out[c] = u / (n_pos * n_neg)
    return out


def auroc_macro(scores, labels) -> float:
    per = auroc_per_class(scores, labels)
    if not per:
        raise UndefinedMetricError("no class has both positive and negative examples")
    return float(np.mean(list(per.values())))


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Sum of precision times recall increment over distinct score thresholds (descending)."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last index of every run of equal scores is a threshold
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tp, fp = tp[last], fp[last]
    precision = tp / (tp + fp)
    recall = tp / y.sum()
    recall_prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - recall_prev) * precision))


def auprc_macro(scores, labels) -> float:
    scores, labels = _check_pair(scores, labels)
    vals = [average_precision(scores[:, c], labels[:, c])
            for c in range(labels.shape[1]) if labels[:, c].sum() > 0]
    if not vals:
        raise UndefinedMetricError("no class has a positive example")
    return float(np.mean(vals))


def confusion_counts(decisions, labels) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    d, y = _check_pair(decisions, labels, "decisions")
    d = d.astype(np.int64)
    tp = ((d == 1) & (y == 1)).sum(axis=0)
    fp = ((d == 1) & (y == 0)).sum(axis=0)
    fn = ((d == 0) & (y == 1)).sum(axis=0)
    return tp, fp, fn


def fbeta_from_counts(tp, fp, fn, beta: float) -> np.ndarray:
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    b2 = beta * beta
    den = (1 + b2) * tp + fp + b2 * fn
    return np.divide((1 + b2) * tp, den, out=np.zeros_like(den), where=den > 0)


def gbeta_from_counts(tp, fp, fn, beta: float) -> np.ndarray:
    tp, fp, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, fn))
    den = tp + fp + beta * fn
    return np.divide(tp, den, out=np.zeros_like(den), where=den > 0)


def fbeta(decisions, labels, beta: float = 2.0) -> float:
    """Macro F-beta; a class with an empty denominator contributes 0."""
    return float(np.mean(fbeta_from_counts(*confusion_counts(decisions, labels), beta)))


def gbeta(decisions, labels, beta: float = 2.0) -> float:
    """Macro G-beta = TP / (TP + FP + beta * FN); a class with an empty denominator contributes 0."""
    return float(np.mean(gbeta_from_counts(*confusion_counts(decisions, labels), beta)))


def accuracy(decisions, labels) -> float:
    """Exact-match (subset) accuracy over records."""
    d, y = _check_pair(decisions, labels, "decisions")
    return float(np.mean(np.all(d.astype(np.int64) == y, axis=1)))


# -- challenge metric ----------------------------------------------------------------

@dataclass
class RewardMatrix:
    weights: np.ndarray
    classes: List[str]
    normal_class_index: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        n = len(self.classes)
        if self.weights.shape != (n, n):
            raise ParameterError(f"reward matrix must be {n}x{n}, got {self.weights.shape}")
        if not np.all(np.diag(self.weights) == 1):
            raise ParameterError("reward matrix diagonal must be 1")
        if not np.allclose(self.weights, self.weights.T):
            raise ParameterError("reward matrix must be symmetric")
        if np.any(self.weights < 0) or np.any(self.weights > 1):
            raise ParameterError("reward matrix entries must lie in [0, 1]")
        if not 0 <= self.normal_class_index < n:
            raise ParameterError("normal class index out of range")

    @classmethod
    def synthetic_default(cls, n_classes: int = 25, normal_class_index: int = 0,
                          sibling_pairs: Optional[Sequence[Tuple[int, int]]] = None) -> "RewardMatrix":
        """1 on the diagonal, 0.5 for sibling pairs (default: consecutive abnormal classes 1-2, 3-4, ...)."""
        w = np.eye(n_classes)
        if sibling_pairs is None:
            sibling_pairs = [(i, i + 1) for i in range(1, n_classes - 1, 2)]
        for i, j in sibling_pairs:
            w[i, j] = w[j, i] = 0.5
        return cls(w, [f"c{i:02d}" for i in range(n_classes)], normal_class_index)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow([""] + self.classes)
        for code, row in zip(self.classes, self.weights):
            wr.writerow([code] + [f"{v:g}" for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, path, normal_class: str = "c00") -> "RewardMatrix":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        classes = [c.strip() for c in rows[0][1:]]
        if [r[0].strip() for r in rows[1:]] != classes:
            raise FormatError(f"{path}: row and column class codes differ")
        w = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        if normal_class not in classes:
            raise FormatError(f"{path}: normal class {normal_class} not present")
        return cls(w, classes, classes.index(normal_class))


def generalized_confusion(decisions, labels) -> np.ndarray:
    """A[i, j] += 1/N for each labelled class i and predicted class j of a record,
    N = size of the union of labelled and predicted classes (at least 1)."""
    d, y = _check_pair(decisions, labels, "decisions")
    d = (d > 0).astype(np.float64)
    y = (y > 0).astype(np.float64)
    norm = np.maximum(((d + y) > 0).sum(axis=1), 1).astype(np.float64)
    return (y / norm[:, None]).T @ d


def challenge_metric(decisions, labels, rw: RewardMatrix) -> float:
    d, y = _check_pair(decisions, labels, "decisions")
    if y.shape[1] != len(rw.classes):
        raise ParameterError(f"reward matrix covers {len(rw.classes)} classes, data has {y.shape[1]}")
    inactive = np.zeros_like(y)
    inactive[:, rw.normal_class_index] = 1
    observed = float(np.sum(rw.weights * generalized_confusion(d, y)))
    correct = float(np.sum(rw.weights * generalized_confusion(y, y)))
    baseline = float(np.sum(rw.weights * generalized_confusion(inactive, y)))
    if correct == baseline:
        raise UndefinedMetricError("perfect and inactive classifiers score the same; metric undefined")
    return (observed - baseline) / (correct - baseline)


# -- report ------------------------------------------------------------------------------

@dataclass
class MetricReport:
    auroc: float
    auprc: float
    acc: float
    f1: float
    f2: float
    g2: float
    chm: float
    excluded_classes: int = 0
    meta: Dict[str, float] = field(default_factory=dict)

    def row(self) -> List[float]:
        return [self.auroc, self.auprc, self.acc, self.f1, self.f2, self.g2, self.chm]

    def to_csv(self, label: Optional[str] = None) -> str:
        head = (["setting"] if label is not None else []) + list(METRIC_COLUMNS)
        vals = ([label] if label is not None else []) + [f"{v:.6f}" for v in self.row()]
        return ",".join(head) + "\n" + ",".join(vals) + "\n"


def evaluate(probs, decisions, labels, rw: Optional[RewardMatrix] = None) -> MetricReport:
    probs, labels = _check_pair(probs, labels, "probabilities")
    decisions = np.asarray(decisions).reshape(labels.shape)
    rw = rw or RewardMatrix.synthetic_default(labels.shape[1])
    per = auroc_per_class(probs, labels)
    if not per:
        raise UndefinedMetricError("no class has both positive and negative examples")
    return MetricReport(
        auroc=float(np.mean(list(per.values()))),
        auprc=auprc_macro(probs, labels),
        acc=accuracy(decisions, labels),
        f1=fbeta(decisions, labels, 1.0),
        f2=fbeta(decisions, labels, 2.0),
        g2=gbeta(decisions, labels, 2.0),
        chm=challenge_metric(decisions, labels, rw),
        excluded_classes=labels.shape[1] - len(per),
    )
