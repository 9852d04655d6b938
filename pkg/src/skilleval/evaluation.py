"""ROC/AUC, accuracy, the pooled-cosine baseline, and report/CSV plumbing."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata


@dataclass
class ScoredPair:
    inst_id: str
    user_id: str
    label: int
    score: float  # higher means "more likely the same activity"


@dataclass
class RocCurve:
    thresholds: np.ndarray  # first entry is +inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def trapezoid_area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1-D sequences")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if not np.any(y == 1):
        raise ValueError("ROC needs at least one positive (label 1) pair; none found")
    if not np.any(y == 0):
        raise ValueError("ROC needs at least one negative (label 0) pair; none found")
    return s, y.astype(np.int64)


def auc_mann_whitney(scores, labels) -> float:
    """AUC via the rank-sum statistic with mid-ranks for ties."""
    s, y = _check_binary(scores, labels)
    ranks = rankdata(s)
    P = int(y.sum())
    N = len(y) - P
    return float((ranks[y == 1].sum() - P * (P + 1) / 2.0) / (P * N))


def roc_curve(scores, labels) -> RocCurve:
    """Threshold sweep over distinct scores, highest first.

    The area is accumulated in integer units of half a (positive, negative)
    pair so that it equals the tie-aware pairwise count exactly.
    """
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    P = int(y.sum())
    N = len(y) - P
    last_of_run = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(1 - y)[last_of_run]
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return RocCurve(
        thresholds=np.r_[np.inf, s[last_of_run]],
        fpr=fp / N,
        tpr=tp / P,
        auc=twice_area / (2 * P * N),
    )


def roc_auc(scored: Sequence[ScoredPair]) -> RocCurve:
    curve = roc_curve([p.score for p in scored], [p.label for p in scored])
    check = auc_mann_whitney([p.score for p in scored], [p.label for p in scored])
    if abs(curve.auc - check) > 1e-9:
        raise AssertionError(f"threshold-sweep AUC {curve.auc} disagrees with rank-sum AUC {check}")
    return curve


def auc_score(scores, labels) -> float:
    return roc_curve(scores, labels).auc


def accuracy(predictions: Sequence[int], truths: Sequence[int]) -> float:
    if len(predictions) == 0:
        raise ValueError("cannot compute accuracy on an empty fold")
    if len(predictions) != len(truths):
        raise ValueError("predictions and truths differ in length")
    return sum(int(p == t) for p, t in zip(predictions, truths)) / len(predictions)


def _pooled_unit(features) -> np.ndarray:
    X = np.asarray([np.asarray(getattr(f, "values", f), dtype=np.float64) for f in features])
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("baseline needs a non-empty list of feature vectors")
    v = X.mean(axis=0)
    n = np.linalg.norm(v)
    if n == 0:
        raise ValueError("pooled video feature is the zero vector")
    return v / n


def baseline_cosine(A, B, alpha: float = 0.5) -> float:
    """Average-pool, L2-normalise, signed power ``alpha``, re-normalise, dot product."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    out = []
    for feats in (A, B):
        v = _pooled_unit(feats)
        v = np.sign(v) * np.abs(v) ** alpha
        out.append(v / np.linalg.norm(v))
    return float(out[0] @ out[1])


# -- reports and CSV -----------------------------------------------------------


@dataclass
class EvalReport:
    method: str
    fold_auc: dict[int, float] = field(default_factory=dict)
    fold_accuracy: dict[int, float] = field(default_factory=dict)
    pooled_auc: float = float("nan")
    extra: dict = field(default_factory=dict)

    @property
    def mean_auc(self) -> float:
        return _mean(self.fold_auc.values())

    @property
    def mean_accuracy(self) -> float:
        return _mean(self.fold_accuracy.values())

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fold_auc": {str(k): v for k, v in sorted(self.fold_auc.items())},
            "mean_auc": self.mean_auc,
            "pooled_auc": self.pooled_auc,
            "fold_accuracy": {str(k): v for k, v in sorted(self.fold_accuracy.items())},
            "mean_accuracy": self.mean_accuracy,
            **({"extra": self.extra} if self.extra else {}),
        }


def _mean(vals) -> float:
    vals = list(vals)
    return math.fsum(vals) / len(vals) if vals else float("nan")


def dumps_report(obj) -> str:
    # NaN is not JSON; write it as null so the file stays parseable everywhere
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def write_scores_csv(path, scored: Sequence[ScoredPair]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["inst_id", "user_id", "label", "score"])
        for p in scored:
            w.writerow([p.inst_id, p.user_id, p.label, repr(float(p.score))])


def read_scores_csv(path) -> list[ScoredPair]:
    """Load externally produced scores (e.g. a metric-learning baseline run elsewhere)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if rows and set(rows[0]) != {"inst_id", "user_id", "label", "score"}:
        raise ValueError(f"{path}: expected columns inst_id,user_id,label,score")
    return [ScoredPair(r["inst_id"], r["user_id"], int(r["label"]), float(r["score"])) for r in rows]


def write_roc_csv(path, curve: RocCurve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([repr(float(t)), repr(float(f)), repr(float(p))])
