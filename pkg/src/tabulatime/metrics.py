"""Classification and forecasting metrics."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, DimensionError


@dataclass
class MetricsReport:
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    auc: float | None = None
    tp: int | None = None
    fp: int | None = None
    tn: int | None = None
    fn: int | None = None
    mse: float | None = None
    mae: float | None = None
    mse_native: float | None = None
    mae_native: float | None = None
    roc: dict | None = field(default=None, repr=False)

    def to_dict(self, include_roc=False):
        out = {k: v for k, v in asdict(self).items() if v is not None and k != "roc"}
        if include_roc and self.roc is not None:
            out["roc"] = self.roc
        return out


def confusion(labels, scores, threshold=0.5):
    labels = np.asarray(labels).astype(int)
    pred = (np.asarray(scores, dtype=np.float64) >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    return tp, fp, tn, fn


def rates_from_confusion(tp, fp, tn, fn):
    """accuracy, precision, recall, f1 with 0 for undefined ratios."""
    total = tp + fp + tn + fn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    # 2PR/(P+R) rewritten over counts: one rounding, so exact fixtures compare equal
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return accuracy, precision, recall, f1


def roc_curve(labels, scores):
    """ROC points (fpr, tpr, thresholds) over every distinct score, starting at (0, 0)."""
    labels = np.asarray(labels).astype(int)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    last_of_run = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    tps = np.cumsum(y)[last_of_run]
    fps = (last_of_run + 1) - tps
    p, n = y.sum(), len(y) - y.sum()
    tpr = np.r_[0.0, tps / p]
    fpr = np.r_[0.0, fps / n]
    thresholds = np.r_[np.inf, s[last_of_run]]
    return fpr, tpr, thresholds


def auc_trapezoid(fpr, tpr):
    fpr, tpr = np.asarray(fpr), np.asarray(tpr)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def classification_metrics(labels, scores, threshold=0.5):
    """Confusion-derived rates at ``threshold`` plus trapezoidal ROC AUC.

    ``scores`` are positive-class probabilities. A single-class label vector
    yields ``auc=None`` and a warning.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise DimensionError(f"labels {labels.shape} and scores {scores.shape} must be equal 1-d")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError("labels must be 0/1")
    if np.any(scores < 0) or np.any(scores > 1):
        raise ContractError("scores must lie in [0, 1]")
    tp, fp, tn, fn = confusion(labels, scores, threshold)
    accuracy, precision, recall, f1 = rates_from_confusion(tp, fp, tn, fn)
    auc, roc = None, None
    if len(np.unique(labels)) < 2:
        warnings.warn("only one class present in labels; AUC is undefined")
    else:
        fpr, tpr, thr = roc_curve(labels, scores)
        auc = auc_trapezoid(fpr, tpr)
        roc = {"fpr": fpr.tolist(), "tpr": tpr.tolist(), "threshold": thr.tolist()}
    return MetricsReport(accuracy=accuracy, precision=precision, recall=recall, f1=f1, auc=auc,
                         tp=tp, fp=fp, tn=tn, fn=fn, roc=roc)


def forecasting_metrics(predicted, actual, mean=None, std=None):
    """MSE/MAE in normalised space.

    ``mean``/``std`` are per-channel scales broadcast over (B, N, H); when
    given, errors are measured after z-scoring both arrays with them and the
    raw-unit errors are reported as ``*_native``. Without them the inputs are
    taken as already normalised.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ContractError(f"predicted {predicted.shape} and actual {actual.shape} differ")
    report = MetricsReport()
    if mean is not None:
        shape = (1, -1) + (1,) * (predicted.ndim - 2)
        m = np.asarray(mean, dtype=np.float64).reshape(shape)
        s = np.asarray(std, dtype=np.float64).reshape(shape)
        diff_native = predicted - actual
        report.mse_native = float(np.mean(diff_native ** 2))
        report.mae_native = float(np.mean(np.abs(diff_native)))
        diff = (predicted - m) / s - (actual - m) / s
    else:
        diff = predicted - actual
    report.mse = float(np.mean(diff ** 2))
    report.mae = float(np.mean(np.abs(diff)))
    return report
