"""Permutation feature importance and per-day step importance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, EvaluationError
from .metrics import classification_metrics


def _positive(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return scores[:, 1] if scores.ndim == 2 else scores


def _accuracy(labels, scores):
    return float(np.mean((_positive(scores) >= 0.5).astype(int) == labels))


def _auc(labels, scores):
    auc = classification_metrics(labels, _positive(scores)).auc
    if auc is None:
        raise EvaluationError("AUC undefined on single-class evaluation data")
    return auc


def _log_loss(labels, scores):
    p = np.clip(_positive(scores), 1e-12, 1 - 1e-12)
    return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))


def _mse(targets, preds):
    return float(np.mean((np.asarray(preds) - np.asarray(targets)) ** 2))


# name -> (function, higher_is_better)
METRICS = {
    "accuracy": (_accuracy, True),
    "auc": (_auc, True),
    "log_loss": (_log_loss, False),
    "mse": (_mse, False),
}


def _metric(name):
    try:
        return METRICS[name]
    except KeyError:
        raise ContractError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None


@dataclass
class ImportanceReport:
    metric_name: str
    baseline_metric: float
    repeats: int
    entries: list = field(default_factory=list)   # dicts: feature, importance, std

    def ranked(self):
        return sorted(self.entries, key=lambda e: -e["importance"])

    def as_rows(self):
        return [(e["feature"], e["importance"], e["std"]) for e in self.entries]


@dataclass
class StepImportanceReport:
    metric_name: str
    baseline_metric: float
    repeats: int
    entries: list = field(default_factory=list)   # dicts: day_index, importance, std

    def ranked(self):
        return sorted(self.entries, key=lambda e: -e["importance"])

    def as_rows(self):
        return [(e["day_index"], e["importance"], e["std"]) for e in self.entries]


def _drops(baseline, higher, shuffled_scores):
    scores = np.array(shuffled_scores)
    return baseline - scores if higher else scores - baseline


def permutation_importance(predict, features, labels, metric="accuracy", repeats=5, seed=0,
                           feature_names=None, groups=None):
    """Metric drop when each feature (or column group) is shuffled across rows.

    ``predict`` maps a feature matrix to scores. ``groups`` maps a feature
    name to the encoded column indices permuted together, e.g. the indicator
    columns of one categorical variable.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.shape[0] < 2:
        raise EvaluationError("need at least two evaluation rows to permute")
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    fn, higher = _metric(metric)
    if groups is None:
        names = feature_names or [f"f{i}" for i in range(features.shape[1])]
        groups = {name: [i] for i, name in enumerate(names)}
    baseline = fn(labels, predict(features))
    report = ImportanceReport(metric, baseline, repeats)
    for j, (name, cols) in enumerate(groups.items()):
        rng = np.random.default_rng([seed, j])
        scores = []
        for _ in range(repeats):
            shuffled = features.copy()
            perm = rng.permutation(features.shape[0])
            shuffled[:, cols] = features[perm][:, cols]
            scores.append(fn(labels, predict(shuffled)))
        drops = _drops(baseline, higher, scores)
        report.entries.append({"feature": name, "importance": float(drops.mean()),
                               "std": float(drops.std())})
    return report


def step_importance(predict, series, labels, patch_size=24, stride=None, metric="accuracy",
                    repeats=5, seed=0, permutation=None):
    """Metric drop when one day-patch of every channel is shuffled across samples.

    ``series`` is (B, N, L); ``day_index`` 1 is the patch closest to the end
    of the window. ``permutation(rng, n)`` overrides the random permutation.
    """
    series = np.asarray(series, dtype=np.float64)
    labels = np.asarray(labels)
    if series.shape[0] < 2:
        raise EvaluationError("need at least two evaluation rows to permute")
    if repeats < 1:
        raise ContractError("repeats must be >= 1")
    stride = stride or patch_size
    fn, higher = _metric(metric)
    length = series.shape[-1]
    n_patches = (length - patch_size) // stride + 1
    permutation = permutation or (lambda rng, n: rng.permutation(n))
    baseline = fn(labels, predict(series))
    report = StepImportanceReport(metric, baseline, repeats)
    for t in range(n_patches):
        day = n_patches - t
        rng = np.random.default_rng([seed, t])
        window = slice(t * stride, t * stride + patch_size)
        scores = []
        for _ in range(repeats):
            shuffled = series.copy()
            perm = permutation(rng, series.shape[0])
            shuffled[:, :, window] = series[perm][:, :, window]
            scores.append(fn(labels, predict(shuffled)))
        drops = _drops(baseline, higher, scores)
        report.entries.append({"day_index": day, "importance": float(drops.mean()),
                               "std": float(drops.std())})
    report.entries.sort(key=lambda e: e["day_index"])
    return report
