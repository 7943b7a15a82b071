import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabulatime.errors import ContractError, DimensionError
from tabulatime.metrics import (auc_trapezoid, classification_metrics, forecasting_metrics,
                                rates_from_confusion, roc_curve)


def fixture(tp, tn, fp, fn):
    labels = [1] * tp + [0] * tn + [0] * fp + [1] * fn
    scores = [0.9] * tp + [0.1] * tn + [0.8] * fp + [0.2] * fn
    return np.array(labels), np.array(scores)


def test_confusion_example():
    r = classification_metrics(*fixture(3, 4, 2, 1))
    assert (r.tp, r.tn, r.fp, r.fn) == (3, 4, 2, 1)
    assert (r.accuracy, r.precision, r.recall) == (0.7, 0.6, 0.75)
    assert r.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_separating_scores_give_unit_auc():
    assert classification_metrics([0, 0, 1, 1], [0.1, 0.2, 0.7, 0.9]).auc == 1.0
    assert classification_metrics([1, 1, 0, 0], [0.1, 0.2, 0.7, 0.9]).auc == 0.0


def test_random_scores_auc_near_half(rng):
    labels = rng.integers(0, 2, 20000)
    assert abs(classification_metrics(labels, rng.random(20000)).auc - 0.5) < 0.05


def brute_auc(labels, scores):
    """Probability a random positive outranks a random negative, ties counting half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_with_ties_matches_pairwise_oracle(rng):
    for _ in range(20):
        labels = rng.integers(0, 2, 30)
        labels[:2] = [0, 1]
        scores = rng.integers(0, 6, 30) / 5.0
        assert classification_metrics(labels, scores).auc == pytest.approx(brute_auc(labels, scores), abs=1e-12)


def test_roc_curve_starts_at_origin_and_ends_at_one():
    fpr, tpr, thr = roc_curve([0, 1, 1, 0], [0.3, 0.3, 0.8, 0.1])
    assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0, 0, 1, 1)
    assert thr[0] == np.inf and len(fpr) == 4   # three distinct thresholds + origin


def test_single_class_auc_is_none():
    with pytest.warns(UserWarning):
        r = classification_metrics([1, 1, 1], [0.2, 0.6, 0.9])
    assert r.auc is None and r.accuracy == pytest.approx(2 / 3)
    assert "auc" not in r.to_dict()


def test_undefined_ratios_are_zero():
    assert rates_from_confusion(0, 0, 5, 0) == (1.0, 0.0, 0.0, 0.0)


def test_input_validation():
    with pytest.raises(DimensionError):
        classification_metrics([0, 1], [0.5])
    with pytest.raises(ContractError):
        classification_metrics([0, 2], [0.5, 0.5])
    with pytest.raises(ContractError):
        classification_metrics([0, 1], [0.5, 1.5])


def test_forecasting_examples():
    y = np.array([[[1.0, 2.0]]])
    r = forecasting_metrics(y, y)
    assert r.mse == r.mae == 0.0
    r = forecasting_metrics(y + [[[1.0, -1.0]]], y)
    assert (r.mse, r.mae) == (1.0, 1.0)
    r = forecasting_metrics(y + [[[2.0, 0.0]]], y)
    assert (r.mse, r.mae) == (2.0, 1.0)


def test_forecasting_global_scaling():
    actual = np.zeros((1, 2, 3))
    pred = np.ones((1, 2, 3)) * np.array([2.0, 10.0])[None, :, None]
    r = forecasting_metrics(pred, actual, mean=[5.0, -1.0], std=[2.0, 10.0])
    assert r.mse == pytest.approx(1.0) and r.mae == pytest.approx(1.0)
    assert r.mse_native == pytest.approx(52.0) and r.mae_native == pytest.approx(6.0)
    with pytest.raises(ContractError):
        forecasting_metrics(pred, actual[..., :2])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 20), st.integers(0, 20), st.integers(0, 20), st.integers(0, 20))
def test_property_f1_is_harmonic_mean(tp, tn, fp, fn):
    acc, p, r, f1 = rates_from_confusion(tp, fp, tn, fn)
    if p + r > 0:
        assert f1 == pytest.approx(2 * p * r / (p + r))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_property_auc_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, 25)
    labels[:2] = [0, 1]
    scores = np.round(rng.random(25), 1)
    base = classification_metrics(labels, scores).auc
    for f in (np.sqrt, lambda s: s ** 3, lambda s: 1 / (1 + np.exp(-(5 * s - 2)))):
        assert classification_metrics(labels, f(scores)).auc == pytest.approx(base, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_property_forecast_errors_nonnegative(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 4))
    b = a.copy()
    if seed % 2:
        b[0, 0, 0] += rng.normal()
    r = forecasting_metrics(b, a)
    assert r.mse >= 0 and r.mae >= 0 and (r.mse == 0) == (r.mae == 0)
