import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabulatime import autodiff as ad
from tabulatime.autodiff import Tensor, backward
from tabulatime.errors import ContractError, DimensionError
from tabulatime.fusion import (AttentionGateParams, ForecastHeadParams, forecast_head, fuse,
                               gate_bottleneck, pool_series, predict_class, softmax)
from tabulatime.models import ModelConfig, PatchRWKVClassifier, PatchRWKVForecaster, TabulaTime
from tabulatime.nn import MLP
from tabulatime.preprocess import SeriesBatch, denormalize, instance_normalize

from conftest import numeric_grad, rel_err


def test_pool_series_examples(rng):
    assert np.all(pool_series(np.full((2, 5, 10, 8), 3.5)).data == 3.5)
    assert pool_series(rng.normal(size=(2, 5, 10, 8))).shape == (2, 50)
    assert pool_series(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)).item() == 2.0
    with pytest.raises(DimensionError):
        pool_series(np.zeros((2, 3, 4)))


def test_fuse_examples(rng):
    x = rng.normal(size=(4, 9))
    zero = AttentionGateParams(Tensor(np.zeros((9, 3))), Tensor(np.zeros((3, 9))))
    out, gate = fuse(x, zero, return_gate=True)
    np.testing.assert_array_equal(gate.data, 0.5)
    np.testing.assert_array_equal(out.data, 0.5 * x)
    params = AttentionGateParams.init(rng, 9)
    assert params.w1.shape == (9, gate_bottleneck(9)) == (9, 3)
    assert not fuse(np.zeros((4, 9)), params).data.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_property_gate_range_and_contraction(seed):
    rng = np.random.default_rng(seed)
    width = int(rng.integers(1, 40))
    x = rng.normal(scale=3, size=(5, width))
    out, gate = fuse(x, AttentionGateParams.init(rng, width), return_gate=True)
    assert np.all((gate.data > 0) & (gate.data < 1))
    assert np.all(np.abs(out.data) <= np.abs(x))


def test_predict_class_examples(rng):
    x = rng.normal(size=(6, 10))
    zero = MLP(*(Tensor(np.zeros(s)) for s in [(10, 64), (64,), (64, 2), (2,)]))
    np.testing.assert_array_equal(softmax(predict_class(x, zero)), 0.5)
    head = MLP.init(rng, 10, 64, 2)
    logits = predict_class(x, head).data
    assert logits.shape == (6, 2)
    np.testing.assert_array_equal((logits + 7.3).argmax(1), logits.argmax(1))
    with pytest.raises(ContractError):
        predict_class(x, MLP.init(rng, 10, 4, 1))


def test_forecast_head_examples(rng):
    zero = ForecastHeadParams(Tensor(np.zeros((10 * 8, 48))), Tensor(np.zeros(48)))
    feats = rng.normal(size=(3, 4, 10, 8))
    out = forecast_head(feats, zero).data
    assert out.shape == (3, 4, 48) and not out.any()
    raw = SeriesBatch.from_array(rng.normal(20, 5, size=(3, 4, 240)))
    norm = instance_normalize(raw)
    np.testing.assert_allclose(denormalize(norm, out), np.repeat(raw.values.mean(-1)[..., None], 48, -1))


def test_forecast_head_gradients(rng):
    params = ForecastHeadParams.init(rng, 3, 4, 5)
    feats = Tensor(rng.normal(size=(2, 2, 3, 4)), requires_grad=True)
    weights = rng.normal(size=(2, 2, 5))

    def loss():
        return (forecast_head(feats, params) * weights).sum()

    backward(loss())
    for t in (feats, params.weight, params.bias):
        assert rel_err(t.grad, numeric_grad(lambda: float(loss().data), t.data)).max() < 1e-3


def tiny(**kw):
    base = dict(layers=1, embed_dim=8, heads=2, patch_size=6, stride=6, seq_len=24,
                n_channels=3, tab_dim=5, head_hidden=7, n_tab_features=4, horizon=6)
    base.update(kw)
    return ModelConfig(**base)


def test_tabulatime_shapes_and_attention(rng):
    model = TabulaTime(tiny())
    tab, series = rng.normal(size=(5, 4)), rng.normal(size=(5, 3, 24))
    proba = model.predict_proba(tab, series)
    assert proba.shape == (5, 2)
    np.testing.assert_allclose(proba.sum(1), 1.0)
    attn = model.attention_map(tab, series)
    assert attn.shape == (5, 5 + 3 * 4)
    np.testing.assert_array_equal(attn, model.attention_map(tab, series))


def test_tabulatime_batch_permutation_equivariance(rng):
    model = TabulaTime(tiny())
    tab, series = rng.normal(size=(6, 4)), rng.normal(size=(6, 3, 24))
    perm = rng.permutation(6)
    np.testing.assert_allclose(model.predict_proba(tab[perm], series[perm]),
                               model.predict_proba(tab, series)[perm], rtol=1e-13)


def test_ablations_and_config_errors(rng):
    tab, series = rng.normal(size=(3, 4)), rng.normal(size=(3, 3, 24))
    assert TabulaTime(tiny(use_series=False)).predict_proba(tab, None).shape == (3, 2)
    assert TabulaTime(tiny(use_tabular=False)).predict_proba(None, series).shape == (3, 2)
    with pytest.raises(ContractError):
        tiny(use_series=False, use_tabular=False)
    with pytest.raises(ContractError):
        TabulaTime(tiny(n_tab_features=0))


def test_tabulatime_loss_gradients(rng):
    model = TabulaTime(tiny())
    for name, p in model.parameters().items():
        p.data[...] = rng.normal(scale=0.5, size=p.shape)
    batch = {"tabular": rng.normal(size=(3, 4)), "series": rng.normal(size=(3, 3, 24)),
             "labels": np.array([0, 1, 1])}
    backward(model.loss(batch))
    for name, p in model.parameters().items():
        num = numeric_grad(lambda: float(model.loss(batch).data), p.data)
        err = rel_err(p.grad, num)
        assert np.mean(err < 1e-3) >= 0.99 and err.max() < 1e-2, name


def test_forecaster_and_classifier(rng):
    series = rng.normal(10, 2, size=(4, 3, 24))
    fc = PatchRWKVForecaster(tiny())
    pred = fc.predict({"series": series})
    assert pred.shape == (4, 3, 6)
    loss = fc.loss({"series": series, "target": rng.normal(10, 2, size=(4, 3, 6))})
    assert loss.size == 1 and loss.requires_grad
    clf = PatchRWKVClassifier(tiny())
    assert clf.predict(series).shape == (4, 2)
    assert clf.loss({"series": series, "labels": np.array([0, 1, 0, 1])}).requires_grad


def test_default_config_dimensions():
    cfg = ModelConfig(n_tab_features=23)
    assert (cfg.embed_dim, cfg.patch_size, cfg.stride, cfg.tab_dim, cfg.n_patches) == (128, 24, 24, 31, 10)
    assert TabulaTime(ModelConfig(n_tab_features=23, layers=1)).fused_width == 31 + 5 * 10
