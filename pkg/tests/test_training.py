import numpy as np
import pytest

from tabulatime import autodiff as ad
from tabulatime.autodiff import Tensor
from tabulatime.errors import ContractError, DataError, TrainingError
from tabulatime.models import Model
from tabulatime.training import TrainConfig, adam_step, split, train


class Logistic(Model):
    def __init__(self, n_in, seed=0):
        rng = np.random.default_rng(seed)
        self.params = {"w": Tensor(rng.normal(scale=0.1, size=(n_in, 2)), requires_grad=True),
                       "b": Tensor(np.zeros(2), requires_grad=True)}

    def logits(self, x):
        return ad.matmul(Tensor(x), self.params["w"]) + self.params["b"]

    def loss(self, batch, rng=None):
        return ad.cross_entropy(self.logits(batch["x"]), batch["labels"])


class Drifting(Model):
    """Scalar model pulled towards +target by training data; validation wants the opposite."""

    def __init__(self):
        self.params = {"theta": Tensor(np.zeros(1), requires_grad=True)}

    def loss(self, batch, rng=None):
        d = self.params["theta"] - Tensor(batch["target"][:1])
        return (d * d).sum()


def test_split_sizes_and_determinism():
    cfg = TrainConfig(seed=3)
    tr, va, te = split(100, cfg)
    assert (len(tr), len(va), len(te)) == (72, 8, 20)
    assert sorted(np.concatenate([tr, va, te])) == list(range(100))
    for a, b in zip(split(100, cfg), (tr, va, te)):
        np.testing.assert_array_equal(a, b)


def test_temporal_split_orders_by_time(rng):
    times = rng.permutation(np.arange(100)).astype("datetime64[h]")
    tr, va, te = split(100, TrainConfig(), timestamps=times)
    assert times[tr].max() < times[va].min() and times[va].max() < times[te].min()


def test_split_too_small():
    with pytest.raises(DataError):
        split(3, TrainConfig())


def test_config_validation():
    with pytest.raises(ContractError):
        TrainConfig(train_frac=1.0)
    with pytest.raises(ContractError):
        TrainConfig(patience=0)


def test_adam_zero_gradient_is_fixed_point():
    p = {"a": np.array([1.0, -2.0])}
    adam_step(p, {"a": np.zeros(2)}, {}, 0.1)
    np.testing.assert_array_equal(p["a"], [1.0, -2.0])


def test_adam_first_step_closed_form():
    for g in (3.0, -0.02, 1e-3):
        p = {"a": np.array([0.5])}
        adam_step(p, {"a": np.array([g])}, {}, 0.01)
        # m_hat = g, v_hat = g^2 after bias correction
        assert p["a"][0] == pytest.approx(0.5 - 0.01 * g / (abs(g) + 1e-8), rel=1e-12)
        assert p["a"][0] == pytest.approx(0.5 - 0.01 * np.sign(g), abs=1e-6)


def test_adam_converges_on_quadratic():
    p, state = {"a": np.array([-4.0])}, {}
    for _ in range(2000):
        adam_step(p, {"a": 2 * (p["a"] - 3.0)}, state, 0.05)
    assert abs(p["a"][0] - 3.0) < 1e-3


def test_adam_shape_check():
    with pytest.raises(ContractError):
        adam_step({"a": np.zeros(2)}, {"a": np.zeros(3)}, {}, 0.1)


def test_early_stopping_restores_best_weights():
    model = Drifting()
    train_data = {"target": np.full(4, 10.0)}
    val_data = {"target": np.full(2, -10.0)}
    hist = train(model, train_data, val_data, TrainConfig(learning_rate=0.1, batch_size=4, patience=1))
    assert hist.stopped_epoch == 2 and hist.best_epoch == 1
    assert hist.val_loss[1] > hist.val_loss[0]
    assert model.params["theta"].data[0] == pytest.approx(0.1, rel=1e-6)   # one Adam step of size lr


def test_training_is_deterministic(rng):
    x = rng.normal(size=(60, 3))
    data = {"x": x, "labels": (x[:, 0] > 0).astype(int)}
    cfg = TrainConfig(max_epochs=5, batch_size=8, seed=11)
    runs = []
    for _ in range(2):
        model = Logistic(3)
        runs.append((train(model, data, data, cfg).to_dict(), model.state_arrays()))
    assert runs[0][0] == runs[1][0]
    for k in runs[0][1]:
        np.testing.assert_array_equal(runs[0][1][k], runs[1][1][k])


def test_separable_data_reaches_perfect_validation_accuracy(rng):
    x = rng.normal(size=(200, 2))
    x[:, 0] += np.where(x[:, 0] > 0, 1.0, -1.0)   # margin of 2 around the boundary
    labels = (x[:, 0] > 0).astype(int)
    tr, va, _ = split(200, TrainConfig())
    model = Logistic(2)
    hist = train(model, {"x": x[tr], "labels": labels[tr]}, {"x": x[va], "labels": labels[va]},
                 TrainConfig(learning_rate=0.05, max_epochs=200, patience=200))
    pred = model.logits(x[va]).data.argmax(1)
    assert np.all(pred == labels[va]) and hist.stopped_epoch <= 200


def test_best_epoch_has_lowest_validation_loss(rng):
    x = rng.normal(size=(80, 4))
    data = {"x": x, "labels": (x.sum(1) + rng.normal(size=80) > 0).astype(int)}
    hist = train(Logistic(4), data, {k: v[:20] for k, v in data.items()},
                 TrainConfig(max_epochs=30, patience=3, learning_rate=0.05))
    assert hist.best_val_loss == min(hist.val_loss) == hist.val_loss[hist.best_epoch - 1]


def test_non_finite_loss_raises_with_epoch():
    model = Drifting()
    with pytest.raises(TrainingError) as info:
        train(model, {"target": np.full(2, np.inf)}, {"target": np.zeros(2)}, TrainConfig())
    assert info.value.epoch == 1
