import numpy as np
import pytest

from satlens.errors import ConfigError, MissingEigenspace, NonFiniteLoss
from satlens.nn.data import random_labels, synth_dataset
from satlens.nn.model import Model
from satlens.nn.train import TrainConfig, evaluate, predict, projected_accuracy, train
from satlens.numeric import rng_from_seed

MLP = {"layers": [{"kind": "dense", "units": 16}, {"kind": "relu"}, {"kind": "dense", "units": 2}]}


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon) == (1e-3, 0.9, 0.999, 1e-8)
    assert cfg.optimizer == "adam" and cfg.epochs == 30


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0}, {"learning_rate": 0.0},
                                    {"optimizer": "rmsprop"}, {"delta": 0.0}, {"policy": "median"}])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 3, "warmup": 1})


def test_blobs_mlp_reaches_high_accuracy():
    ds = synth_dataset("blobs", classes=2, samples=1000, seed=0)
    m = Model(MLP, ds.input_shape, seed=0)
    history = train(m, ds, TrainConfig(epochs=30, batch_size=64))
    assert len(history) == 30
    assert history[-1].val_accuracy >= 0.95
    assert history[-1].report.epoch == 30


def test_loss_decreases_over_seeds():
    for seed in range(10):
        ds = synth_dataset("blobs", classes=2, samples=500, seed=seed)
        h = train(Model(MLP, ds.input_shape, seed=seed), ds, TrainConfig(epochs=5, seed=seed))
        assert h[4].train_loss < h[0].train_loss


def test_sgd_with_momentum_trains():
    ds = synth_dataset("blobs", classes=3, samples=600, seed=1)
    arch = {"layers": [{"kind": "dense", "units": 8}, {"kind": "relu"}, {"kind": "dense", "units": 3}]}
    h = train(Model(arch, ds.input_shape), ds,
              TrainConfig(epochs=10, optimizer="sgd", learning_rate=0.05, momentum=0.9))
    assert h[-1].val_accuracy >= 0.9


def test_rank_two_inputs_give_low_saturation():
    # 8-wide linear layer fed inputs that live in a 2-d subspace
    rng = rng_from_seed(0)
    basis = rng.standard_normal((2, 10))
    coeffs = rng.standard_normal((600, 2))
    x = (coeffs @ basis).astype(np.float32)
    y = (coeffs[:, 0] > 0).astype(np.int64)
    from satlens.nn.data import Dataset
    ds = Dataset(x[:500], y[:500], x[500:], y[500:], 2)
    arch = {"layers": [{"kind": "dense", "units": 8}, {"kind": "relu"}, {"kind": "dense", "units": 2}]}
    h = train(Model(arch, ds.input_shape), ds, TrainConfig(epochs=3, delta=0.99))
    assert h[-1].report.ks[0] <= 3
    assert h[-1].report.saturations[0] <= 0.375


def test_evaluate_determinism_and_identity_projection():
    ds = synth_dataset("blobs", classes=3, samples=600, seed=2)
    m = Model({"layers": [{"kind": "dense", "units": 12}, {"kind": "relu"},
                          {"kind": "dense", "units": 3}]}, ds.input_shape)
    train(m, ds, TrainConfig(epochs=3))
    assert evaluate(m, ds) == evaluate(m, ds)
    m.select_eigenspaces(1.0)
    np.testing.assert_array_equal(predict(m, ds.x_val, projection=True), predict(m, ds.x_val))
    acc, ks = projected_accuracy(m, ds, 1.0)
    assert ks == [12] and acc == evaluate(m, ds)


def test_projection_before_statistics_fails():
    ds = synth_dataset("blobs", classes=2, samples=100, seed=0)
    m = Model(MLP, ds.input_shape)
    with pytest.raises(MissingEigenspace):
        evaluate(m, ds, projection=True)


def test_random_labels_accuracy_near_chance():
    ds = random_labels(synth_dataset("blobs", classes=2, samples=10000, seed=3, val_fraction=0.2), seed=4)
    assert len(ds.y_val) == 2000
    m = Model(MLP, ds.input_shape)
    train(m, ds, TrainConfig(epochs=2, batch_size=256))
    assert abs(evaluate(m, ds) - 0.5) <= 0.05


def test_non_finite_loss_aborts():
    ds = synth_dataset("blobs", classes=2, samples=100, seed=0)
    ds.x_train[0, 0] = np.nan
    with pytest.raises(NonFiniteLoss):
        train(Model(MLP, ds.input_shape), ds, TrainConfig(epochs=1))


def test_augmentation_runs_on_images():
    ds = synth_dataset("glyph-images", classes=3, samples=120, resolution=8, seed=0)
    arch = {"layers": [{"kind": "conv2d", "filters": 4, "kernel": 3, "padding": 1}, {"kind": "relu"},
                       {"kind": "global_avg_pool"}, {"kind": "dense", "units": 3}]}
    h = train(Model(arch, ds.input_shape), ds, TrainConfig(epochs=2, augment=True))
    assert np.isfinite(h[-1].train_loss)


def test_training_is_reproducible():
    ds = synth_dataset("blobs", classes=2, samples=300, seed=0)
    runs = [train(Model(MLP, ds.input_shape, seed=4), ds, TrainConfig(epochs=3, seed=4)) for _ in range(2)]
    assert [r.train_loss for r in runs[0]] == [r.train_loss for r in runs[1]]
    assert runs[0][-1].report == runs[1][-1].report
