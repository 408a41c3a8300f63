import numpy as np
import pytest

from gridsurrogate.baselines import (
    LrConfig,
    MlpConfig,
    build_lr,
    build_mlp,
    least_squares_lr,
    mlp_widths,
    train_lr,
    train_mlp,
)
from gridsurrogate.nn import mse, mse_backward
from gridsurrogate.pinn4pf import Pinn4pfConfig, build_pinn4pf, train
from gridsurrogate.scenarios import Dataset


def linear_dataset(n=3, rows=200, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 0.1, (rows, 2 * n))
    A = rng.normal(0, 0.05, (2 * n, 2 * n))
    c = rng.normal(1, 0.01, 2 * n)
    split = np.repeat(np.array([0, 1, 2], dtype=np.int8), [rows * 2 // 5, rows // 5, rows - rows * 3 // 5])
    return Dataset(x, x @ A.T + c, split, np.arange(1, n + 1))


def split_mse(model, ds, split):
    idx = ds.rows(split)
    return mse(model.predict(ds.x[idx]), ds.y[idx])


class TestArchitecture:
    def test_mlp_widths_15_bus(self):
        # 2n = 28 outside, round(4 * 14 / 3) = 19 inside
        assert mlp_widths(14, 7) == [28, 19, 19, 19, 19, 19, 28]

    def test_mlp_widths_small(self):
        assert mlp_widths(3, 1) == [6]
        assert mlp_widths(3, 2) == [6, 6]
        with pytest.raises(ValueError):
            mlp_widths(3, 0)

    def test_lr_is_affine(self):
        net = build_lr(4, LrConfig())
        assert net.params.names == ["head0.out.W", "head0.out.b"]
        assert net.params.shape_of("head0.out.W") == (8, 8)

    def test_mlp_has_no_alphas(self):
        assert build_mlp(4, MlpConfig()).alphas() == {}

    def test_mlp_gradient_two_bus_toy(self):
        net = build_mlp(1, MlpConfig(n_hidden=3, dropout=0.0))
        rng = np.random.default_rng(0)
        net.params.data[...] += rng.normal(0, 0.5, net.params.size)
        x, t = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
        out, cache = net.forward(x)
        net.backward(cache, mse_backward(out, t))
        g = net.params.grad.copy()
        h = 1e-6
        for i in range(net.params.size):
            keep = net.params.data[i]
            net.params.data[i] = keep + h
            up = mse(net.predict(x), t)
            net.params.data[i] = keep - h
            down = mse(net.predict(x), t)
            net.params.data[i] = keep
            assert abs((up - down) / (2 * h) - g[i]) <= 1e-4 * max(1.0, abs(g[i]))


class TestLinearRegression:
    def test_recovers_exact_linear_map(self):
        ds = linear_dataset()
        res = train_lr(ds, LrConfig(epochs=500))
        assert split_mse(res.model, ds, "test") <= 1e-10

    def test_least_squares_exact_on_linear_map(self):
        ds = linear_dataset(seed=1)
        assert split_mse(least_squares_lr(ds), ds, "test") <= 1e-20

    def test_trained_never_beats_least_squares(self, bank):
        res, ds = bank.fit("lr")
        ls = least_squares_lr(ds)
        assert split_mse(res.model, ds, "train") >= split_mse(ls, ds, "train") - 1e-10

    def test_trained_within_five_percent_of_least_squares(self, bank):
        res, ds = bank.fit("lr")
        ls = least_squares_lr(ds)
        assert split_mse(res.model, ds, "train") <= 1.05 * split_mse(ls, ds, "train")


class TestMlp:
    def test_deterministic_rerun(self):
        ds = linear_dataset(n=2, rows=60)
        cfg = MlpConfig(epochs=5, dropout=0.0)
        a, b = train_mlp(ds, cfg), train_mlp(ds, cfg)
        assert np.array_equal(a.model.params.data, b.model.params.data)

    def test_matches_double_head_trainer_when_collapsed(self, system15):
        # the double-head trainer with beta1 = 0, one plain ReLU stack and
        # the MLP's hyperparameters is the MLP trainer
        ds = system15.dataset
        width = 2 * ds.n_load
        mlp_cfg = MlpConfig(epochs=3, widths=[width] * 7, seed=5)
        pinn_cfg = Pinn4pfConfig(
            n_shared_layers=7,
            n_head_layers=0,
            shared_width=width,
            activation="relu",
            split_heads=False,
            lr=mlp_cfg.lr,
            weight_decay=mlp_cfg.weight_decay,
            dropout=mlp_cfg.dropout,
            batch_size=mlp_cfg.batch_size,
            epochs=3,
            beta1_max=0.0,
            seed=5,
        )
        a = train_mlp(ds, mlp_cfg)
        b = train(build_pinn4pf(ds.n_load, pinn_cfg), ds, pinn_cfg)
        assert np.array_equal(a.model.params.data, b.model.params.data)
        assert [h["val_loss"] for h in a.history] == [h["val_loss"] for h in b.history]

    def test_finite_test_error(self, bank):
        assert np.isfinite(bank.test_mse("mlp"))

    def test_beats_linear_regression(self, bank):
        assert bank.test_mse("mlp") < bank.test_mse("lr")
