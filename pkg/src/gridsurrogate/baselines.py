"""Reference models trained with the same loop: a ReLU MLP and a linear regressor."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .nn import HeadedNetwork
from .pinn4pf import TrainResult, train
from .scenarios import Dataset

__all__ = [
    "MlpConfig",
    "LrConfig",
    "mlp_widths",
    "build_mlp",
    "build_lr",
    "train_mlp",
    "train_lr",
    "least_squares_lr",
]


class _Supervised:
    """Supervised-only schedule fields expected by :func:`train`."""

    beta1_max = 0.0
    ramp_start_epoch = 100
    ramp_end_epoch = 1000

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=1)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MlpConfig(_Supervised):
    n_hidden: int = 7
    lr: float = 2.3e-4
    weight_decay: float = 1.8e-5
    dropout: float = 0.002
    batch_size: int = 16
    epochs: int = 5000
    seed: int = 0
    widths: list[int] | None = None  # None: 2n, round(4n/3)..., 2n


@dataclass
class LrConfig(_Supervised):
    lr: float = 2.3e-4
    weight_decay: float = 1.8e-5
    batch_size: int = 16
    epochs: int = 5000
    seed: int = 0


def mlp_widths(n_load: int, n_hidden: int) -> list[int]:
    if n_hidden < 1:
        raise ValueError("an MLP needs at least one hidden layer")
    if n_hidden == 1:
        return [2 * n_load]
    mid = max(1, int(np.floor(4 * n_load / 3 + 0.5)))
    return [2 * n_load] + [mid] * (n_hidden - 2) + [2 * n_load]


def build_mlp(n_load: int, cfg: MlpConfig) -> HeadedNetwork:
    widths = cfg.widths or mlp_widths(n_load, cfg.n_hidden)
    return HeadedNetwork(2 * n_load, widths, [], [2 * n_load], dropout=cfg.dropout, seed=cfg.seed)


def build_lr(n_load: int, cfg: LrConfig) -> HeadedNetwork:
    return HeadedNetwork(2 * n_load, [], [], [2 * n_load], seed=cfg.seed)


def train_mlp(dataset: Dataset, cfg: MlpConfig | None = None, verbose: int = 0) -> TrainResult:
    cfg = cfg or MlpConfig()
    return train(build_mlp(dataset.n_load, cfg), dataset, cfg, verbose)


def train_lr(dataset: Dataset, cfg: LrConfig | None = None, verbose: int = 0) -> TrainResult:
    cfg = cfg or LrConfig()
    return train(build_lr(dataset.n_load, cfg), dataset, cfg, verbose)


def least_squares_lr(dataset: Dataset) -> HeadedNetwork:
    """Closed-form least-squares affine map on the (standardized) training rows."""
    idx = dataset.rows("train")
    mean, std = dataset.input_stats()
    xs = (dataset.x[idx] - mean) / std
    A = np.hstack([xs, np.ones((len(idx), 1))])
    coef, *_ = np.linalg.lstsq(A, dataset.y[idx], rcond=None)
    model = HeadedNetwork(dataset.x.shape[1], [], [], [dataset.y.shape[1]])
    model.set_input_stats(mean, std)
    model.params["head0.out.W"][...] = coef[:-1].T
    model.params["head0.out.b"][...] = coef[-1]
    return model
