"""Double-head physics-informed power-flow network and the shared trainer.

The physics term reconstructs each load-bus voltage from the predicted one:

    V_rec = (conj(S_k) / conj(V_hat) - psi_k) / Y_kk

where ``S_k = -(p_d + j q_d)`` is the nodal injection (loads consume),
``Y_kk`` the diagonal admittance and ``psi_k = sum_{i != k} Y_ki V_i`` the
hidden function, precomputed from the labels with the diagonal only.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .grid import Network, build_admittance
from .nn import AdamState, HeadedNetwork, adam_step, mse, mse_backward
from .scenarios import Dataset

__all__ = [
    "Pinn4pfConfig",
    "LossConfig",
    "TrainResult",
    "TrainingDivergedError",
    "beta_schedule",
    "admittance_diagonal",
    "compute_psi_from_labels",
    "physical_model",
    "physical_model_backward",
    "composite_loss",
    "attach_physics",
    "build_pinn4pf",
    "train",
    "write_history_csv",
    "PSI_GUARD",
]

log = logging.getLogger(__name__)

PSI_GUARD = 1e-6


class TrainingDivergedError(FloatingPointError):
    def __init__(self, message: str, epoch: int, batch: int, history: list):
        self.epoch = epoch
        self.batch = batch
        self.history = history
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")


@dataclass
class Pinn4pfConfig:
    n_shared_layers: int = 2
    n_head_layers: int = 4
    shared_width: int | None = None  # None: 2 * n_load
    head_width: int | None = None  # None: n_load
    activation: str = "adaptive"
    lr: float = 1.3e-4
    weight_decay: float = 1.1e-5
    dropout: float = 0.001
    batch_size: int = 16
    epochs: int = 5000
    # weight of the physics term after the ramp; the supervised term gets 1 - beta1
    beta1_max: float = 0.71
    ramp_start_epoch: int = 100
    ramp_end_epoch: int = 1000
    seed: int = 0
    learned_psi: bool = False
    # False collapses the two voltage heads into one output layer of width 2n
    split_heads: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta1_max <= 1.0:
            raise ValueError("beta1_max must lie in [0, 1]")
        if self.ramp_end_epoch < self.ramp_start_epoch:
            raise ValueError("ramp_end_epoch must not precede ramp_start_epoch")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=1)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "Pinn4pfConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "Pinn4pfConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LossConfig:
    beta0: float
    beta1: float
    y_diag: np.ndarray | None = None

    def __post_init__(self):
        if self.beta0 < 0 or self.beta1 < 0 or abs(self.beta0 + self.beta1 - 1.0) > 1e-12:
            raise ValueError("beta0 and beta1 must be non-negative and sum to 1")
        if self.beta1 > 0:
            if self.y_diag is None or np.any(np.asarray(self.y_diag) == 0):
                raise ValueError("the physics term needs a nonzero Y_kk for every load bus")


def beta_schedule(epoch: int, cfg) -> tuple[float, float]:
    """(beta0, beta1): beta1 is 0 before ``ramp_start_epoch``, rises linearly to
    ``beta1_max`` at ``ramp_end_epoch`` and stays there."""
    top = cfg.beta1_max
    start, end = cfg.ramp_start_epoch, cfg.ramp_end_epoch
    if top == 0 or epoch < start:
        b1 = 0.0
    elif epoch >= end:
        b1 = top
    else:
        b1 = top * (epoch - start) / (end - start)
    return 1.0 - b1, b1


# ---------------------------------------------------------------- physics


def admittance_diagonal(net: Network, Y=None) -> np.ndarray:
    """Y_kk at the load buses."""
    if Y is None:
        Y = build_admittance(net)
    return np.asarray(Y.diagonal())[net.load_buses]


def _injection_conj(p_d, q_d):
    # conj(S) with S = -(p_d + j q_d)
    return -np.asarray(p_d) + 1j * np.asarray(q_d)


def compute_psi_from_labels(y_diag, p_d, q_d, mu, omega) -> np.ndarray:
    """psi_k = conj(S_k) / conj(V_k) - Y_kk V_k, row by row (diagonal only)."""
    V = np.asarray(mu) + 1j * np.asarray(omega)
    small = np.abs(V) < PSI_GUARD
    if np.any(small):
        rows = np.unique(np.nonzero(small)[0]) if V.ndim > 1 else np.array([0])
        raise ValueError(f"voltage magnitude below {PSI_GUARD} in row(s) {rows.tolist()}")
    return _injection_conj(p_d, q_d) / np.conj(V) - y_diag * V


def physical_model(y_diag, p_d, q_d, mu_hat, omega_hat, psi, guard: float = PSI_GUARD):
    """Reconstructed voltages ``(conj(S)/conj(V_hat) - psi) / Y_kk``.

    Returns (mu_rec, omega_rec, valid). Rows with any predicted magnitude
    below ``guard`` are marked invalid and reconstructed as NaN.
    """
    mu_hat = np.atleast_2d(mu_hat)
    omega_hat = np.atleast_2d(omega_hat)
    V = mu_hat + 1j * omega_hat
    valid = np.all(np.abs(V) >= guard, axis=1)
    Vs = np.where(valid[:, None], V, 1.0)
    rec = (_injection_conj(p_d, q_d) / np.conj(Vs) - psi) / y_diag
    rec = np.where(valid[:, None], rec, np.nan)
    return rec.real, rec.imag, valid


def physical_model_backward(y_diag, p_d, q_d, mu_hat, omega_hat, g_re, g_im):
    """Chain rule through the reconstruction.

    With K = -conj(S) / (Y_kk conj(V_hat)^2): d(rec)/d(mu) = K and
    d(rec)/d(omega) = -jK. Given upstream gradients on the real and imaginary
    parts, returns (d/d mu_hat, d/d omega_hat).
    """
    V = mu_hat + 1j * omega_hat
    K = -_injection_conj(p_d, q_d) / (y_diag * np.conj(V) ** 2)
    return g_re * K.real + g_im * K.imag, g_re * K.imag - g_im * K.real


def composite_loss(pred, y, x, psi, cfg: LossConfig, guard: float = PSI_GUARD):
    """beta0 * MSE(pred, y) + beta1 * MSE(physical_model(pred), y).

    ``x`` holds raw loads ``[p_d..., q_d...]``. Returns
    (loss, d loss / d pred, parts) where parts has the two terms and the
    number of rows skipped by the magnitude guard.
    """
    sup = mse(pred, y)
    dpred = cfg.beta0 * mse_backward(pred, y)
    parts = {"supervised": sup, "physical": 0.0, "skipped": 0}
    loss = cfg.beta0 * sup
    if cfg.beta1 > 0:
        n = pred.shape[1] // 2
        p_d, q_d = x[:, :n], x[:, n:]
        mu_hat, om_hat = pred[:, :n], pred[:, n:]
        mu_rec, om_rec, valid = physical_model(cfg.y_diag, p_d, q_d, mu_hat, om_hat, psi, guard)
        parts["skipped"] = int(np.sum(~valid))
        if np.any(valid):
            v = valid
            d_mu = mu_rec[v] - y[v, :n]
            d_om = om_rec[v] - y[v, n:]
            count = 2 * n * int(np.sum(v))
            phys = float((np.sum(d_mu * d_mu) + np.sum(d_om * d_om)) / count)
            g_mu, g_om = physical_model_backward(
                cfg.y_diag, p_d[v], q_d[v], mu_hat[v], om_hat[v], 2.0 * d_mu / count, 2.0 * d_om / count
            )
            dpred[v, :n] += cfg.beta1 * g_mu
            dpred[v, n:] += cfg.beta1 * g_om
            parts["physical"] = phys
            loss += cfg.beta1 * phys
    return loss, dpred, parts


def attach_physics(ds: Dataset, net: Network) -> Dataset:
    """Fill ``ds.y_diag`` and ``ds.psi`` (from the dataset's own rows)."""
    y_diag = admittance_diagonal(net)
    ds.y_diag = y_diag
    ds.psi = compute_psi_from_labels(y_diag, ds.p_d, ds.q_d, ds.mu, ds.omega)
    return ds


# ---------------------------------------------------------------- model


def build_pinn4pf(n_load: int, cfg: Pinn4pfConfig) -> HeadedNetwork:
    """Shared ReLU trunk, then separate heads for the real (mu) and imaginary
    (omega) voltage parts, each ending in a linear layer of width ``n_load``."""
    if cfg.learned_psi:
        raise NotImplementedError("a learned hidden-function head is not supported")
    shared = cfg.shared_width or 2 * n_load
    head = cfg.head_width or n_load
    return HeadedNetwork(
        2 * n_load,
        [shared] * cfg.n_shared_layers,
        [head] * cfg.n_head_layers,
        [n_load, n_load] if cfg.split_heads else [2 * n_load],
        trunk_activation="relu",
        head_activation=cfg.activation,
        dropout=cfg.dropout,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    model: HeadedNetwork
    history: list[dict]
    best_epoch: int
    best_val: float
    optimizer: AdamState = field(repr=False)
    skipped_rows: int = 0
    config: object = None


def train(model: HeadedNetwork, dataset: Dataset, cfg, verbose: int = 0) -> TrainResult:
    """Mini-batch Adam on the training split; keeps the parameters with the
    lowest validation MSE.

    ``cfg`` needs ``lr, weight_decay, batch_size, epochs, beta1_max,
    ramp_start_epoch, ramp_end_epoch, seed``. With ``beta1_max == 0`` the loss
    is purely supervised and ψ is never touched.
    """
    train_idx = dataset.rows("train")
    val_idx = dataset.rows("val")
    if len(train_idx) == 0:
        raise ValueError("dataset has no training rows")
    x, y = dataset.x[train_idx], dataset.y[train_idx]
    xv, yv = dataset.x[val_idx], dataset.y[val_idx]
    physical = cfg.beta1_max > 0
    psi = y_diag = None
    if physical:
        if dataset.y_diag is None:
            raise ValueError("physics-informed training needs Y_kk; call attach_physics first")
        y_diag = dataset.y_diag
        if dataset.psi is not None:
            psi = dataset.psi[train_idx]
        else:
            psi = compute_psi_from_labels(y_diag, x[:, : dataset.n_load], x[:, dataset.n_load :], y[:, : dataset.n_load], y[:, dataset.n_load :])

    model.set_input_stats(*dataset.input_stats())
    model.set_output_bias(y.mean(axis=0))
    P = model.params
    opt = AdamState(P.size, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 4])
    n = len(train_idx)
    bs = cfg.batch_size

    history: list[dict] = []
    best_val = np.inf
    best_epoch = -1
    best_params = P.data.copy()
    skipped_total = 0
    for epoch in range(cfg.epochs):
        b0, b1 = beta_schedule(epoch, cfg)
        lcfg = LossConfig(b0, b1, y_diag if b1 > 0 else None)
        perm = rng.permutation(n)
        tot = sup_tot = phys_tot = 0.0
        skipped = 0
        for batch, start in enumerate(range(0, n, bs)):
            idx = perm[start : start + bs]
            out, cache = model.forward(x[idx], training=True, rng=rng)
            loss, dout, parts = composite_loss(out, y[idx], x[idx], None if psi is None else psi[idx], lcfg)
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite loss", epoch, batch, history)
            model.backward(cache, dout)
            adam_step(P.data, P.grad, opt, names=P.path_of)
            k = len(idx)
            tot += loss * k
            sup_tot += parts["supervised"] * k
            phys_tot += parts["physical"] * k
            skipped += parts["skipped"]
        val = mse(model.predict(xv), yv) if len(val_idx) else tot / n
        if not np.isfinite(val):
            raise TrainingDivergedError("non-finite validation loss", epoch, -1, history)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_params[...] = P.data
        skipped_total += skipped
        history.append(
            {
                "epoch": epoch,
                "train_loss": tot / n,
                "train_supervised": sup_tot / n,
                "train_physical": phys_tot / n,
                "val_loss": val,
                "beta0": b0,
                "beta1": b1,
                "skipped": skipped,
                "alphas": model.alphas(),
            }
        )
        if verbose and (epoch % verbose == 0 or epoch == cfg.epochs - 1):
            log.info("epoch %d train %.3e val %.3e beta1 %.3f", epoch, tot / n, val, b1)

    if best_epoch >= 0:
        P.data[...] = best_params
    return TrainResult(model, history, best_epoch, float(best_val), opt, skipped_total, cfg)


def write_history_csv(history: list[dict], path) -> None:
    """One row per epoch: epoch, train_loss, val_loss, beta1, then extras and alphas."""
    alpha_names = sorted(history[0]["alphas"]) if history else []
    cols = ["epoch", "train_loss", "val_loss", "beta1", "beta0", "train_supervised", "train_physical", "skipped"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + [f"alpha[{a}]" for a in alpha_names])
        for row in history:
            w.writerow([row[c] for c in cols] + [row["alphas"][a] for a in alpha_names])
