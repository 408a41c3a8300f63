"""Shipped experiment presets and helpers that turn them into data and models."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

from .baselines import LrConfig, MlpConfig, build_lr, build_mlp
from .grid import Network, bundled_feeder
from .pinn4pf import Pinn4pfConfig, TrainResult, attach_physics, build_pinn4pf, train
from .scenarios import (
    DEFAULT_POINTS,
    Dataset,
    NoiseSpec,
    SamplingSpec,
    build_dataset,
    inject_noise,
    nominal_sampling_spec,
    sample_scenarios,
)

__all__ = [
    "PRESETS",
    "MODEL_KINDS",
    "ABLATION_KINDS",
    "System",
    "prepare_system",
    "model_config",
    "fit_model",
    "config_hash",
]

PRESETS = {
    "paper-4bus": {"n_bus": 4, "n_points": DEFAULT_POINTS[4]},
    "paper-15bus": {"n_bus": 15, "n_points": DEFAULT_POINTS[15]},
    "paper-290bus": {"n_bus": 290, "n_points": DEFAULT_POINTS[290]},
    "paper-2224bus": {"n_bus": 2224, "n_points": DEFAULT_POINTS[2224]},
}

# the four double-head variants compared in the ablation
ABLATION_KINDS = {
    "relu-supervised": {"activation": "relu", "beta1_max": 0.0},
    "adaptive-supervised": {"activation": "adaptive", "beta1_max": 0.0},
    "relu-physical": {"activation": "relu"},
    "adaptive-physical": {"activation": "adaptive"},
}
MODEL_KINDS = ("pinn4pf", "mlp", "lr", *ABLATION_KINDS)


@dataclass
class System:
    net: Network
    sampling: SamplingSpec
    dataset: Dataset


def prepare_system(
    n_bus: int = 15,
    n_points: int | None = None,
    seed: int = 0,
    noise: float = 0.0,
    counts: tuple[int, int, int] | None = None,
    net: Network | None = None,
    jobs: int = 1,
) -> System:
    """Bundled feeder, nominal loads, scenario pool and a solved dataset with
    ψ attached. ``noise`` corrupts the training rows only."""
    net = net if net is not None else bundled_feeder(n_bus)
    n_points = n_points or (sum(counts) if counts else DEFAULT_POINTS.get(net.n_total, 512))
    spec = nominal_sampling_spec(net, seed=seed)
    pool = sample_scenarios(spec)
    ds = build_dataset(net, pool, n_points, seed, counts=counts, jobs=jobs)
    ds.meta["sampling"] = spec.to_dict()
    if noise:
        ds = inject_noise(ds, NoiseSpec(level=noise, seed=seed))
    attach_physics(ds, net)
    return System(net, spec, ds)


def model_config(kind: str, epochs: int | None = None, seed: int = 0, **overrides):
    if kind == "pinn4pf":
        cfg = Pinn4pfConfig(seed=seed)
    elif kind in ABLATION_KINDS:
        cfg = Pinn4pfConfig(seed=seed, **ABLATION_KINDS[kind])
    elif kind == "mlp":
        cfg = MlpConfig(seed=seed)
    elif kind == "lr":
        cfg = LrConfig(seed=seed)
    else:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if epochs is not None:
        overrides["epochs"] = epochs
    unknown = set(overrides) - {f.name for f in fields(cfg)}
    if unknown:
        raise ValueError(f"unknown {kind} config fields: {sorted(unknown)}")
    return replace(cfg, **overrides) if overrides else cfg


def build_model(kind: str, n_load: int, cfg):
    if kind == "mlp":
        return build_mlp(n_load, cfg)
    if kind == "lr":
        return build_lr(n_load, cfg)
    return build_pinn4pf(n_load, cfg)


def fit_model(kind: str, ds: Dataset, epochs: int | None = None, seed: int = 0, verbose: int = 0, **overrides) -> TrainResult:
    cfg = model_config(kind, epochs, seed, **overrides)
    return train(build_model(kind, ds.n_load, cfg), ds, cfg, verbose)


def config_hash(cfg) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()
