"""Test-set metrics, reports and the experiment sweeps built on them.

Direct quantities are voltage magnitude ``v`` and angle ``delta`` at the load
buses; derived ones are line current magnitude and sending-end active and
reactive power, recomputed from the predicted state with the reference bus
held at 1.0 p.u.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import __version__
from .grid import Network, build_admittance, network_hash
from .powerflow import LoadVector, PowerFlowError, VoltageState, line_flows, solve_newton_raphson
from .scenarios import Dataset, SamplingSpec, dataset_hash, sample_scenarios

__all__ = [
    "QuantityStats",
    "EvalReport",
    "SweepSpec",
    "SweepResult",
    "DIRECT",
    "DERIVED",
    "quantity_stats",
    "direct_metrics",
    "derived_metrics",
    "evaluate_direct",
    "evaluate_derived",
    "evaluate",
    "stress_eval",
    "run_sweep",
    "random_search",
    "write_long_csv",
]

log = logging.getLogger(__name__)

DIRECT = ("v", "delta")
DERIVED = ("i", "p", "q")
AXES = ("noise", "train_size", "system_size", "ablation", "stress")


@dataclass
class QuantityStats:
    """Squared-error summary for one quantity over a rows x buses (or lines) table.

    ``mse`` is the grand mean, ``std_rows`` the spread of per-row MSEs and
    ``std_bus`` the spread of per-bus MSEs; ``max_bus`` is the worst bus.
    """

    mse: float
    std_rows: float
    std_bus: float
    max_bus: float
    per_bus: np.ndarray = field(repr=False)

    def __float__(self):
        return self.mse

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_bus"] = self.per_bus.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuantityStats":
        return cls(d["mse"], d["std_rows"], d["std_bus"], d["max_bus"], np.asarray(d["per_bus"]))


def quantity_stats(err: np.ndarray) -> QuantityStats:
    sq = np.atleast_2d(err) ** 2
    per_row = sq.mean(axis=1)
    per_bus = sq.mean(axis=0)
    return QuantityStats(float(sq.mean()), float(per_row.std()), float(per_bus.std()), float(per_bus.max()), per_bus)


def _split_state(y: np.ndarray) -> VoltageState:
    n = y.shape[1] // 2
    return VoltageState(y[:, :n], y[:, n:])


def direct_metrics(pred: np.ndarray, labels: np.ndarray) -> dict[str, QuantityStats]:
    """MSE of magnitude and angle; angle errors are wrapped into (-pi, pi]."""
    sp, sl = _split_state(pred), _split_state(labels)
    dv = sp.v - sl.v
    dd = np.angle(np.exp(1j * (sp.delta - sl.delta)))
    return {"v": quantity_stats(dv), "delta": quantity_stats(dd)}


def _full_state(net: Network, y: np.ndarray) -> VoltageState:
    n = y.shape[1] // 2
    V = np.ones((y.shape[0], net.n_total), dtype=complex)
    V[:, net.load_buses] = y[:, :n] + 1j * y[:, n:]
    return VoltageState.from_phasor(V)


def derived_metrics(pred: np.ndarray, labels: np.ndarray, net: Network, Y=None) -> dict[str, QuantityStats]:
    """MSE of line current magnitude and sending-end P and Q, per line."""
    fp = line_flows(net, Y, _full_state(net, pred))
    fl = line_flows(net, Y, _full_state(net, labels))
    return {
        "i": quantity_stats(fp.current - fl.current),
        "p": quantity_stats(fp.p - fl.p),
        "q": quantity_stats(fp.q - fl.q),
    }


def _predict(model, ds: Dataset, split: str):
    idx = ds.rows(split)
    if len(idx) == 0:
        raise ValueError(f"dataset has no {split!r} rows")
    return model.predict(ds.x[idx]), ds.y[idx]


def evaluate_direct(model, ds: Dataset, net: Network, split: str = "test"):
    """(MSE_v, MSE_delta) as :class:`QuantityStats`."""
    m = direct_metrics(*_predict(model, ds, split))
    return m["v"], m["delta"]


def evaluate_derived(model, ds: Dataset, net: Network, split: str = "test"):
    """(MSE_i, MSE_p, MSE_q) as :class:`QuantityStats`."""
    m = derived_metrics(*_predict(model, ds, split), net)
    return m["i"], m["p"], m["q"]


@dataclass
class EvalReport:
    model: str
    system: str
    split: str
    metrics: dict[str, QuantityStats]
    meta: dict = field(default_factory=dict)

    def mse(self, quantity: str) -> float:
        return self.metrics[quantity].mse

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "system": self.system,
            "split": self.split,
            "metrics": {k: v.to_dict() for k, v in self.metrics.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        metrics = {k: QuantityStats.from_dict(v) for k, v in d["metrics"].items()}
        return cls(d["model"], d["system"], d["split"], metrics, d.get("meta", {}))

    def rows(self) -> list[dict]:
        """One row per quantity with mean, both stds and the per-bus max."""
        out = []
        for q, s in self.metrics.items():
            out.append(
                {
                    "model": self.model,
                    "system": self.system,
                    "split": self.split,
                    "quantity": q,
                    "mse": s.mse,
                    "std_rows": s.std_rows,
                    "std_bus": s.std_bus,
                    "max_bus": s.max_bus,
                }
            )
        return out

    def write(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.json`` and ``<stem>.csv``."""
        stem = Path(stem)
        jp, cp = stem.with_suffix(".json"), stem.with_suffix(".csv")
        jp.write_text(json.dumps(self.to_dict(), indent=1) + "\n")
        rows = self.rows()
        with open(cp, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        return jp, cp


def evaluate(model, ds: Dataset, net: Network, name: str = "model", split: str = "test", meta: dict | None = None) -> EvalReport:
    pred, labels = _predict(model, ds, split)
    metrics = {**direct_metrics(pred, labels), **derived_metrics(pred, labels, net)}
    info = {
        "dataset_hash": dataset_hash(ds),
        "grid_hash": network_hash(net),
        "n_rows": int(len(labels)),
        "version": __version__,
    }
    info.update(meta or {})
    return EvalReport(name, f"{net.n_total}-bus", split, metrics, info)


# ---------------------------------------------------------------- stress


def stress_eval(
    model,
    net: Network,
    sampling: SamplingSpec,
    scale: float = 1.5,
    n_scenarios: int = 205,
    seed: int = 0,
    name: str = "model",
) -> EvalReport:
    """Evaluate on fresh scenarios drawn with nominal apparent power scaled by
    ``scale``. Scenarios the solver cannot handle are logged and dropped."""
    if scale < 1:
        raise ValueError("stress scale must be >= 1")
    spec = SamplingSpec(sampling.base_s * scale, sampling.base_pf, sampling.rel_std, max(n_scenarios, 1), seed + 7919)
    pool = sample_scenarios(spec)
    Y = build_admittance(net)
    x, y = [], []
    failures = 0
    for j in range(min(n_scenarios, len(pool))):
        try:
            sol = solve_newton_raphson(net, LoadVector(pool.p_d[j], pool.q_d[j]), Y=Y)
        except PowerFlowError as exc:
            failures += 1
            log.warning("stress scenario %d dropped: %s", j, exc)
            continue
        V = sol.state.phasor[net.load_buses]
        x.append(np.concatenate([pool.p_d[j], pool.q_d[j]]))
        y.append(np.concatenate([V.real, V.imag]))
    if not y:
        raise PowerFlowError(f"no stress scenario solved at scale {scale}")
    x, y = np.array(x), np.array(y)
    ds = Dataset(x, y, np.full(len(x), 2, dtype=np.int8), np.array(net.load_buses), meta={"stress_scale": scale})
    return evaluate(model, ds, net, name, "test", {"stress_scale": scale, "stress_seed": seed, "nr_failures": failures})


# ---------------------------------------------------------------- sweeps


# reference cell of each axis for the normalized curves: (model, value)
REFERENCE_CELL = {"noise": ("pinn4pf", 0.10), "train_size": ("pinn4pf", 256)}


@dataclass
class SweepSpec:
    """One experiment axis over a grid of values, for every model and seed.

    ``noise`` values are levels in [0, 0.10]; ``train_size`` values are
    training-row counts (validation and test rows stay fixed); ``system_size``
    values are bundled feeder sizes; ``ablation`` values are double-head
    variant names (``models`` is ignored); ``stress`` values are load scales.
    """

    axis: str
    values: list
    seeds: list[int] = field(default_factory=lambda: [0])
    models: list[str] = field(default_factory=lambda: ["pinn4pf", "mlp"])
    n_bus: int = 15
    n_points: int | None = None
    epochs: int | None = None
    noise: float = 0.0
    metrics: tuple[str, ...] = DIRECT + DERIVED
    reference: tuple | None = None

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {AXES}")
        if not self.values:
            raise ValueError("sweep grid is empty")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")
        if self.reference is None and self.axis in REFERENCE_CELL:
            ref = REFERENCE_CELL[self.axis]
            if ref[0] in self.models and ref[1] in self.values:
                self.reference = ref

    def cells(self) -> list[dict]:
        models = ["-"] if self.axis == "ablation" else self.models
        return [
            {"axis": self.axis, "value": v, "model": v if self.axis == "ablation" else m, "seed": s}
            for s in self.seeds
            for v in self.values
            for m in models
        ]


@dataclass
class SweepResult:
    spec: SweepSpec
    reports: list[tuple[dict, EvalReport]]
    failures: list[tuple[dict, str]]

    def mean(self, model: str, value, quantity: str = "v") -> float:
        vals = [r.mse(quantity) for c, r in self.reports if c["model"] == model and c["value"] == value]
        return float(np.mean(vals)) if vals else float("nan")

    def normalized(self, quantity: str = "v") -> list[dict]:
        """Seed-averaged MSE per (model, value) divided by the reference cell,
        which therefore reads exactly 1.0."""
        if self.spec.reference is None:
            return []
        ref_model, ref_value = self.spec.reference
        ref = self.mean(ref_model, ref_value, quantity)
        out = []
        for m in dict.fromkeys(c["model"] for c, _ in self.reports):
            for v in self.spec.values:
                val = self.mean(m, v, quantity)
                norm = 1.0 if (m, v) == (ref_model, ref_value) else val / ref
                out.append({"model": m, "value": v, "quantity": quantity, "normalized": norm})
        return out

    def long_rows(self) -> list[dict]:
        rows = []
        for cell, rep in self.reports:
            label = f"{cell['value']}|seed={cell['seed']}"
            for q in self.spec.metrics:
                if q in rep.metrics:
                    s = rep.metrics[q]
                    rows.append({"axis": cell["axis"], "cell": label, "model": cell["model"], "metric": f"mse_{q}", "value": s.mse})
                    rows.append({"axis": cell["axis"], "cell": label, "model": cell["model"], "metric": f"max_{q}", "value": s.max_bus})
        for q in ("v", "delta"):
            for row in self.normalized(q):
                rows.append(
                    {"axis": self.spec.axis, "cell": str(row["value"]), "model": row["model"], "metric": f"norm_{q}", "value": row["normalized"]}
                )
        return rows

    def write(self, outdir) -> list[Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        paths = [write_long_csv(self.long_rows(), outdir / f"sweep_{self.spec.axis}.csv")]
        blob = {
            "spec": {k: v for k, v in asdict(self.spec).items()},
            "cells": [{"cell": c, "report": r.to_dict()} for c, r in self.reports],
            "failures": [{"cell": c, "error": e} for c, e in self.failures],
        }
        p = outdir / f"sweep_{self.spec.axis}.json"
        p.write_text(json.dumps(blob, indent=1, default=str) + "\n")
        return paths + [p]


def write_long_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["axis", "cell", "model", "metric", "value"])
        w.writeheader()
        w.writerows(rows)
    return path


@lru_cache(maxsize=8)
def _system(n_bus: int, n_points, seed: int, noise: float, counts):
    from .presets import prepare_system

    return prepare_system(n_bus, n_points, seed, noise, counts)


def _cell_data(spec: SweepSpec, cell: dict):
    from .scenarios import split_counts

    seed, v = cell["seed"], cell["value"]
    if spec.axis == "noise":
        return _system(spec.n_bus, spec.n_points, seed, float(v), None), None
    if spec.axis == "train_size":
        # one dataset large enough for the biggest cell; every cell shares val/test
        base = split_counts(spec.n_points or 512)
        counts = (max(spec.values), base[1], base[2])
        sysm = _system(spec.n_bus, None, seed, spec.noise, counts)
        return sysm, sysm.dataset.limit_training(int(v))
    if spec.axis == "system_size":
        return _system(int(v), None, seed, spec.noise, None), None
    return _system(spec.n_bus, spec.n_points, seed, spec.noise, None), None


def _run_cell(args) -> tuple[dict, dict | None, str | None]:
    spec, cell = args
    from .presets import config_hash, fit_model

    try:
        sysm, ds = _cell_data(spec, cell)
        ds = ds if ds is not None else sysm.dataset
        result = fit_model(cell["model"], ds, spec.epochs, cell["seed"])
        meta = {"seed": cell["seed"], "config_hash": config_hash(result.config), "best_epoch": result.best_epoch}
        if spec.axis == "stress":
            rep = stress_eval(result.model, sysm.net, sysm.sampling, float(cell["value"]), seed=cell["seed"], name=cell["model"])
            rep.meta.update(meta)
        else:
            rep = evaluate(result.model, ds, sysm.net, cell["model"], meta=meta)
        return cell, rep.to_dict(), None
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("sweep cell %s failed: %s", cell, exc)
        return cell, None, f"{type(exc).__name__}: {exc}"


def run_sweep(spec: SweepSpec, jobs: int = 1) -> SweepResult:
    """Train and evaluate every cell; failures are recorded and skipped."""
    cells = spec.cells()
    args = [(spec, c) for c in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(_run_cell, args))
    else:
        outcomes = [_run_cell(a) for a in args]
    reports, failures = [], []
    for cell, rep, err in outcomes:
        if err is None:
            reports.append((cell, EvalReport.from_dict(rep)))
        else:
            failures.append((cell, err))
    return SweepResult(spec, reports, failures)


def random_search(objective, space: dict[str, tuple[float, float]], n_trials: int = 20, seed: int = 0, log_scale=()):
    """Minimize ``objective(**params)`` over a box by uniform random sampling.

    Names listed in ``log_scale`` are sampled log-uniformly. Returns
    (best_params, best_value, trials) where trials is a list of (params, value).
    """
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_trials):
        params = {}
        for name, (lo, hi) in space.items():
            if name in log_scale:
                params[name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
            else:
                params[name] = float(rng.uniform(lo, hi))
        trials.append((params, float(objective(**params))))
    best = min(trials, key=lambda t: t[1])
    return best[0], best[1], trials
