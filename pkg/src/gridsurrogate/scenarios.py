"""Load scenario sampling, ground-truth datasets and training-set noise."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import Network, build_admittance, network_hash
from .powerflow import LoadVector, PowerFlowError, solve_newton_raphson

__all__ = [
    "SamplingSpec",
    "ScenarioPool",
    "Dataset",
    "NoiseSpec",
    "DatasetGenerationError",
    "nominal_sampling_spec",
    "sample_scenarios",
    "split_counts",
    "build_dataset",
    "inject_noise",
    "save_dataset",
    "load_dataset",
    "dataset_hash",
    "DEFAULT_POINTS",
    "SPLIT_CODES",
]

log = logging.getLogger(__name__)

DEFAULT_POINTS = {4: 256, 15: 512, 290: 1024, 2224: 2048}
SPLIT_CODES = {"train": 0, "val": 1, "test": 2}
MAX_FAILURE_FRACTION = 0.10


class DatasetGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplingSpec:
    """Per-bus nominal apparent power and power factor for scenario sampling."""

    base_s: np.ndarray
    base_pf: np.ndarray
    rel_std: float = 0.30
    pool_size: int = 5000
    seed: int = 0

    def __post_init__(self):
        s = np.asarray(self.base_s, dtype=float)
        pf = np.asarray(self.base_pf, dtype=float)
        if s.shape != pf.shape or s.ndim != 1:
            raise ValueError("base_s and base_pf must be 1-D and equally long")
        if np.any(s < 0):
            raise ValueError("base_s must be non-negative")
        if np.any(pf <= 0) or np.any(pf > 1):
            raise ValueError("power factors must lie in (0, 1]")
        if not self.rel_std > 0:
            raise ValueError("rel_std must be positive")
        if self.pool_size < 1:
            raise ValueError("pool_size must be positive")
        object.__setattr__(self, "base_s", s)
        object.__setattr__(self, "base_pf", pf)

    def scaled(self, factor: float) -> "SamplingSpec":
        return replace(self, base_s=self.base_s * factor)

    def to_dict(self) -> dict:
        return {
            "base_s": self.base_s.tolist(),
            "base_pf": self.base_pf.tolist(),
            "rel_std": self.rel_std,
            "pool_size": self.pool_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingSpec":
        return cls(np.array(d["base_s"]), np.array(d["base_pf"]), d["rel_std"], d["pool_size"], d["seed"])


@dataclass(frozen=True)
class ScenarioPool:
    p_d: np.ndarray
    q_d: np.ndarray

    def __len__(self):
        return self.p_d.shape[0]

    def loads(self, j: int) -> LoadVector:
        return LoadVector(self.p_d[j], self.q_d[j])


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    x_range_at_max: float = 1.0
    y_range_at_max: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.level <= 0.10 + 1e-12:
            raise ValueError(f"noise level must be within [0, 0.10], got {self.level}")


@dataclass
class Dataset:
    """Scenario rows ``x = [p_d..., q_d...]`` and labels ``y = [mu..., omega...]``
    over the load buses, with a split code per row (0 train, 1 val, 2 test)."""

    x: np.ndarray
    y: np.ndarray
    split: np.ndarray
    load_buses: np.ndarray
    psi: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    y_diag: np.ndarray | None = None

    @property
    def n_load(self) -> int:
        return self.x.shape[1] // 2

    def __len__(self):
        return self.x.shape[0]

    @property
    def p_d(self):
        return self.x[:, : self.n_load]

    @property
    def q_d(self):
        return self.x[:, self.n_load :]

    @property
    def mu(self):
        return self.y[:, : self.n_load]

    @property
    def omega(self):
        return self.y[:, self.n_load :]

    def rows(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_CODES[name])

    def part(self, name: str) -> "Dataset":
        idx = self.rows(name)
        return Dataset(
            self.x[idx],
            self.y[idx],
            self.split[idx],
            self.load_buses,
            None if self.psi is None else self.psi[idx],
            dict(self.meta),
            self.y_diag,
        )

    def split_sizes(self) -> tuple[int, int, int]:
        return tuple(int(np.sum(self.split == c)) for c in (0, 1, 2))

    def input_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-feature mean and std over the training rows (std floored at 1e-12)."""
        xt = self.x[self.rows("train")]
        return xt.mean(axis=0), np.maximum(xt.std(axis=0), 1e-12)

    def limit_training(self, n_train: int) -> "Dataset":
        """Keep only the first ``n_train`` training rows; val/test are untouched."""
        train = self.rows("train")
        if n_train > len(train):
            raise ValueError(f"dataset has only {len(train)} training rows")
        keep = np.ones(len(self), dtype=bool)
        keep[train[n_train:]] = False
        out = Dataset(
            self.x[keep],
            self.y[keep],
            self.split[keep],
            self.load_buses,
            None if self.psi is None else self.psi[keep],
            dict(self.meta),
            self.y_diag,
        )
        out.meta["n_train"] = n_train
        return out


def nominal_sampling_spec(
    net: Network,
    seed: int = 0,
    v_min_target: float = 0.95,
    rel_std: float = 0.30,
    pool_size: int = 5000,
) -> SamplingSpec:
    """Nominal per-bus loads for a feeder.

    Relative sizes and power factors are drawn once per (feeder, seed); the
    common scale is then set by bisection so the nominal operating point has
    a minimum bus voltage of ``v_min_target``.
    """
    rng = np.random.default_rng([net.n_total, seed, 0x5EED])
    weight = rng.uniform(0.5, 1.5, net.n_load)
    pf = np.round(rng.uniform(0.85, 0.98, net.n_load), 4)
    Y = build_admittance(net)

    def vmin(scale):
        s = scale * weight
        p = s * pf
        try:
            sol = solve_newton_raphson(net, LoadVector(p, np.sqrt(s**2 - p**2)), Y=Y)
        except PowerFlowError:
            return 0.0
        return float(sol.state.v.min())

    lo, hi = 0.0, 1e-3
    while vmin(hi) > v_min_target:
        lo, hi = hi, hi * 2
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if vmin(mid) > v_min_target:
            lo = mid
        else:
            hi = mid
    return SamplingSpec(lo * weight, pf, rel_std, pool_size, seed)


def sample_scenarios(spec: SamplingSpec) -> ScenarioPool:
    """Draw ``pool_size`` scenarios: s ~ N(s_d, rel_std * s_d) per bus, then
    p = s * pf and q = sqrt(s^2 - p^2). Non-positive draws are redrawn."""
    rng = np.random.default_rng([spec.seed, 1])
    n = len(spec.base_s)
    mean = np.broadcast_to(spec.base_s, (spec.pool_size, n))
    std = spec.rel_std * mean
    s = rng.normal(mean, std)
    bad = (s <= 0) & (mean > 0)
    while np.any(bad):
        s[bad] = rng.normal(mean[bad], std[bad])
        bad = (s <= 0) & (mean > 0)
    s = np.where(mean > 0, s, 0.0)
    p = s * spec.base_pf
    q = np.sqrt(np.maximum(s**2 - p**2, 0.0))
    return ScenarioPool(p, q)


def split_counts(n_points: int) -> tuple[int, int, int]:
    """40/20/40 split: train = floor(0.4 N), test = round-half-up(0.4 N), val = rest."""
    n_train = int(np.floor(0.4 * n_points))
    n_test = int(np.floor(0.4 * n_points + 0.5))
    return n_train, n_points - n_train - n_test, n_test


def _solve_rows(args):
    net, p, q, tol = args
    Y = build_admittance(net)
    out = []
    for pi, qi in zip(p, q):
        try:
            sol = solve_newton_raphson(net, LoadVector(pi, qi), tol=tol, Y=Y)
            out.append(sol.state.phasor)
        except PowerFlowError as exc:
            out.append(exc)
    return out


def _solve_candidates(net, pool, idx, tol, jobs):
    if jobs <= 1 or len(idx) < 2 * jobs:
        return _solve_rows((net, pool.p_d[idx], pool.q_d[idx], tol))
    chunks = np.array_split(idx, jobs)
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        parts = ex.map(_solve_rows, [(net, pool.p_d[c], pool.q_d[c], tol) for c in chunks])
        return [r for part in parts for r in part]


def build_dataset(
    net: Network,
    pool: ScenarioPool,
    n_points: int,
    seed: int,
    tol: float = 1e-10,
    counts: tuple[int, int, int] | None = None,
    jobs: int = 1,
) -> Dataset:
    """Pick ``n_points`` pool scenarios at random, solve each with Newton-Raphson
    and tag rows train/val/test. Failed solves are replaced by the next
    candidate; more than 10% failures aborts.

    Labels are solved tighter than the solver default: the hidden function
    computed from a row inherits its mismatch (divided by |V|), and it must
    match the full-matrix sum to 1e-9."""
    if n_points > len(pool):
        raise ValueError(f"n_points={n_points} exceeds pool size {len(pool)}")
    counts = split_counts(n_points) if counts is None else tuple(counts)
    if sum(counts) != n_points:
        raise ValueError("split counts must add up to n_points")
    rng = np.random.default_rng([seed, 2])
    order = rng.permutation(len(pool))

    chosen: list[int] = []
    phasors: list[np.ndarray] = []
    failures = 0
    cursor = 0
    while len(chosen) < n_points:
        need = n_points - len(chosen)
        if cursor + need > len(order):
            raise DatasetGenerationError("scenario pool exhausted before reaching n_points")
        cand = order[cursor : cursor + need]
        cursor += need
        for j, res in zip(cand, _solve_candidates(net, pool, cand, tol, jobs)):
            if isinstance(res, Exception):
                failures += 1
                log.warning("scenario %d skipped: %s", j, res)
            else:
                chosen.append(int(j))
                phasors.append(res)
        if failures > MAX_FAILURE_FRACTION * n_points:
            raise DatasetGenerationError(
                f"{failures} Newton-Raphson failures exceed {MAX_FAILURE_FRACTION:.0%} of {n_points} points"
            )

    idx = np.array(chosen)
    V = np.array(phasors)[:, net.load_buses]
    x = np.hstack([pool.p_d[idx], pool.q_d[idx]])
    y = np.hstack([V.real, V.imag])
    split = np.empty(n_points, dtype=np.int8)
    perm = rng.permutation(n_points)
    n_train, n_val, _ = counts
    split[perm[:n_train]] = 0
    split[perm[n_train : n_train + n_val]] = 1
    split[perm[n_train + n_val :]] = 2
    meta = {
        "seed": seed,
        "tol": tol,
        "n_points": n_points,
        "pool_index": idx.tolist(),
        "nr_failures": failures,
        "grid_hash": network_hash(net),
        "noise": asdict(NoiseSpec()),
    }
    return Dataset(x, y, split, np.array(net.load_buses), None, meta)


def inject_noise(ds: Dataset, spec: NoiseSpec) -> Dataset:
    """Perturb training rows by ``±u`` per entry, ``u ~ U(0, range * level / 0.10)``.

    Validation and test rows are never touched. Any precomputed ψ is dropped
    because it no longer matches the corrupted rows.
    """
    out = Dataset(ds.x.copy(), ds.y.copy(), ds.split.copy(), ds.load_buses, None, dict(ds.meta), ds.y_diag)
    out.meta["noise"] = asdict(spec)
    if spec.level == 0:
        out.psi = ds.psi
        return out
    rng = np.random.default_rng([spec.seed, 3])
    train = ds.rows("train")
    frac = spec.level / 0.10
    shape = (len(train), ds.x.shape[1])
    ux = rng.uniform(0.0, spec.x_range_at_max * frac, shape) * rng.choice([-1.0, 1.0], shape)
    uy = rng.uniform(0.0, spec.y_range_at_max * frac, shape) * rng.choice([-1.0, 1.0], shape)
    out.x[train] += ux
    out.y[train] += uy
    return out


# ----------------------------------------------------------------- file I/O


def _columns(load_buses) -> list[str]:
    cols = []
    for prefix in ("p_d", "q_d", "mu", "omega"):
        cols += [f"{prefix}_{i}" for i in load_buses]
    return cols


def dataset_hash(ds: Dataset) -> str:
    h = hashlib.sha256()
    for arr in (ds.x, ds.y, ds.split.astype(np.int8), np.asarray(ds.load_buses, dtype=np.int64)):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def save_dataset(ds: Dataset, path, extra: dict | None = None) -> Path:
    """Write ``<path>`` (CSV) and ``<path stem>.json`` (splits, seeds, stats)."""
    path = Path(path)
    header = ",".join(_columns(ds.load_buses))
    np.savetxt(path, np.hstack([ds.x, ds.y]), delimiter=",", header=header, comments="", fmt="%.17g")
    mean, std = ds.input_stats()
    side = {
        "format": "gridsurrogate-dataset/1",
        "load_buses": [int(i) for i in ds.load_buses],
        "splits": {name: ds.rows(name).tolist() for name in SPLIT_CODES},
        "normalization": {"x_mean": mean.tolist(), "x_std": std.tolist()},
        "csv_sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
        "dataset_hash": dataset_hash(ds),
        "meta": ds.meta,
    }
    if extra:
        side.update(extra)
    sc = sidecar_path(path)
    sc.write_text(json.dumps(side, indent=1) + "\n")
    return sc


def load_dataset(path) -> Dataset:
    path = Path(path)
    side = json.loads(sidecar_path(path).read_text())
    header = path.open().readline().strip().split(",")
    load_buses = np.array(side["load_buses"], dtype=int)
    if header != _columns(load_buses):
        raise ValueError(f"{path}: CSV header does not match the sidecar load buses")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = len(load_buses)
    split = np.full(data.shape[0], -1, dtype=np.int8)
    for name, code in SPLIT_CODES.items():
        split[side["splits"][name]] = code
    if np.any(split < 0):
        raise ValueError(f"{path}: sidecar splits do not cover every row")
    return Dataset(data[:, : 2 * n], data[:, 2 * n :], split, load_buses, None, side.get("meta", {}))
