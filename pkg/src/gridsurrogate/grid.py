"""Bus/line network model, grid files and the bus admittance matrix."""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "BusKind",
    "Bus",
    "Line",
    "Network",
    "GridFileError",
    "NetworkValidationError",
    "validate_network",
    "build_admittance",
    "load_network",
    "save_network",
    "network_to_dict",
    "network_from_dict",
    "network_hash",
    "make_synthetic_feeder",
    "bundled_feeder",
    "BUNDLED_SIZES",
]

# per-unit ranges for synthetic feeder lines
R_RANGE = (0.001, 0.05)
X_RANGE = (0.002, 0.1)

BUNDLED_SIZES = (4, 15, 290, 2224)
BUNDLED_SEEDS = {4: 7, 15: 3, 290: 11, 2224: 1}


class BusKind(str, Enum):
    REFERENCE = "reference"
    LOAD = "load"


class GridFileError(ValueError):
    """Grid file does not follow the schema. ``where`` names the line or field."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class NetworkValidationError(ValueError):
    """Network violates a structural invariant."""

    def __init__(self, message: str, buses: frozenset[int] | None = None):
        self.buses = buses or frozenset()
        super().__init__(message)


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    base_kv: float


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_sh: float = 0.0

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Network:
    """Immutable bus/line model. Construction validates all invariants."""

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    base_mva: float = 1.0
    _load_idx: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(sorted(self.buses, key=lambda b: b.id)))
        object.__setattr__(self, "lines", tuple(self.lines))
        validate_network(self)
        idx = np.array([b.id for b in self.buses if b.kind is BusKind.LOAD], dtype=int)
        idx.setflags(write=False)
        object.__setattr__(self, "_load_idx", idx)

    @property
    def n_total(self) -> int:
        return len(self.buses)

    @property
    def n_load(self) -> int:
        return self.n_total - 1

    @property
    def load_buses(self) -> np.ndarray:
        return self._load_idx

    @property
    def reference_bus(self) -> int:
        return 0

    def line_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(from, to, series admittance, shunt susceptance) as arrays."""
        f = np.array([ln.from_bus for ln in self.lines], dtype=int)
        t = np.array([ln.to_bus for ln in self.lines], dtype=int)
        z = np.array([complex(ln.r, ln.x) for ln in self.lines])
        bsh = np.array([ln.b_sh for ln in self.lines], dtype=float)
        return f, t, 1.0 / z, bsh

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return (self.buses, self.lines, self.base_mva) == (other.buses, other.lines, other.base_mva)

    def __hash__(self):
        return hash((self.buses, self.lines, self.base_mva))


def connected_components(n: int, lines) -> list[set[int]]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for ln in lines:
        adj[ln.from_bus].append(ln.to_bus)
        adj[ln.to_bus].append(ln.from_bus)
    seen = [False] * n
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp = {start}
        seen[start] = True
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.add(v)
                    queue.append(v)
        comps.append(comp)
    return comps


def validate_network(net: Network) -> None:
    """Raise :class:`NetworkValidationError` if any invariant fails."""
    if not net.base_mva > 0:
        raise NetworkValidationError(f"base_mva must be positive, got {net.base_mva}")
    n = len(net.buses)
    if n < 2:
        raise NetworkValidationError("a network needs at least two buses")
    ids = [b.id for b in net.buses]
    if sorted(ids) != list(range(n)):
        raise NetworkValidationError(f"bus ids must be contiguous 0..{n - 1}")
    refs = [b.id for b in net.buses if b.kind is BusKind.REFERENCE]
    if len(refs) != 1:
        raise NetworkValidationError(
            f"exactly one reference bus required, found {len(refs)}", frozenset(refs)
        )
    if refs[0] != 0:
        raise NetworkValidationError("the reference bus must have id 0", frozenset(refs))
    for b in net.buses:
        if not b.base_kv > 0:
            raise NetworkValidationError(f"bus {b.id}: base_kv must be positive", frozenset({b.id}))

    pairs = set()
    for k, ln in enumerate(net.lines):
        if not (0 <= ln.from_bus < n and 0 <= ln.to_bus < n):
            raise NetworkValidationError(f"line {k}: unknown bus id")
        if ln.from_bus == ln.to_bus:
            raise NetworkValidationError(f"line {k}: from and to are the same bus")
        if ln.r < 0:
            raise NetworkValidationError(f"line {k}: negative resistance")
        if ln.r == 0 and ln.x == 0:
            raise NetworkValidationError(
                f"line {k}: zero impedance", frozenset({ln.from_bus, ln.to_bus})
            )
        if not all(np.isfinite([ln.r, ln.x, ln.b_sh])):
            raise NetworkValidationError(f"line {k}: non-finite parameters")
        key = frozenset((ln.from_bus, ln.to_bus))
        if key in pairs:
            raise NetworkValidationError(f"line {k}: duplicate line {ln.from_bus}-{ln.to_bus}")
        pairs.add(key)

    comps = connected_components(n, net.lines)
    if len(comps) > 1:
        cut = frozenset().union(*(c for c in comps if 0 not in c))
        raise NetworkValidationError(
            f"network is disconnected; {len(cut)} bus(es) unreachable from the reference bus",
            cut,
        )


def build_admittance(net: Network) -> sp.csr_matrix:
    """Bus admittance matrix Y (complex, CSR).

    Off-diagonal ``Y[i, j] = -y_ij`` for every line, diagonal
    ``Y[i, i] = sum(y_ij) + j * sum(b_sh / 2)`` over the adjacent lines.
    """
    validate_network(net)
    n = net.n_total
    f, t, y, bsh = net.line_arrays()
    half = 0.5j * bsh
    rows = np.concatenate([f, t, f, t])
    cols = np.concatenate([t, f, f, t])
    vals = np.concatenate([-y, -y, y + half, y + half])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n), dtype=complex)


# ---------------------------------------------------------------- grid files


def network_to_dict(net: Network) -> dict:
    return {
        "base_mva": net.base_mva,
        "buses": [{"id": b.id, "kind": b.kind.value, "base_kv": b.base_kv} for b in net.buses],
        "lines": [
            {"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x, "b_sh": ln.b_sh}
            for ln in net.lines
        ],
    }


def _field(obj: dict, key: str, where: str, kind):
    if not isinstance(obj, dict):
        raise GridFileError("expected an object", where)
    if key not in obj:
        raise GridFileError(f"missing field '{key}'", where)
    val = obj[key]
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise GridFileError(f"expected integer, got {val!r}", f"{where}.{key}")
    elif kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise GridFileError(f"expected number, got {val!r}", f"{where}.{key}")
        val = float(val)
    elif kind is str and not isinstance(val, str):
        raise GridFileError(f"expected string, got {val!r}", f"{where}.{key}")
    return val


def network_from_dict(data: dict) -> Network:
    """Parse the grid schema. Schema problems raise :class:`GridFileError`,
    invariant problems :class:`NetworkValidationError`."""
    if not isinstance(data, dict):
        raise GridFileError("top level must be an object", "$")
    base_mva = _field(data, "base_mva", "$", float)
    for key in ("buses", "lines"):
        if key not in data:
            raise GridFileError(f"missing field '{key}'", "$")
        if not isinstance(data[key], list):
            raise GridFileError("expected an array", f"$.{key}")
    buses = []
    for i, raw in enumerate(data["buses"]):
        where = f"$.buses[{i}]"
        kind = _field(raw, "kind", where, str).lower()
        try:
            kind = BusKind(kind)
        except ValueError:
            raise GridFileError(f"unknown bus kind {kind!r}", f"{where}.kind") from None
        buses.append(Bus(_field(raw, "id", where, int), kind, _field(raw, "base_kv", where, float)))
    lines = []
    for i, raw in enumerate(data["lines"]):
        where = f"$.lines[{i}]"
        lines.append(
            Line(
                _field(raw, "from", where, int),
                _field(raw, "to", where, int),
                _field(raw, "r", where, float),
                _field(raw, "x", where, float),
                _field(raw, "b_sh", where, float),
            )
        )
    return Network(tuple(buses), tuple(lines), base_mva)


def load_network(path) -> Network:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridFileError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return network_from_dict(data)


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def network_hash(net: Network) -> str:
    blob = json.dumps(network_to_dict(net), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------- synthetic feeders


def make_synthetic_feeder(n_total: int, seed: int, base_kv: float = 11.0) -> Network:
    """Deterministic radial feeder with ``n_total`` buses rooted at bus 0.

    Each new bus either extends the previous one (long laterals) or taps an
    earlier bus chosen uniformly, so the tree has both depth and branching.
    """
    if n_total < 2:
        raise ValueError(f"n_total must be >= 2, got {n_total}")
    rng = np.random.default_rng([n_total, seed])
    buses = [Bus(0, BusKind.REFERENCE, base_kv)]
    buses += [Bus(k, BusKind.LOAD, base_kv) for k in range(1, n_total)]
    lines = []
    for k in range(1, n_total):
        parent = k - 1 if rng.random() < 0.6 else int(rng.integers(0, k))
        r = float(np.round(rng.uniform(*R_RANGE), 6))
        x = float(np.round(rng.uniform(*X_RANGE), 6))
        lines.append(Line(parent, k, r, x, 0.0))
    return Network(tuple(buses), tuple(lines), base_mva=1.0)


def bundled_feeder(n_total: int) -> Network:
    """One of the shipped synthetic feeders (4, 15, 290 or 2224 buses)."""
    if n_total not in BUNDLED_SIZES:
        raise ValueError(f"no bundled feeder with {n_total} buses; choose from {BUNDLED_SIZES}")
    path = resources.files("gridsurrogate") / "data" / f"feeder_{n_total}.json"
    with resources.as_file(path) as p:
        return load_network(p)


def bundled_feeder_path(n_total: int) -> Path:
    return Path(str(resources.files("gridsurrogate") / "data" / f"feeder_{n_total}.json"))
