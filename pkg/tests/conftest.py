from __future__ import annotations

import time

import numpy as np
import pytest

from gridsurrogate.grid import Bus, BusKind, Line, Network, bundled_feeder
from gridsurrogate.powerflow import LoadVector


def make_two_bus(r: float = 0.0, x: float = 0.1, b_sh: float = 0.0) -> Network:
    buses = (Bus(0, BusKind.REFERENCE, 11.0), Bus(1, BusKind.LOAD, 11.0))
    return Network(buses, (Line(0, 1, r, x, b_sh),))


def make_meshed(n: int = 5, seed: int = 0, b_sh: float = 0.0) -> Network:
    """Ring plus a chord, so Y has loops and the solvers see a meshed case."""
    rng = np.random.default_rng(seed)
    buses = [Bus(0, BusKind.REFERENCE, 11.0)] + [Bus(k, BusKind.LOAD, 11.0) for k in range(1, n)]
    pairs = [(k, k + 1) for k in range(n - 1)] + [(n - 1, 0), (0, n // 2)]
    lines = [Line(a, b, rng.uniform(0.005, 0.03), rng.uniform(0.01, 0.06), b_sh) for a, b in pairs]
    return Network(tuple(buses), tuple(lines))


def random_loads(n_load: int, rng: np.random.Generator, scale: float = 0.01) -> LoadVector:
    s = rng.uniform(0.2, 1.0, n_load) * scale
    pf = rng.uniform(0.85, 1.0, n_load)
    p = s * pf
    return LoadVector(p, np.sqrt(s * s - p * p))


@pytest.fixture
def two_bus():
    return make_two_bus()


@pytest.fixture(scope="session")
def feeder15():
    return bundled_feeder(15)


@pytest.fixture(scope="session")
def system15():
    from gridsurrogate.presets import prepare_system

    return prepare_system(15)


class ModelBank:
    """Datasets and fully trained 15-bus models, built on first use and shared
    by every test in the session (training at the shipped presets is slow)."""

    n_bus = 15

    def __init__(self):
        self._systems = {}
        self._fits = {}
        self.seconds = {}

    def system(self, noise: float = 0.0, counts=None):
        from gridsurrogate.presets import prepare_system

        key = (noise, counts)
        if key not in self._systems:
            self._systems[key] = prepare_system(self.n_bus, seed=0, noise=noise, counts=counts)
        return self._systems[key]

    def fit(self, kind: str, noise: float = 0.0, counts=None, n_train=None):
        from gridsurrogate.presets import fit_model

        key = (kind, noise, counts, n_train)
        if key not in self._fits:
            ds = self.system(noise, counts).dataset
            if n_train is not None:
                ds = ds.limit_training(n_train)
            start = time.perf_counter()
            self._fits[key] = (fit_model(kind, ds, seed=0), ds)
            self.seconds[key] = time.perf_counter() - start
        return self._fits[key]

    def test_mse(self, kind: str, quantity: str = "v", **kw) -> float:
        from gridsurrogate.evaluation import evaluate

        result, ds = self.fit(kind, **kw)
        return evaluate(result.model, ds, self.system(kw.get("noise", 0.0), kw.get("counts")).net, kind).mse(quantity)


@pytest.fixture(scope="session")
def bank():
    return ModelBank()


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
