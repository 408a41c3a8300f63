"""Versioned JSON checkpoints and run manifests."""

from __future__ import annotations

import hashlib
import json
import platform
import sys
import time
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .nn import AdamState, HeadedNetwork

__all__ = [
    "CHECKPOINT_FORMAT",
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "LookupModel",
    "save_checkpoint",
    "load_checkpoint",
    "file_hash",
    "RunManifest",
]

CHECKPOINT_FORMAT = "gridsurrogate-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class LookupModel:
    """Answers with the stored label of each known input row.

    Useful as a perfect predictor for checking the evaluation path.
    """

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self._index = {row.tobytes(): k for k, row in enumerate(self.x)}

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        try:
            rows = [self._index[r.tobytes()] for r in x]
        except KeyError:
            raise KeyError("input row not present in the lookup table") from None
        return self.y[rows]

    def to_dict(self) -> dict:
        return {"x": self.x.tolist(), "y": self.y.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "LookupModel":
        return cls(d["x"], d["y"])


def save_checkpoint(path, model, kind: str, config=None, optimizer: AdamState | None = None, seed: int = 0, extra: dict | None = None) -> Path:
    """Write layer shapes, parameters (W, b, alpha), input normalization,
    optimizer state and seed.

    A ``.npz`` path stores the arrays in binary (one JSON header entry plus
    one array per parameter); anything else is written as a single JSON
    document.
    """
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "seed": seed,
        "config": asdict(config) if config is not None else None,
        "meta": extra or {},
    }
    path = Path(path)
    if path.suffix == ".npz":
        if not isinstance(model, HeadedNetwork):
            raise CheckpointError("binary checkpoints hold trained networks only")
        doc["model"] = {"architecture": model.architecture()}
        doc["optimizer"] = None if optimizer is None else {k: v for k, v in optimizer.to_dict().items() if k not in ("m", "v")}
        arrays = {f"param:{n}": np.asarray(model.params[n]) for n in model.params.names}
        arrays["x_mean"], arrays["x_std"] = model.x_mean, model.x_std
        if optimizer is not None:
            arrays["adam:m"], arrays["adam:v"] = optimizer.m, optimizer.v
        with open(path, "wb") as fh:
            np.savez(fh, header=np.array(json.dumps(doc)), **arrays)
        return path
    doc["model"] = model.to_dict()
    doc["optimizer"] = optimizer.to_dict() if optimizer is not None else None
    path.write_text(json.dumps(doc) + "\n")
    return path


def _load_npz(path) -> tuple[HeadedNetwork, dict]:
    with np.load(path, allow_pickle=False) as z:
        doc = json.loads(str(z["header"]))
        _check_header(doc, path)
        model = HeadedNetwork(**doc["model"]["architecture"])
        model.set_input_stats(z["x_mean"], z["x_std"])
        for n in model.params.names:
            key = f"param:{n}"
            if key not in z.files or z[key].shape != model.params.shape_of(n):
                raise CheckpointError(f"{path}: missing or misshapen parameter {n}")
            model.params[n][...] = z[key]
        if doc.get("optimizer") is not None:
            doc["optimizer"] = {**doc["optimizer"], "m": z["adam:m"].tolist(), "v": z["adam:v"].tolist()}
    return model, doc


def _check_header(doc: dict, path) -> None:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc.get('version')}")


def load_checkpoint(path) -> tuple[object, dict]:
    """Returns (model, document). The model is a :class:`HeadedNetwork`, or a
    :class:`LookupModel` for ``kind == "lookup"``."""
    path = Path(path)
    if path.suffix == ".npz":
        try:
            return _load_npz(path)
        except (OSError, KeyError, ValueError, zipfile.BadZipFile) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"{path}: unreadable binary checkpoint ({exc})") from None
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON (line {exc.lineno} column {exc.colno})") from None
    _check_header(doc, path)
    try:
        if doc["kind"] == "lookup":
            model = LookupModel.from_dict(doc["model"])
        else:
            model = HeadedNetwork.from_dict(doc["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed model section ({exc})") from None
    return model, doc


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """What ran, with which inputs, producing which files (all content-hashed)."""

    command: list[str]
    seeds: list[int] = field(default_factory=list)
    config_hash: str | None = None
    grid_hash: str | None = None
    dataset_hash: str | None = None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__
    started: float = field(default_factory=time.time)
    finished: float | None = None
    status: str = "running"
    extra: dict = field(default_factory=dict)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_hash(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = file_hash(path)

    def finish(self, status: str = "ok") -> None:
        self.finished = time.time()
        self.status = status

    def to_dict(self) -> dict:
        d = asdict(self)
        d["python"] = sys.version.split()[0]
        d["platform"] = platform.platform()
        return d

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, default=str) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        for k in ("python", "platform"):
            d.pop(k, None)
        return cls(**d)
