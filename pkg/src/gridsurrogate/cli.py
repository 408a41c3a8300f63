"""Command-line pipelines: grid, dataset, train, eval, sweep, ablation.

Exit codes: 0 success, 2 invalid input file or arguments, 3 too many solver
failures while generating a dataset, 4 training diverged. Outputs default to
``$GRIDSURROGATE_OUT`` (or ``./runs``) unless ``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, RunManifest, load_checkpoint, save_checkpoint
from .evaluation import SweepSpec, evaluate, run_sweep, stress_eval
from .grid import (
    BUNDLED_SIZES,
    GridFileError,
    NetworkValidationError,
    connected_components,
    load_network,
    make_synthetic_feeder,
    network_hash,
    save_network,
)
from .pinn4pf import TrainingDivergedError, attach_physics, train, write_history_csv
from .presets import ABLATION_KINDS, PRESETS, build_model, config_hash, model_config, prepare_system
from .scenarios import (
    DEFAULT_POINTS,
    DatasetGenerationError,
    NoiseSpec,
    SamplingSpec,
    build_dataset,
    dataset_hash,
    inject_noise,
    load_dataset,
    nominal_sampling_spec,
    sample_scenarios,
    save_dataset,
    sidecar_path,
)

log = logging.getLogger("gridsurrogate")

OUT_ENV = "GRIDSURROGATE_OUT"
EXIT_OK, EXIT_INPUT, EXIT_DATASET, EXIT_DIVERGED = 0, 2, 3, 4
# above this many parameters checkpoints are written as .npz instead of JSON
BINARY_CHECKPOINT_PARAMS = 1_000_000


class UsageError(ValueError):
    pass


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _outdir(arg, name: str) -> Path:
    out = Path(arg) if arg else default_out() / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(argv) -> RunManifest:
    return RunManifest(command=["gridsurrogate", *argv])


# ---------------------------------------------------------------- grid


def cmd_grid(args, argv) -> int:
    if args.action == "make":
        net = make_synthetic_feeder(args.buses, args.seed)
        out = Path(args.out) if args.out else _outdir(None, "grids") / f"feeder_{args.buses}_s{args.seed}.json"
        save_network(net, out)
        print(f"wrote {out} ({net.n_total} buses, {len(net.lines)} lines, hash {network_hash(net)[:12]})")
        return EXIT_OK
    net = load_network(args.file)
    if args.action == "validate":
        print(f"{args.file}: ok ({net.n_total} buses, {len(net.lines)} lines)")
        return EXIT_OK
    comps = connected_components(net.n_total, net.lines)
    print(f"buses: {net.n_total} (1 reference, {net.n_load} load)")
    print(f"lines: {len(net.lines)}")
    print(f"connected: {'yes' if len(comps) == 1 else 'no'} ({len(comps)} component(s))")
    print(f"radial: {'yes' if len(net.lines) == net.n_total - 1 else 'no'}")
    print(f"base_mva: {net.base_mva}")
    print(f"hash: {network_hash(net)}")
    return EXIT_OK


# ---------------------------------------------------------------- dataset


def cmd_dataset(args, argv) -> int:
    man = _manifest(argv)
    net = load_network(args.grid)
    man.add_input(args.grid)
    points = args.points or DEFAULT_POINTS.get(net.n_total, 512)
    spec = nominal_sampling_spec(net, seed=args.seed)
    pool = sample_scenarios(spec)
    ds = build_dataset(net, pool, points, args.seed, jobs=args.jobs)
    ds.meta["sampling"] = spec.to_dict()
    if args.noise:
        ds = inject_noise(ds, NoiseSpec(level=args.noise, seed=args.seed))
    out = Path(args.out) if args.out else _outdir(None, "datasets") / f"dataset_{net.n_total}_s{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    side = save_dataset(ds, out, extra={"grid_path": str(Path(args.grid).resolve())})
    man.seeds = [args.seed]
    man.grid_hash = network_hash(net)
    man.dataset_hash = dataset_hash(ds)
    man.add_output(out)
    man.add_output(side)
    man.finish()
    man.write(out.with_suffix(".manifest.json"))
    n_train, n_val, n_test = ds.split_sizes()
    print(f"wrote {out}: {len(ds)} rows ({n_train}/{n_val}/{n_test}), noise {args.noise}, NR failures {ds.meta['nr_failures']}")
    return EXIT_OK


def _dataset_and_grid(args):
    """Resolve the dataset (file or preset) and its grid."""
    if args.dataset:
        ds = load_dataset(args.dataset)
        side = json.loads(sidecar_path(args.dataset).read_text())
        grid = args.grid or side.get("grid_path")
        if not grid:
            raise UsageError("the dataset sidecar names no grid; pass --grid")
        net = load_network(grid)
        if ds.meta.get("grid_hash") not in (None, network_hash(net)):
            raise UsageError(f"grid {grid} does not match the dataset's grid hash")
        sampling = SamplingSpec.from_dict(ds.meta["sampling"]) if "sampling" in ds.meta else None
        return net, ds, sampling, [args.dataset, grid]
    sysm = prepare_system(PRESETS[args.preset]["n_bus"], seed=args.seed, jobs=args.jobs)
    return sysm.net, sysm.dataset, sysm.sampling, []


# ---------------------------------------------------------------- train/eval


def cmd_train(args, argv) -> int:
    man = _manifest(argv)
    net, ds, sampling, inputs = _dataset_and_grid(args)
    for p in inputs:
        man.add_input(p)
    overrides = {}
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        man.add_input(args.config)
    cfg = model_config(args.model, args.epochs, args.seed, **overrides)
    attach_physics(ds, net)
    out = _outdir(args.out, f"train_{args.model}_{net.n_total}bus_s{args.seed}")
    man.seeds = [args.seed]
    man.config_hash = config_hash(cfg)
    man.grid_hash = network_hash(net)
    man.dataset_hash = dataset_hash(ds)
    model = build_model(args.model, ds.n_load, cfg)
    try:
        result = train(model, ds, cfg, verbose=args.log_every)
    except TrainingDivergedError as exc:
        if exc.history:
            write_history_csv(exc.history, out / "history.csv")
            man.add_output(out / "history.csv")
        man.finish("diverged")
        man.extra["error"] = str(exc)
        man.write(out / "manifest.json")
        raise
    binary = args.binary or result.model.params.size > BINARY_CHECKPOINT_PARAMS
    ck = save_checkpoint(
        out / ("checkpoint.npz" if binary else "checkpoint.json"),
        result.model,
        args.model,
        cfg,
        result.optimizer,
        args.seed,
        {"best_epoch": result.best_epoch, "best_val": result.best_val, "dataset_hash": man.dataset_hash, "grid_hash": man.grid_hash},
    )
    write_history_csv(result.history, out / "history.csv")
    cfg.to_json(out / "config.json")
    rep = evaluate(result.model, ds, net, args.model, meta={"seed": args.seed, "config_hash": man.config_hash})
    paths = [ck, out / "history.csv", out / "config.json", *rep.write(out / "report")]
    for p in paths:
        man.add_output(p)
    man.extra.update({"best_epoch": result.best_epoch, "skipped_rows": result.skipped_rows})
    man.finish()
    man.write(out / "manifest.json")
    print(f"{args.model}: best epoch {result.best_epoch}, val MSE {result.best_val:.3e}")
    print(f"test MSE v {rep.mse('v'):.3e}  delta {rep.mse('delta'):.3e}  i {rep.mse('i'):.3e}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    man = _manifest(argv)
    model, doc = load_checkpoint(args.checkpoint)
    man.add_input(args.checkpoint)
    net, ds, sampling, inputs = _dataset_and_grid(args)
    for p in inputs:
        man.add_input(p)
    out = _outdir(args.out, "eval")
    name = doc.get("kind", "model")
    if args.stress:
        if sampling is None:
            raise UsageError("stress evaluation needs the dataset's sampling spec")
        rep = stress_eval(model, net, sampling, args.stress, seed=args.seed, name=name)
    else:
        rep = evaluate(model, ds, net, name, split=args.split, meta={"checkpoint_seed": doc.get("seed")})
    for p in rep.write(out / "report"):
        man.add_output(p)
    man.dataset_hash = rep.meta.get("dataset_hash")
    man.grid_hash = rep.meta.get("grid_hash")
    man.finish()
    man.write(out / "manifest.json")
    for row in rep.rows():
        print(f"{row['quantity']:>5}  mse {row['mse']:.6e}  max {row['max_bus']:.6e}  std(rows) {row['std_rows']:.3e}")
    return EXIT_OK


# ---------------------------------------------------------------- sweeps


AXIS_NAMES = {"noise": "noise", "size": "train_size", "scale": "stress", "system": "system_size"}
AXIS_DEFAULTS = {
    "noise": [0.0, 0.025, 0.05, 0.075, 0.10],
    "train_size": [256, 512, 1024],
    "stress": [1.0, 1.5],
    "system_size": [4, 15],
}


def _run_and_write(spec: SweepSpec, args, argv, name: str) -> int:
    man = _manifest(argv)
    man.seeds = list(spec.seeds)
    res = run_sweep(spec, jobs=args.jobs)
    out = _outdir(args.out, name)
    for p in res.write(out):
        man.add_output(p)
    man.extra["failures"] = len(res.failures)
    man.finish("ok" if not res.failures else "partial")
    man.write(out / "manifest.json")
    for cell, rep in res.reports:
        print(f"{cell['model']:>20} {str(cell['value']):>8} seed {cell['seed']}: MSE v {rep.mse('v'):.3e}  i {rep.mse('i'):.3e}")
    for row in res.normalized("v"):
        print(f"normalized v  {row['model']:>10} {row['value']}: {row['normalized']:.3f}")
    for cell, err in res.failures:
        print(f"FAILED {cell}: {err}", file=sys.stderr)
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    axis = AXIS_NAMES[args.axis]
    values = args.values or AXIS_DEFAULTS[axis]
    if axis == "train_size":
        values = [int(v) for v in values]
    if axis == "system_size":
        values = [int(v) for v in values]
        bad = [v for v in values if v not in BUNDLED_SIZES]
        if bad:
            raise UsageError(f"no bundled feeder of size {bad}; choose from {BUNDLED_SIZES}")
    spec = SweepSpec(axis, values, args.seeds, args.models, PRESETS[args.preset]["n_bus"], epochs=args.epochs)
    return _run_and_write(spec, args, argv, f"sweep_{axis}")


def cmd_ablation(args, argv) -> int:
    spec = SweepSpec("ablation", list(ABLATION_KINDS), args.seeds, n_bus=PRESETS[args.preset]["n_bus"], epochs=args.epochs)
    return _run_and_write(spec, args, argv, "ablation")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridsurrogate", description="Power-flow surrogates: data, training, evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("grid", help="make, validate or describe a grid file")
    gs = g.add_subparsers(dest="action", required=True)
    mk = gs.add_parser("make", help="write a synthetic radial feeder")
    mk.add_argument("--buses", type=int, required=True)
    mk.add_argument("--seed", type=int, default=0)
    mk.add_argument("--out")
    for action in ("validate", "info"):
        a = gs.add_parser(action)
        a.add_argument("file")

    d = sub.add_parser("dataset", help="generate a solved scenario dataset")
    ds = d.add_subparsers(dest="action", required=True)
    gen = ds.add_parser("generate")
    gen.add_argument("--grid", required=True)
    gen.add_argument("--points", type=int, help="default: 256/512/1024/2048 by system size")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--noise", type=float, default=0.0, help="training-split noise level in [0, 0.10]")
    gen.add_argument("--out")
    gen.add_argument("--jobs", type=int, default=1)

    def data_args(a):
        src = a.add_mutually_exclusive_group()
        src.add_argument("--preset", choices=sorted(PRESETS), default="paper-15bus")
        src.add_argument("--dataset")
        a.add_argument("--grid", help="grid file (default: the one recorded with the dataset)")
        a.add_argument("--seed", type=int, default=0)
        a.add_argument("--jobs", type=int, default=1)
        a.add_argument("--out")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("model", choices=["pinn4pf", "mlp", "lr", *ABLATION_KINDS])
    data_args(t)
    t.add_argument("--config", help="JSON file of config field overrides")
    t.add_argument("--epochs", type=int)
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--binary", action="store_true", help="write checkpoint.npz (automatic for large models)")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    data_args(e)
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--stress", type=float, help="evaluate on fresh scenarios with loads scaled by this factor")

    def sweep_args(a):
        a.add_argument("--preset", choices=sorted(PRESETS), default="paper-15bus")
        a.add_argument("--seeds", type=int, nargs="+", default=[0])
        a.add_argument("--epochs", type=int)
        a.add_argument("--jobs", type=int, default=1)
        a.add_argument("--out")

    s = sub.add_parser("sweep", help="noise, training-size, load-scale or system-size sweep")
    s.add_argument("--axis", choices=sorted(AXIS_NAMES), required=True)
    s.add_argument("--values", type=float, nargs="+")
    s.add_argument("--models", nargs="+", default=["pinn4pf", "mlp"])
    sweep_args(s)

    ab = sub.add_parser("ablation", help="train the four double-head variants")
    sweep_args(ab)
    return p


COMMANDS = {"grid": cmd_grid, "dataset": cmd_dataset, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "ablation": cmd_ablation}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except (GridFileError, NetworkValidationError) as exc:
        where = getattr(exc, "where", None) or getattr(exc, "buses", None)
        print(f"error: {exc}" + (f" [at {where}]" if where and str(where) not in str(exc) else ""), file=sys.stderr)
        return EXIT_INPUT
    except DatasetGenerationError as exc:
        print(f"error: dataset generation failed: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CheckpointError, UsageError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
