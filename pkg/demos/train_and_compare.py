"""Train the double-head network and both baselines on the 15-bus feeder and
print the test-set table. EPOCHS is kept short for a quick look; the shipped
presets use 5000."""
import os
import time

from gridsurrogate.evaluation import evaluate
from gridsurrogate.presets import fit_model, prepare_system

EPOCHS = int(os.environ.get("DEMO_EPOCHS", 300))

sysm = prepare_system(15)
ds = sysm.dataset
print("split sizes (train/val/test):", ds.split_sizes())

rows = []
for kind in ("pinn4pf", "mlp", "lr"):
    t0 = time.perf_counter()
    res = fit_model(kind, ds, epochs=EPOCHS)
    rep = evaluate(res.model, ds, sysm.net, kind)
    rows.append((kind, rep, time.perf_counter() - t0, res.best_epoch))

print(f"{'model':>8} {'MSE v':>10} {'MSE delta':>10} {'MSE i':>10} {'best ep':>8} {'sec':>6}")
for kind, rep, secs, best in rows:
    print(f"{kind:>8} {rep.mse('v'):10.3e} {rep.mse('delta'):10.3e} {rep.mse('i'):10.3e} {best:8d} {secs:6.1f}")

pinn = rows[0][1]
print(f"dataset hash {pinn.meta['dataset_hash'][:12]}, {pinn.meta['n_rows']} test rows")
