"""A small version of the robustness experiment: corrupt the training rows with
increasing noise and compare how the two networks degrade."""
import os

from gridsurrogate.evaluation import SweepSpec, run_sweep

spec = SweepSpec("noise", [0.0, 0.05, 0.10], models=["pinn4pf", "mlp"], n_bus=15, epochs=int(os.environ.get("DEMO_EPOCHS", 200)))
res = run_sweep(spec)

for m in spec.models:
    curve = [res.mean(m, v) for v in spec.values]
    print(m, " ".join(f"{v:.0%}: {c:.2e}" for v, c in zip(spec.values, curve)))

# every curve is normalized to the double-head model at 10% noise
for row in res.normalized("v"):
    print(f"{row['model']:>8} {row['value']:.2f} -> {row['normalized']:.2f}")
if res.failures:
    print("failed cells:", res.failures)
