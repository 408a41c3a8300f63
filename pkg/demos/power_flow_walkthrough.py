"""Solve one load scenario on the bundled 15-bus feeder two ways and look at the lines."""
import numpy as np

from gridsurrogate.grid import build_admittance, bundled_feeder
from gridsurrogate.powerflow import LoadVector, line_flows, solve_gauss_seidel, solve_newton_raphson
from gridsurrogate.scenarios import nominal_sampling_spec, sample_scenarios

net = bundled_feeder(15)
Y = build_admittance(net)
print(f"{net.n_total} buses, {len(net.lines)} lines, Y has {Y.nnz} nonzeros")

# nominal loads are scaled so the weakest bus sits at 0.95 p.u.
spec = nominal_sampling_spec(net, seed=0)
pool = sample_scenarios(spec)
loads = LoadVector(pool.p_d[0], pool.q_d[0])

nr = solve_newton_raphson(net, loads, Y=Y)
gs = solve_gauss_seidel(net, loads, Y=Y)
print(f"Newton-Raphson: {nr.iterations} iterations, mismatch {nr.max_mismatch:.1e}")
print(f"Gauss-Seidel:   {gs.iterations} sweeps, largest disagreement {np.abs(nr.state.phasor - gs.state.phasor).max():.1e}")

v = nr.state.v
print("voltage magnitudes:", np.round(v, 4))
print(f"weakest bus {int(np.argmin(v))} at {v.min():.4f} p.u.")

fl = line_flows(net, Y, nr.state)
print(f"feeder head supplies {nr.ref_injection.real:.4f} + j{nr.ref_injection.imag:.4f} p.u.")
print(f"total load {loads.p_d.sum():.4f} p.u., losses {fl.losses.sum():.2e} p.u.")
worst = int(np.argmax(fl.current))
ln = net.lines[worst]
print(f"most loaded line {ln.from_bus}->{ln.to_bus}: |I| = {fl.current[worst]:.4f} p.u.")
