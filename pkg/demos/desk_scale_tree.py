"""
Grow an arterial tree inside a synthetic kidney-shaped organ, end to end,
through the library API.

    python3 demos/desk_scale_tree.py [n_terminals] [out_dir]

The run takes well under a minute at 500 terminals. Everything is seeded, so
repeated runs print the same numbers.
"""

import sys
import time
from pathlib import Path

from arteriogen import analysis, centerline, domain, gco, sampling
from arteriogen.tree import HemoConfig, save_tree, validate, write_vtk, compute_pressures

n_terminals = int(sys.argv[1]) if len(sys.argv) > 1 else 500
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(exist_ok=True)
t0 = time.perf_counter()

# The organ: a bean-shaped ellipsoid with a carved hilum, 9.6 mm across.
ph = domain.generate_phantom((96, 96, 96), 100.0, seed=1)
print(f"organ: {ph.mask.count()} voxels, inlet at {ph.root_position.round(0)} um")

# Terminals live in the outer shell, away from the hilum where the large vessels enter.
cortex = domain.extract_cortex(ph.mask, domain.CortexParams(1500.0, 2500.0, ph.root_position))
terms, res = sampling.sample_terminals(
    cortex, sampling.SamplingConfig(n_terminals=n_terminals, r_min_scale=0.8, seed=3))
print(f"cortex: {cortex.count()} voxels; {len(terms)} terminals at r_min = {res.r_min:.0f} um")

# A coarse large-artery skeleton plays the part of a segmented centerline.
# It arrives with loops and a stray fragment, which preprocessing removes.
graph, root_id = centerline.synthetic_centerline(ph.mask, ph.root_position, generations=3, seed=2)
prebuilt = centerline.preprocess(graph, root_id, max_depth=1e9)
print(f"centerline: {len(graph.pos)} nodes -> prebuilt tree with {len(prebuilt.leaves())} ending nodes")

# Every terminal draws the same share of the inlet flow.
hemo = HemoConfig(inlet_flow_Q0=3.89e6 * len(terms))
tree, trace = gco.run(prebuilt, terms, gco.GcoConfig(max_iterations=4), hemo)
c0, c1 = trace.costs()[0], trace.costs()[-1]
print(f"optimizer: cost {c0:.2f} -> {c1:.2f} ({100 * (c0 - c1) / c0:.1f}% lower), "
      f"{tree.n_nodes} nodes, {len(validate(tree))} violations")

morph = analysis.morphometry(tree)
hrep = analysis.hemodynamics(tree, hemo)
print("\norder  count  mean radius (um)")
for s in morph.per_order:
    print(f"{s.order:5d}  {s.count:5d}  {s.radius_mean:10.2f}")
slope, _, r2 = morph.fit
print(f"log-count slope {slope:.3f}, R^2 {r2:.3f}")
print(f"outlet pressure {hrep.aa_pressure_mean_mmhg:.1f} +- {hrep.aa_pressure_std_mmhg:.1f} mmHg, "
      f"minimum {hrep.pressure_min_mmhg:.1f} mmHg")

save_tree(tree, out / "tree_")
trace.save(out / "trace.csv")
write_vtk(tree, out / "tree.vtk", compute_pressures(tree, hemo))
analysis.export_report(morph, out / "report", hrep)
print(f"\nwrote {out}/ in {time.perf_counter() - t0:.1f} s")
