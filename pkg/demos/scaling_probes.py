"""Smoothing, moment and occupation probes at reduced replica counts.

Run: python demos/scaling_probes.py
"""

import math

from heatflow import DriftSpec, make_grid
from heatflow.analysis import SmoothingProbeSpec, moment_probe, occupation_probe, smoothing_probe
from heatflow.drift import HolderFnSpec

g = make_grid(4, 128, 0.5, 2048)
zs = tuple(range(0, g.nz, 8))

spec = SmoothingProbeSpec(DriftSpec.step([(0.0, 10.0)]), HolderFnSpec.zero(), g,
                          tuple(2.0**-k for k in range(1, 6)), 0.05, -0.05, zs, replicas=500, seed=1)
rep = smoothing_probe(spec)
print(rep.summary(), "| linearity deviation", round(rep.extra["linearity_max_deviation"], 3))

rep = moment_probe(DriftSpec.smooth(1, 1), 2, g, [2.0**-k for k in range(1, 5)], 500, 2, zidx=zs, delta=0.0)
# E(int cos V)^2 is dominated by (Delta E cos V)^2, so the slope sits near 2
print(rep.summary())

G = make_grid(8, 256, 1.0, 1000)
sets = [[(0.25 - 0.1 * 2.0**-i, 0.25 + 0.1 * 2.0**-i)] for i in range(5)]
rep = occupation_probe(G, 3, sets, 250, zidx=tuple(range(0, G.nz, 8)))
print("occupation ratios per halving:", [round(r, 3) for r in rep.extra["ratios"]],
      f"(1/sqrt 2 = {1 / math.sqrt(2):.3f}); sqrt bound holds: {rep.extra['sqrt_bound_holds']}")
