"""Estimate the time and space Hölder exponents of the convolved noise.

Run: python demos/noise_regularity.py  (about half a minute)
"""

import numpy as np

from heatflow import make_grid
from heatflow.analysis import estimate_holder_exponent, noise_space_increments, noise_time_increments
from heatflow.noise import variance_oracle_v

g = make_grid(4, 512, 1.0, 2048)
R = 300
gaps = [2.0**-k for k in range(4, 9)]
inc = noise_time_increments(g, 11, R, 0.5, gaps, np.arange(0, g.nz, 16))
print(estimate_holder_exponent(inc, gaps, target=0.25, tolerance=0.1, name="time", min_replicas=R).summary())

lags = [2, 4, 8, 16, 32]
inc = noise_space_increments(g, 12, R, 1.0, lags)
rep = estimate_holder_exponent(inc, [l * g.dz for l in lags], target=0.5, tolerance=0.1, name="space",
                               min_replicas=R)
print(rep.summary())
print(rep.to_csv())
print(f"continuum variance of V(0, 1, z): {variance_oracle_v(1.0):.5f}")
