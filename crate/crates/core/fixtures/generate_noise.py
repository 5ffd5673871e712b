"""Regenerates example_sec6_noise.csv.

Seven draws from N(0, 0.05) (variance 0.05) with numpy's default generator.
Seed 29 was picked because the spline constrained only at t = 0, 1, ..., 7
dips below zero inside (5, 6) for that realization.
"""

import numpy as np

SEED = 29

noise = np.random.default_rng(SEED).normal(0.0, np.sqrt(0.05), 7)
with open("example_sec6_noise.csv", "w") as f:
    f.write("t,noise\n")
    for i, e in enumerate(noise, start=1):
        f.write(f"{i},{float(e)!r}\n")
