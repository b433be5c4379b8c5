"""
Beta-shaped quantile weights
============================

How the two shape parameters move weight across a quantile grid.
Decreasing shapes (a < b) favour the most extreme levels.
"""

import numpy as np

from wqes import BetaWeightParams, EsTag, beta_weight, build_grid
from wqes.wq import weights_from_beta

# a fine grid of positions in (0, 1]
x = np.linspace(0.01, 1.0, 100)

# raw Beta-density weights are not normalised
for a, b in [(1, 4), (4, 1), (3, 3), (1, 1)]:
    w = beta_weight(x, BetaWeightParams(a, b))
    print(f"a={a} b={b}  w(0.1)={w[9]:.3f}  w(0.5)={w[49]:.3f}  mean={w.mean():.3f}")

# the WQ-Beta grid has one extra level: the last carries zero weight when b > 1
grid = build_grid(0.025, 0.015, 3, EsTag.WQ_BETA)
print("levels:", np.round(grid.levels, 5))
print("weights (a=1, b=4):", np.round(weights_from_beta(BetaWeightParams(1, 4), len(grid)), 4))
