"""
Rolling backtest and Model Confidence Set
=========================================

Rolling one-step VaR/ES forecasts for a handful of models on a simulated
series, scored by the quantile and joint AL losses, then filtered by the MCS.
"""

import numpy as np

from wqes import (DgpSpec, LossMatrix, MultiStartConfig, RollingConfig, mcs, parse_model,
                  rolling_forecast, simulate)
from wqes.backtest import joint_loss_series, quantile_loss_series

n, m = 1000, 200
r = simulate(DgpSpec(n=n + m), 1).returns
roll = RollingConfig(in_sample_n=n, out_sample_m=m, refit_interval=50)
cfg = MultiStartConfig(n_candidates=200)

names = ["WQ-Beta-3-SAV", "SA-BC-3-SAV", "SA-No-BC-3-SAV", "GARCH-t"]
out = {}
for name in names:
    out[name] = rolling_forecast(r, parse_model(name), roll, caviar_cfg=cfg)

r_out = r[n:]
joint = np.column_stack([joint_loss_series(r_out, f.var, f.es, 0.025) for f in out.values()])
for name, f, col in zip(names, out.values(), joint.T):
    q = quantile_loss_series(r_out, f.var, 0.025).mean()
    print(f"{name:15s} hits {np.mean(r_out < f.var):.3f}  QL {q:.4f}  AL {col.mean():.4f}")

# the MCS at 75%, both statistics
lm = LossMatrix(joint, names)
for method in ("R", "SQ"):
    res = mcs(lm, 0.75, method)
    print(method, "MCS:", res.included)
