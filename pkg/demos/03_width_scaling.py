"""Wider two-layer nets stay closer to their Taylorized versions under gradient flow.

Runs a reduced width sweep (one seed, small data) and fits the log-log slope
of the sup-over-time parameter deviation against width.  Expect roughly
-1/2 for k=1 and a steeper slope for k=2.
"""

from taylorized.theory import GradientFlowConfig, scaling_passes, width_scaling_experiment

fit = width_scaling_experiment((32, 128, 512, 2048), (1, 2), (0,), GradientFlowConfig(h=0.1),
                               n=8, d=8, activation="tanh")
print(f"horizon t0 = {fit.t0:g}")
for k in fit.orders:
    devs = ", ".join(f"{v:.2e}" for v in fit.median_param[k])
    print(f"k={k}: sup deviation by width [{devs}]  slope {fit.slope[k]:+.3f}")
print("passes:", scaling_passes(fit))
