"""Fit both estimators on growing observation prefixes of one trajectory.

The quasi-estimator ignores the noise entirely, the exact estimator models it;
once the contamination has faded both recover the generating parameter, and
their per-length error traces track each other closely.
"""

import numpy as np

from dhmm import (
    NoiseSchedule,
    OptimizerConfig,
    PoissonDhmm,
    error_trace,
    simulate,
    stationary_distribution,
    unpack,
)
from dhmm.experiments import default_box
from dhmm.core import ParamSpace

model = PoissonDhmm(2, NoiseSchedule(40.0, 1.01))
theta = np.array([10.0, 20.0, 0.8, 0.1])
pi = np.asarray(stationary_distribution(unpack(theta, model.layout)[1]))
lower, upper = default_box("poisson", 2)
space = ParamSpace(np.array(lower), np.array(upper), model.layout)

traj = simulate(model, theta, n=5000, seed=11)
grid = [100, 300, 1000, 3000, 5000]
cfg = OptimizerConfig(n_starts=4, seed=0)

print("   n    |quasi err|   |exact err|")
traces = {}
for kind in ("qmle", "mle"):
    traces[kind] = error_trace(kind, model, theta, traj, grid, pi, space, cfg)
for i, n in enumerate(grid):
    print(f"{n:6d}   {traces['qmle'][i].error:10.4f}   {traces['mle'][i].error:10.4f}")

best = traces["qmle"][-1].result
print("\nfinal quasi estimate:", np.round(best.theta_hat.values, 4))
print("generating parameter:", theta)
