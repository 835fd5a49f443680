"""A noise floor that never vanishes biases the quasi-estimator predictably.

With a single Gaussian state of unit variance and noise settling at level 0.5,
the quasi-fit converges to variance 1 + 0.5^2 = 1.25 rather than 1: the limit
simply absorbs the leftover noise.  Errors measured against the biased limit
shrink; errors against the generating parameter stall near 0.25.
"""

import numpy as np

from dhmm import (
    CounterexampleDhmm,
    NoiseSchedule,
    OptimizerConfig,
    ParamSpace,
    fit,
    simulate,
)

model = CounterexampleDhmm(1, NoiseSchedule(scale=0.0, exponent=1.0, floor=0.5), 1)
theta = np.array([0.0, 1.0])
space = ParamSpace(np.array([-20.0, 0.05]), np.array([20.0, 20.0]), model.layout)
cfg = OptimizerConfig(n_starts=4, seed=0)

traj = simulate(model, theta, n=100_000, seed=1, nu=np.array([1.0]))

print("     n   sigma2_hat   err to (0,1)   err to (0,1.25)")
for n in (1000, 10_000, 100_000):
    res = fit("qmle", model, traj.z[:n], np.array([1.0]), space, cfg)
    mu_hat = res.theta_hat.values[0]
    s2_hat = res.theta_hat.values[1] ** 2
    point = np.array([mu_hat, s2_hat])
    err_true = np.linalg.norm(point - [0.0, 1.0])
    err_limit = np.linalg.norm(point - [0.0, 1.25])
    print(f"{n:7d}   {s2_hat:9.4f}   {err_true:12.4f}   {err_limit:14.4f}")
