"""Check the proximity conditions for three scenarios.

C1 asks the noisy-to-clean distance tail to decay polynomially (steeper than
1/n); C2 asks the conditional expectation of the worst density ratio to settle
at one.  Both hold for the fading-noise count and Gaussian scenarios and fail
for the noise-floor scenario, whose quasi-estimator is biased.
"""

import numpy as np

from dhmm import (
    CounterexampleDhmm,
    GaussianDhmm,
    NoiseSchedule,
    PoissonDhmm,
    check_c1,
    check_c2,
)

scenarios = [
    ("fading-noise counts", PoissonDhmm(2, NoiseSchedule(40.0, 1.01)), np.array([10.0, 20.0, 0.8, 0.1])),
    ("fading-noise Gaussian", GaussianDhmm(2, NoiseSchedule(10.0, 0.75)), np.array([0.0, 4.0, 0.5, 0.5, 0.4, 0.5])),
    ("noise floor 0.5", CounterexampleDhmm(1, NoiseSchedule(0.0, 1.0, 0.5), 1), np.array([0.0, 1.0])),
]

for name, model, theta in scenarios:
    print(f"== {name} ==")
    print(check_c1(model, theta))
    print(check_c2(model, theta, seed=0))
    print()
