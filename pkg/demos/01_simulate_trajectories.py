"""Simulate a two-state count model whose observation noise fades over time.

The hidden chain switches between a low-rate and a high-rate regime; the clean
observations are Poisson counts and the recorded observations add an extra
Poisson contamination whose intensity decays polynomially.  Early observations
are visibly corrupted, late ones are essentially clean.
"""

import numpy as np

from dhmm import NoiseSchedule, PoissonDhmm, proximity_trace, save_trajectory_csv, simulate

model = PoissonDhmm(n_states=2, schedule=NoiseSchedule(scale=40.0, exponent=1.01))
theta = np.array([10.0, 20.0, 0.8, 0.1])  # rates 10, 20; P(1,1)=0.8, P(2,1)=0.1

traj = simulate(model, theta, n=5000, seed=7)

print("first 12 hidden states:", traj.x[:12])
print("first 12 clean counts :", traj.y[:12])
print("first 12 noisy counts :", traj.z[:12])

gap = proximity_trace(traj)
for lo, hi in ((0, 100), (400, 500), (2400, 2500), (4900, 5000)):
    frac = np.mean(gap[lo:hi] > 0)
    print(f"t in ({lo:4d},{hi:4d}]: fraction of corrupted observations = {frac:.2f}")

save_trajectory_csv(traj, "trajectory_demo.csv")
print("wrote trajectory_demo.csv (columns t,x,y,z)")
