"""Trajectory generation with reproducible, purpose-split random streams.

A single root seed is expanded into three independent child streams (hidden
chain, clean emissions, additive noise) through ``SeedSequence`` spawn keys.
Each stream is consumed strictly in time order, so generating a longer
trajectory with the same seed reproduces the shorter one as a prefix; per-length
error traces therefore extend trajectories consistently.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import complete_transition_rows, stationary_distribution
from .exceptions import DimensionMismatch, InvalidParams

_STREAM_CHAIN, _STREAM_EMISSION, _STREAM_NOISE = 0, 1, 2


def _stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(purpose,))))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Aligned hidden states (1-based), clean and noisy observations."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    model_tag: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        for name in ("x", "y", "z"):
            arr = np.asarray(getattr(self, name))
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        n = self.x.shape[0]
        if n < 1:
            raise DimensionMismatch("trajectory must have length >= 1")
        if self.y.shape[0] != n or self.z.shape[0] != n:
            raise DimensionMismatch("state and observation sequences must share length")
        if np.any(self.x < 1):
            raise InvalidParams("hidden states are 1-based labels")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def simulate(model, theta, n, seed, nu=None) -> Trajectory:
    """Draw (x, y, z) of length n; identical inputs give identical output.

    nu defaults to the stationary distribution of the transition matrix
    encoded in theta.
    """
    if n < 1:
        raise InvalidParams("trajectory length must be >= 1")
    model.validate_theta(theta)
    theta = np.asarray(theta, dtype=float)
    trans, valid = complete_transition_rows(
        theta[model.layout.transition_slice], model.n_states
    )
    if not valid:
        raise InvalidParams("transition rows leave the probability simplex")
    if nu is None:
        nu_w = np.asarray(stationary_distribution(trans), dtype=float)
    else:
        nu_w = np.asarray(nu, dtype=float)
        if nu_w.shape != (model.n_states,) or np.any(nu_w < 0) or abs(nu_w.sum() - 1.0) > 1e-9:
            raise InvalidParams("nu must be a probability vector over the states")

    chain_rng = _stream(seed, _STREAM_CHAIN)
    u = chain_rng.random(n)
    cum_rows = np.cumsum(trans, axis=1)
    cum_nu = np.cumsum(nu_w)
    x_idx = np.empty(n, dtype=np.int64)
    x_idx[0] = min(int(np.searchsorted(cum_nu, u[0], side="right")), model.n_states - 1)
    for t in range(1, n):
        x_idx[t] = min(
            int(np.searchsorted(cum_rows[x_idx[t - 1]], u[t], side="right")),
            model.n_states - 1,
        )

    y = model.sample_y(_stream(seed, _STREAM_EMISSION), theta, x_idx)
    t_indices = np.arange(1, n + 1)
    eps = model.sample_noise(_stream(seed, _STREAM_NOISE), t_indices)
    z = y + eps
    return Trajectory(x=x_idx + 1, y=y, z=z, model_tag=model.kind, seed=int(seed))


def proximity_trace(traj: Trajectory) -> np.ndarray:
    """Distance between noisy and clean observations at every time index."""
    dev = np.asarray(traj.z, dtype=float) - np.asarray(traj.y, dtype=float)
    if dev.ndim == 1:
        return np.abs(dev)
    return np.linalg.norm(dev, axis=1)


def _format_value(v) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def trajectory_to_csv(traj: Trajectory) -> str:
    """Render as CSV text: header t,x,y,z with vector observations flattened."""
    y = np.asarray(traj.y)
    z = np.asarray(traj.z)
    m = 1 if z.ndim == 1 else z.shape[1]
    if m == 1:
        header = ["t", "x", "y", "z"]
    else:
        header = ["t", "x"] + [f"y_{j}" for j in range(1, m + 1)] + [
            f"z_{j}" for j in range(1, m + 1)
        ]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for t in range(traj.n):
        row = [str(t + 1), str(int(traj.x[t]))]
        if m == 1:
            row += [_format_value(y[t]), _format_value(z[t])]
        else:
            row += [_format_value(v) for v in y[t]] + [_format_value(v) for v in z[t]]
        writer.writerow(row)
    return buf.getvalue()


def save_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(trajectory_to_csv(traj))


def load_trajectory_csv(path) -> Trajectory:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:2] != ["t", "x"]:
        raise DimensionMismatch("trajectory CSV must start with columns t,x")
    m = sum(1 for name in header if name == "z" or name.startswith("z_"))
    x = np.array([int(r[1]) for r in rows], dtype=np.int64)
    if m == 1:
        y = np.array([float(r[2]) for r in rows])
        z = np.array([float(r[3]) for r in rows])
    else:
        y = np.array([[float(v) for v in r[2 : 2 + m]] for r in rows])
        z = np.array([[float(v) for v in r[2 + m : 2 + 2 * m]] for r in rows])
    return Trajectory(x=x, y=y, z=z)
