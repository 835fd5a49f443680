"""Concrete model families for hidden chains with fading observation noise.

Each family binds together the homogeneous emission density f(s, y) of the
clean observation Y, the time-indexed density f_t(s, z) of the noisy
observation Z_t = Y_t + eps_t, and the decay schedule of the noise magnitude
beta_t.  Three families are provided:

* Poisson:  Y_t | X_t=s ~ Poisson(rate_s), eps_t ~ Poisson(beta_t), so
  Z_t | X_t=s ~ Poisson(rate_s + beta_t); observations are counts.
* Gaussian: Y_t = mu_s + L_s V_t with V_t ~ N(0, I), eps_t ~ N(0, beta_t^2 I),
  so Z_t | X_t=s ~ N(mu_s, L_s L_s^T + beta_t^2 I); observations are vectors.
* Hybrid:   Poisson Y plus Gaussian noise; Z_t is real-valued while Y_t is a
  count, so the Z-density is a Poisson mixture of normals.

A Gaussian family whose schedule has a positive floor never loses the noise;
it is kept as its own kind ("counterexample") because estimation on it is
biased by construction and several diagnostics treat it specially.

All density evaluation is carried out in log space; mixtures use log-sum-exp.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy.special import gammaln, logsumexp

from .core import ParamLayout, complete_transition_rows, unpack
from .exceptions import DomainError, InvalidParams, WrongModelKind

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Noise magnitude beta_t = floor + scale * t**(-exponent), t >= 1.

    Monotone nonincreasing; vanishing exactly when floor == 0.  A scale of 0
    gives the constant schedule beta_t = floor (in particular the exact
    zero-noise schedule floor = scale = 0, used in degeneracy checks).
    """

    scale: float
    exponent: float
    floor: float = 0.0

    def __post_init__(self):
        if self.scale < 0 or self.floor < 0:
            raise InvalidParams("noise schedule requires scale >= 0 and floor >= 0")
        if self.exponent <= 0:
            raise InvalidParams("noise schedule exponent must be > 0")

    def beta(self, t):
        """Noise level at (1-based) time index t; vectorized."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 1):
            raise DomainError("time indices must be >= 1")
        return self.floor + self.scale * t ** (-self.exponent)

    @property
    def vanishing(self) -> bool:
        return self.floor == 0.0

    @property
    def is_zero(self) -> bool:
        return self.floor == 0.0 and self.scale == 0.0


def zero_schedule() -> NoiseSchedule:
    return NoiseSchedule(scale=0.0, exponent=1.0, floor=0.0)


def _check_counts(obs) -> np.ndarray:
    z = np.asarray(obs, dtype=float)
    if z.ndim != 1:
        raise DomainError("count observations must form a 1-d sequence")
    if z.size and (np.any(z < 0) or np.any(z != np.floor(z)) or not np.isfinite(z).all()):
        raise DomainError("count observations must be nonnegative integers")
    return z


def _check_reals(obs, obs_dim: int) -> np.ndarray:
    z = np.asarray(obs, dtype=float)
    if obs_dim == 1:
        z = z.reshape(-1) if z.ndim == 1 else z
        if z.ndim == 2 and z.shape[1] == 1:
            z = z[:, 0]
        if z.ndim != 1:
            raise DomainError("scalar observations must form a 1-d sequence")
    else:
        if z.ndim != 2 or z.shape[1] != obs_dim:
            raise DomainError(f"observations must have shape (n, {obs_dim})")
    if z.size and not np.isfinite(z).all():
        raise DomainError("observations must be finite")
    return z


def _poisson_logpmf(z, rates, lgamma_obs=None):
    """Log pmf matrix of shape (n, K): z against each rate column."""
    if lgamma_obs is None:
        lgamma_obs = gammaln(z + 1.0)
    return z[:, None] * np.log(rates)[None, :] - rates[None, :] - lgamma_obs[:, None]


@dataclass(frozen=True, eq=False)
class PoissonDhmm:
    """Count-valued family: Poisson emissions contaminated by Poisson noise."""

    n_states: int
    schedule: NoiseSchedule

    kind: ClassVar[str] = "poisson"
    y_space: ClassVar[str] = "counts"
    z_space: ClassVar[str] = "counts"
    obs_dim: ClassVar[int] = 1

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout("poisson", self.n_states)

    def validate_theta(self, theta):
        rates, trans = unpack(theta, self.layout)
        if np.any(rates <= 0):
            raise InvalidParams("Poisson rates must be positive")
        if np.any(trans < 0):
            raise InvalidParams("transition rows must stay within [0, 1]")
        return rates, trans

    def check_y_obs(self, obs):
        return _check_counts(obs)

    check_z_obs = check_y_obs

    def emission_constants(self, obs):
        return gammaln(np.asarray(obs, dtype=float) + 1.0)

    def log_f_matrix(self, theta, obs, consts=None):
        z = self.check_y_obs(obs)
        rates, _ = unpack(theta, self.layout)
        return _poisson_logpmf(z, rates, consts)

    def log_f_n_matrix(self, theta, obs, t_indices, consts=None):
        z = self.check_z_obs(obs)
        rates, _ = unpack(theta, self.layout)
        beta = self.schedule.beta(t_indices)
        if consts is None:
            consts = gammaln(z + 1.0)
        shifted = rates[None, :] + beta[:, None]
        return z[:, None] * np.log(shifted) - shifted - consts[:, None]

    def sample_y(self, rng, theta, x_idx):
        rates, _ = unpack(theta, self.layout)
        return rng.poisson(lam=rates[x_idx])

    def sample_noise(self, rng, t_indices):
        return rng.poisson(lam=self.schedule.beta(t_indices))

    def obs_distance(self, z, y):
        return np.abs(np.asarray(z, dtype=float) - np.asarray(y, dtype=float))


@dataclass(frozen=True, eq=False)
class GaussianDhmm:
    """Vector-valued family: linear Gaussian emissions plus isotropic noise.

    Per-state scale factors are lower triangular with positive diagonal, so
    every emission covariance L L^T has full rank inside the parameter box.
    """

    n_states: int
    schedule: NoiseSchedule
    obs_dim: int = 1

    kind: ClassVar[str] = "gaussian"
    y_space: ClassVar[str] = "reals"
    z_space: ClassVar[str] = "reals"

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout("gaussian", self.n_states, self.obs_dim)

    def validate_theta(self, theta):
        means, scale, trans = unpack(theta, self.layout)
        diag = scale[:, np.arange(self.obs_dim), np.arange(self.obs_dim)]
        if np.any(diag <= 0):
            raise InvalidParams("scale factors must have positive diagonal")
        if np.any(trans < 0):
            raise InvalidParams("transition rows must stay within [0, 1]")
        return means, scale, trans

    def check_y_obs(self, obs):
        return _check_reals(obs, self.obs_dim)

    check_z_obs = check_y_obs

    def emission_constants(self, obs):
        return None

    def _log_density(self, theta, obs, beta2):
        """Log density matrix (n, K) against N(mu_s, L_s L_s^T + beta2_t I)."""
        z = self.check_z_obs(obs)
        means, scale, _ = unpack(theta, self.layout)
        m = self.obs_dim
        if m == 1:
            var = scale[:, 0, 0] ** 2
            beta2 = np.asarray(beta2, dtype=float)
            v = var[None, :] + (beta2[:, None] if beta2.ndim else float(beta2))
            dev = z[:, None] - means[:, 0][None, :]
            return -0.5 * (LOG_2PI + np.log(v) + dev**2 / v)
        beta2 = np.atleast_1d(np.asarray(beta2, dtype=float))
        out = np.empty((z.shape[0], self.n_states))
        for s in range(self.n_states):
            cov = scale[s] @ scale[s].T
            # C + b^2 I shares eigenvectors with C, so one eigendecomposition
            # covers every time index.
            evals, evecs = np.linalg.eigh(cov)
            proj = (z - means[s]) @ evecs
            shifted = evals[None, :] + beta2[:, None]
            quad = np.sum(proj**2 / shifted, axis=1)
            logdet = np.sum(np.log(shifted), axis=1)
            out[:, s] = -0.5 * (m * LOG_2PI + logdet + quad)
        return out

    def log_f_matrix(self, theta, obs, consts=None):
        return self._log_density(theta, obs, 0.0)

    def log_f_n_matrix(self, theta, obs, t_indices, consts=None):
        beta = self.schedule.beta(t_indices)
        return self._log_density(theta, obs, beta**2)

    def sample_y(self, rng, theta, x_idx):
        means, scale, _ = unpack(theta, self.layout)
        n = x_idx.shape[0]
        v = rng.standard_normal((n, self.obs_dim))
        y = means[x_idx] + np.einsum("tij,tj->ti", scale[x_idx], v)
        return y[:, 0] if self.obs_dim == 1 else y

    def sample_noise(self, rng, t_indices):
        beta = self.schedule.beta(t_indices)
        eps = beta[:, None] * rng.standard_normal((beta.shape[0], self.obs_dim))
        return eps[:, 0] if self.obs_dim == 1 else eps

    def obs_distance(self, z, y):
        dev = np.asarray(z, dtype=float) - np.asarray(y, dtype=float)
        if dev.ndim == 1:
            return np.abs(dev)
        return np.linalg.norm(dev, axis=1)


@dataclass(frozen=True, eq=False)
class CounterexampleDhmm(GaussianDhmm):
    """Gaussian family whose noise floor never vanishes (biases estimation)."""

    kind: ClassVar[str] = "counterexample"

    def __post_init__(self):
        if self.schedule.floor <= 0:
            raise InvalidParams("counterexample family requires a positive noise floor")


@dataclass(frozen=True, eq=False)
class HybridDhmm:
    """Poisson emissions contaminated by Gaussian noise.

    Y lives on the nonnegative integers while Z is real-valued, so the
    Z-density is the Poisson mixture of N(j, beta_t^2) bumps.  With respect to
    the reference measure (Lebesgue plus unit atoms at the integers) that
    density is zero exactly at integer points; the zero-noise degenerate case
    collapses back to the Poisson pmf on the integers.
    """

    n_states: int
    schedule: NoiseSchedule

    kind: ClassVar[str] = "hybrid"
    y_space: ClassVar[str] = "counts"
    z_space: ClassVar[str] = "reals"
    obs_dim: ClassVar[int] = 1

    @property
    def layout(self) -> ParamLayout:
        return ParamLayout("poisson", self.n_states)

    def validate_theta(self, theta):
        rates, trans = unpack(theta, self.layout)
        if np.any(rates <= 0):
            raise InvalidParams("Poisson rates must be positive")
        if np.any(trans < 0):
            raise InvalidParams("transition rows must stay within [0, 1]")
        return rates, trans

    def check_y_obs(self, obs):
        return _check_counts(obs)

    def check_z_obs(self, obs):
        return _check_reals(obs, 1)

    def emission_constants(self, obs):
        return None

    def log_f_matrix(self, theta, obs, consts=None):
        z = self.check_y_obs(obs)
        rates, _ = unpack(theta, self.layout)
        return _poisson_logpmf(z, rates)

    def mixture_support(self, theta, z, beta):
        """Truncated mixture index range [0, j_max] covering all windows.

        The normal factor is negligible beyond ~10*beta of z and the Poisson
        factor beyond rate + 10*sqrt(rate); the union of both windows over all
        observations is covered by a single contiguous range.
        """
        rates, _ = unpack(theta, self.layout)
        z = np.asarray(z, dtype=float)
        half_width = math.ceil(10.0 * float(np.max(beta))) + 20
        j_from_z = int(np.ceil(np.max(z))) + half_width if z.size else 0
        j_from_rate = int(np.ceil(np.max(rates + 10.0 * np.sqrt(rates))))
        return max(j_from_z, j_from_rate, 0)

    def log_f_n_matrix(self, theta, obs, t_indices, consts=None, extra_terms=0):
        z = self.check_z_obs(obs)
        rates, _ = unpack(theta, self.layout)
        beta = self.schedule.beta(t_indices)
        out = np.full((z.shape[0], self.n_states), -np.inf)
        on_grid = z == np.floor(z)
        zero_beta = beta == 0.0
        if np.any(zero_beta):
            # Degenerate noise: Z = Y exactly, density collapses to the pmf.
            idx = zero_beta & on_grid
            if np.any(idx):
                out[idx] = _poisson_logpmf(z[idx], rates)
        live = ~zero_beta & ~on_grid
        if np.any(live):
            j_max = self.mixture_support(theta, z[live], beta[live]) + extra_terms
            j = np.arange(j_max + 1, dtype=float)
            log_pois = j[:, None] * np.log(rates)[None, :] - rates[None, :] - gammaln(j + 1.0)[:, None]
            dev = z[live][:, None] - j[None, :]
            b = beta[live][:, None]
            log_norm = -0.5 * (LOG_2PI + 2.0 * np.log(b) + (dev / b) ** 2)
            out[live] = logsumexp(log_norm[:, :, None] + log_pois[None, :, :], axis=1)
        return out

    def sample_y(self, rng, theta, x_idx):
        rates, _ = unpack(theta, self.layout)
        return rng.poisson(lam=rates[x_idx])

    def sample_noise(self, rng, t_indices):
        beta = self.schedule.beta(t_indices)
        return beta * rng.standard_normal(beta.shape[0])

    def obs_distance(self, z, y):
        return np.abs(np.asarray(z, dtype=float) - np.asarray(y, dtype=float))


def make_model(kind, n_states, schedule, obs_dim=1):
    kind = kind.lower()
    if kind == "poisson":
        return PoissonDhmm(n_states, schedule)
    if kind == "gaussian":
        return GaussianDhmm(n_states, schedule, obs_dim)
    if kind == "counterexample":
        return CounterexampleDhmm(n_states, schedule, obs_dim)
    if kind == "hybrid":
        return HybridDhmm(n_states, schedule)
    raise WrongModelKind(f"unknown model kind {kind!r}")


def log_f(model, theta, s, y):
    """Log stationary emission density at state s (1-based) and observation y."""
    obs = np.asarray([y], dtype=float)
    return float(model.log_f_matrix(theta, obs)[0, s - 1])


def log_f_n(model, theta, s, t, z):
    """Log noisy-observation density at state s (1-based) and time index t >= 1."""
    obs = np.asarray([z], dtype=float)
    return float(model.log_f_n_matrix(theta, obs, np.asarray([t]))[0, s - 1])


def round_transform(z):
    """Round to the nearest integer via floor(z + 0.5), clamped below at 0.

    The clamp keeps the transformed observations inside the count observation
    space; raw values below -0.5 would otherwise map to negative integers.
    """
    arr = np.floor(np.asarray(z, dtype=float) + 0.5)
    arr = np.maximum(arr, 0.0)
    if np.isscalar(z) or np.ndim(z) == 0:
        return int(arr)
    return arr.astype(int)


def ratio_bound_constant(model, theta, t):
    """max_s (beta_t + rate_s) / rate_s for a Poisson family."""
    if model.kind != "poisson":
        raise WrongModelKind("ratio bound constant is defined for the Poisson family")
    rates, _ = unpack(theta, model.layout)
    beta = float(model.schedule.beta(t))
    return float(np.max((beta + rates) / rates))
