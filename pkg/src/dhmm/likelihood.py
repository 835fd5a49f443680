"""Numerically stable evaluation of chain likelihoods.

Two log-likelihoods are exposed for an observation sequence z_1..z_n:

* ``log_q`` treats every observation as a clean emission, i.e. it sums
  nu(x_1) * prod_i f(x_i, z_i) P(x_i, x_{i+1}) over all hidden paths.  This is
  the quasi-likelihood used when the noise structure is ignored.
* ``log_p`` uses the time-indexed noisy densities f_i(x_i, z_i) instead and is
  the exact likelihood of the contaminated observations.

The batch evaluator exploits associativity: the path sum equals
nu^T (D_1 P)(D_2 P)...(D_n P) 1 with D_t the diagonal of emission densities,
and the matrix chain is folded pairwise with per-level max rescaling.  This
keeps everything inside the floating-point range for n up to 1e5 and runs two
orders of magnitude faster than a per-step Python loop on small K.

``ForwardState`` offers the classical incremental alternative (one observation
at a time, log domain, per-step max rescaling) used for per-length traces; the
two evaluation orders agree to reassociation error and are cross-checked in
the test suite, along with a brute-force path enumeration oracle.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from .core import complete_transition_rows
from .exceptions import DimensionMismatch, DomainError, InvalidParams, TooLarge

try:
    from numba import njit
except ImportError:  # pragma: no cover - compiled kernel is optional
    njit = None

BRUTE_FORCE_PATH_CAP = 2**24


if njit is not None:

    @njit(cache=True)
    def _forward_scaled_kernel(rel, trans, nu):  # pragma: no cover - exercised via log_q
        """Per-step forward recursion with max rescaling, in scaled linear space."""
        n, k = rel.shape
        alpha = np.empty(k)
        peak = 0.0
        for x in range(k):
            alpha[x] = nu[x]
            if alpha[x] > peak:
                peak = alpha[x]
        total = np.log(peak)
        for x in range(k):
            alpha[x] /= peak
        new = np.empty(k)
        for t in range(n):
            for xp in range(k):
                new[xp] = 0.0
            for x in range(k):
                w = alpha[x] * rel[t, x]
                if w > 0.0:
                    for xp in range(k):
                        new[xp] += w * trans[x, xp]
            peak = 0.0
            for xp in range(k):
                if new[xp] > peak:
                    peak = new[xp]
            if peak <= 0.0:
                return -np.inf
            for xp in range(k):
                alpha[xp] = new[xp] / peak
            total += np.log(peak)
        mass = 0.0
        for xp in range(k):
            mass += alpha[xp]
        return total + np.log(mass)

else:
    _forward_scaled_kernel = None


def _transition_from_theta(model, theta):
    theta = np.asarray(theta, dtype=float)
    stored = theta[model.layout.transition_slice]
    trans, valid = complete_transition_rows(stored, model.n_states)
    if not valid:
        raise InvalidParams("transition rows leave the probability simplex")
    return trans


def _nu_weights(model, nu):
    w = np.asarray(nu, dtype=float)
    if w.shape != (model.n_states,):
        raise DimensionMismatch(
            f"initial weights must have shape ({model.n_states},), got {w.shape}"
        )
    if np.any(w < 0) or w.sum() <= 0:
        raise InvalidParams("initial weights must be nonnegative with positive mass")
    return w


def _check_emissions(log_emissions):
    if log_emissions.shape[0] == 0:
        raise DimensionMismatch("observation sequence must be nonempty")
    row_max = log_emissions.max(axis=1)
    if np.any(np.isnan(log_emissions)):
        raise InvalidParams("emission log densities contain NaN")
    dead = ~np.isfinite(row_max)
    if np.any(dead):
        step = int(np.flatnonzero(dead)[0]) + 1
        raise DomainError(
            f"all emission densities vanish at step {step}; observation outside support"
        )
    return row_max


def _fold_loglik(log_emissions, trans, nu_w):
    """Pairwise-associative fold of nu^T (D_1 P) ... (D_n P) 1, rescaled per level.

    Pure-numpy fallback for the compiled per-step recursion; both orderings
    compute the same path sum up to float reassociation.
    """
    row_max = _check_emissions(log_emissions)
    total = float(row_max.sum())
    rel = np.exp(log_emissions - row_max[:, None])
    mats = rel[:, :, None] * trans[None, :, :]
    while mats.shape[0] > 1:
        even = mats.shape[0] // 2 * 2
        prod = mats[0:even:2] @ mats[1:even:2]
        if mats.shape[0] % 2:
            prod = np.concatenate([prod, mats[even:]], axis=0)
        peak = prod.max(axis=(1, 2))
        if np.any(peak <= 0.0):
            return -np.inf
        prod /= peak[:, None, None]
        total += float(np.log(peak).sum())
        mats = prod
    mass = float(nu_w @ mats[0] @ np.ones(trans.shape[0]))
    if mass <= 0.0:
        return -np.inf
    return total + float(np.log(mass))


def _chain_loglik(log_emissions, trans, nu_w):
    """log of nu^T (D_1 P) ... (D_n P) 1 with D_t = diag of emission densities."""
    row_max = _check_emissions(log_emissions)
    if trans.shape[0] == 1:
        # Degenerate chain: the likelihood is a plain product of densities.
        return float(row_max.sum()) + float(np.log(nu_w[0]))
    if _forward_scaled_kernel is not None:
        rel = np.exp(log_emissions - row_max[:, None])
        value = _forward_scaled_kernel(rel, trans, nu_w.astype(float))
        if value == -np.inf:
            return -np.inf
        return float(row_max.sum()) + float(value)
    return _fold_loglik(log_emissions, trans, nu_w)


def log_q(model, theta, nu, obs, consts=None):
    """Log quasi-likelihood of obs under the homogeneous emission densities."""
    model.validate_theta(theta)
    trans = _transition_from_theta(model, theta)
    nu_w = _nu_weights(model, nu)
    log_emissions = model.log_f_matrix(theta, obs, consts)
    return _chain_loglik(log_emissions, trans, nu_w)


def log_p(model, theta, nu, obs, consts=None):
    """Log likelihood of obs under the time-indexed noisy densities."""
    model.validate_theta(theta)
    trans = _transition_from_theta(model, theta)
    nu_w = _nu_weights(model, nu)
    n = np.asarray(obs).shape[0]
    t_idx = np.arange(1, n + 1)
    log_emissions = model.log_f_n_matrix(theta, obs, t_idx, consts)
    return _chain_loglik(log_emissions, trans, nu_w)


def _brute_force(log_emissions, trans, nu_w):
    k = trans.shape[0]
    n = log_emissions.shape[0]
    if k**n > BRUTE_FORCE_PATH_CAP:
        raise TooLarge(f"{k}**{n} paths exceed the enumeration cap")
    _check_emissions(log_emissions)
    with np.errstate(divide="ignore"):
        log_trans = np.log(trans)
        log_nu = np.log(nu_w)
    steps = np.arange(n)
    chunks = []
    it = itertools.product(range(k), repeat=n + 1)
    while True:
        block = list(itertools.islice(it, 65536))
        if not block:
            break
        paths = np.array(block)
        logw = log_nu[paths[:, 0]]
        logw = logw + log_emissions[steps[None, :], paths[:, :n]].sum(axis=1)
        logw = logw + log_trans[paths[:, :n], paths[:, 1:]].sum(axis=1)
        chunks.append(logsumexp(logw))
    return float(logsumexp(chunks))


def brute_force_log_q(model, theta, nu, obs):
    """Exact path-sum transcription of the quasi-likelihood; test oracle only."""
    model.validate_theta(theta)
    trans = _transition_from_theta(model, theta)
    nu_w = _nu_weights(model, nu)
    return _brute_force(model.log_f_matrix(theta, obs), trans, nu_w)


def brute_force_log_p(model, theta, nu, obs):
    """Exact path-sum transcription of the noisy likelihood; test oracle only."""
    model.validate_theta(theta)
    trans = _transition_from_theta(model, theta)
    nu_w = _nu_weights(model, nu)
    n = np.asarray(obs).shape[0]
    log_emissions = model.log_f_n_matrix(theta, obs, np.arange(1, n + 1))
    return _brute_force(log_emissions, trans, nu_w)


class ForwardState:
    """Incremental forward pass; owns its state and accepts one observation at a time.

    log_alpha holds the log forward weights shifted so their maximum is zero;
    log_scale accumulates the subtracted shifts.  kind selects between the
    homogeneous densities ("q") and the time-indexed ones ("p").
    """

    def __init__(self, model, theta, nu, kind="q"):
        if kind not in ("q", "p"):
            raise ValueError("kind must be 'q' or 'p'")
        self.model = model
        self.theta = np.asarray(theta, dtype=float)
        model.validate_theta(self.theta)
        self.kind = kind
        trans = _transition_from_theta(model, theta)
        nu_w = _nu_weights(model, nu)
        with np.errstate(divide="ignore"):
            self._log_trans = np.log(trans)
            log_nu = np.log(nu_w)
        shift = log_nu.max()
        self.log_alpha = log_nu - shift
        self.log_scale = float(shift)
        self.t = 0

    def push(self, z):
        """Absorb the next observation and return the updated log-likelihood."""
        obs = np.asarray([z], dtype=float)
        if self.kind == "q":
            log_f = self.model.log_f_matrix(self.theta, obs)[0]
        else:
            log_f = self.model.log_f_n_matrix(self.theta, obs, np.asarray([self.t + 1]))[0]
        if not np.isfinite(log_f.max()):
            raise DomainError(f"all emission densities vanish at step {self.t + 1}")
        weighted = self.log_alpha + log_f
        new = logsumexp(weighted[:, None] + self._log_trans, axis=0)
        shift = new.max()
        if not np.isfinite(shift):
            raise InvalidParams("forward weights vanished; zero-probability path")
        self.log_alpha = new - shift
        self.log_scale += float(shift)
        self.t += 1
        return self.log_likelihood

    @property
    def log_likelihood(self) -> float:
        return float(logsumexp(self.log_alpha) + self.log_scale)


def loglik_trace(model, theta, nu, obs, kind="q"):
    """Log-likelihood of every prefix z_1..z_t, computed incrementally."""
    state = ForwardState(model, theta, nu, kind=kind)
    z = np.asarray(obs)
    return np.array([state.push(z[t]) for t in range(z.shape[0])])


def log_likelihood_rate(values):
    """Per-observation rate values[t] / t for prefix log-likelihoods (t = 1..n)."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch("expected a nonempty vector of prefix log-likelihoods")
    return v / np.arange(1, v.size + 1)
