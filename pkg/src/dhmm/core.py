"""Parameter-space, distribution and transition-matrix primitives.

A model parameter is a flat vector packing an emission block followed by a
transition block.  Transition rows are stored through their first K-1 entries;
the last entry of each row is derived so the row sums to one.  For a two-state
Poisson family the vector reads (lambda_1, lambda_2, P(1,1), P(2,1)), for a
scalar Gaussian family (mu_1, mu_2, sigma_1, sigma_2, P(1,1), P(2,1)).

All types here are immutable value objects; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DimensionMismatch,
    LayoutMismatch,
    NonIrreducible,
    NumericalFailure,
)

ROW_SUM_TOL = 1e-12
STATIONARY_TOL = 1e-10


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ParamLayout:
    """Maps index ranges of a flat parameter vector to named blocks.

    kind is 'poisson' or 'gaussian'; the hybrid family shares the Poisson
    layout (integer-mean emissions plus a transition block).
    """

    kind: str
    n_states: int
    obs_dim: int = 1

    def __post_init__(self):
        if self.kind not in ("poisson", "gaussian"):
            raise LayoutMismatch(f"unknown layout kind {self.kind!r}")
        if self.n_states < 1:
            raise LayoutMismatch("n_states must be >= 1")
        if self.obs_dim < 1:
            raise LayoutMismatch("obs_dim must be >= 1")

    @property
    def emission_size(self) -> int:
        k, m = self.n_states, self.obs_dim
        if self.kind == "poisson":
            return k
        return k * m + k * (m * (m + 1) // 2)

    @property
    def transition_size(self) -> int:
        return self.n_states * (self.n_states - 1)

    @property
    def dim(self) -> int:
        return self.emission_size + self.transition_size

    @property
    def transition_slice(self) -> slice:
        return slice(self.emission_size, self.dim)

    def block_names(self):
        if self.kind == "poisson":
            return ("rates", "transition")
        return ("means", "scales", "transition")


@dataclass(frozen=True, eq=False)
class ParamVector:
    """A point in parameter space together with its block layout."""

    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(self.values))
        if self.values.ndim != 1 or self.values.size != self.layout.dim:
            raise LayoutMismatch(
                f"expected {self.layout.dim} coordinates, got shape {self.values.shape}"
            )

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size

    def close_to(self, other, atol=0.0) -> bool:
        return bool(np.all(np.abs(self.values - np.asarray(other)) <= atol))


@dataclass(frozen=True, eq=False)
class ParamSpace:
    """Axis-aligned compact box of admissible parameters.

    eps_p is the margin kept between transition probabilities and {0, 1}; the
    derived last entry of each transition row must stay >= eps_p as well.
    """

    lower: np.ndarray
    upper: np.ndarray
    layout: ParamLayout
    eps_p: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "lower", _readonly(self.lower))
        object.__setattr__(self, "upper", _readonly(self.upper))
        d = self.layout.dim
        if self.lower.shape != (d,) or self.upper.shape != (d,):
            raise LayoutMismatch("box bounds must match layout dimension")
        if np.any(self.lower > self.upper):
            raise LayoutMismatch("box requires lower <= upper coordinatewise")
        if self.eps_p < 0:
            raise LayoutMismatch("eps_p must be >= 0")
        t = self.layout.transition_slice
        if np.any(self.lower[t] < self.eps_p) or np.any(self.upper[t] > 1.0 - self.eps_p):
            raise LayoutMismatch(
                "transition-block bounds must lie within [eps_p, 1 - eps_p]"
            )

    @property
    def dim(self) -> int:
        return self.layout.dim

    def contains(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(np.all(v >= self.lower) and np.all(v <= self.upper))

    def project(self, values) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self.lower, self.upper)

    def validate(self, values) -> ParamVector:
        """Construct a ParamVector after checking box membership."""
        v = np.asarray(values, dtype=float)
        if not self.contains(v):
            raise LayoutMismatch("parameter vector outside the box")
        return ParamVector(v, self.layout)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """Row-stochastic K x K matrix; rows must sum to one within 1e-12."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _readonly(self.entries))
        p = self.entries
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionMismatch(f"transition matrix must be square, got {p.shape}")
        if np.any(p < 0):
            raise LayoutMismatch("transition probabilities must be nonnegative")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise LayoutMismatch("transition rows must sum to 1 within 1e-12")

    @property
    def n_states(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability weights over the hidden states {1, ..., K}.

    With pseudo=True the normalization invariant is bypassed; this is how the
    unnormalized counting measure (all-ones weight vector) is represented.
    """

    weights: np.ndarray
    pseudo: bool = field(default=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", _readonly(self.weights))
        w = self.weights
        if w.ndim != 1:
            raise DimensionMismatch("distribution weights must be a vector")
        if np.any(w < 0):
            raise LayoutMismatch("distribution weights must be nonnegative")
        if not self.pseudo and abs(w.sum() - 1.0) > ROW_SUM_TOL:
            raise LayoutMismatch("distribution weights must sum to 1 within 1e-12")

    @property
    def n_states(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


def counting_measure(n_states: int) -> Distribution:
    """Unnormalized all-ones weight vector over the states."""
    return Distribution(np.ones(n_states), pseudo=True)


def uniform_distribution(n_states: int) -> Distribution:
    return Distribution(np.full(n_states, 1.0 / n_states))


def is_irreducible(transition) -> bool:
    """True iff the directed graph with edges {(s,t): P(s,t) > 0} is strongly connected.

    Strong connectivity of a single graph is equivalent to every node being
    reachable from node 0 and node 0 being reachable from every node, so two
    breadth-first searches (forward and on the transpose) suffice.
    """
    p = np.asarray(transition, dtype=float)
    adj = p > 0.0

    def reaches_all(a) -> bool:
        k = a.shape[0]
        seen = np.zeros(k, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = np.any(a[frontier], axis=0) & ~seen
            seen |= nxt
            frontier = np.flatnonzero(nxt).tolist()
        return bool(seen.all())

    return reaches_all(adj) and reaches_all(adj.T)


def stationary_distribution(transition) -> Distribution:
    """Invariant distribution pi with pi P = pi and sum(pi) = 1.

    Solved directly: the defining equations (P^T - I) pi^T = 0 with one of them
    replaced by the normalization constraint give a square linear system.
    """
    p = np.asarray(transition, dtype=float)
    if not is_irreducible(p):
        raise NonIrreducible("transition matrix is not irreducible")
    k = p.shape[0]
    a = p.T - np.eye(k)
    a[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"stationary solve failed: {exc}") from exc
    residual = np.abs(pi @ p - pi).sum()
    if not np.isfinite(pi).all() or residual > STATIONARY_TOL:
        raise NumericalFailure(f"stationary solve residual {residual:.3e} too large")
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    return Distribution(pi)


def complete_transition_rows(stored, n_states: int, eps_p: float = 0.0):
    """Build the full K x K matrix from the stored first K-1 entries per row.

    Returns (matrix, valid); the derived last column is 1 - rowsum and the
    matrix is valid when every derived entry is >= eps_p.
    """
    k = n_states
    rows = np.asarray(stored, dtype=float).reshape(k, k - 1) if k > 1 else np.zeros((1, 0))
    full = np.empty((k, k))
    if k == 1:
        full[0, 0] = 1.0
        return full, True
    full[:, : k - 1] = rows
    full[:, k - 1] = 1.0 - rows.sum(axis=1)
    valid = bool(np.all(rows >= 0.0) and np.all(full[:, k - 1] >= eps_p))
    return full, valid


def unpack(theta, layout: ParamLayout):
    """Split a flat parameter vector into model-native blocks.

    Poisson layouts yield (rates, transition); Gaussian layouts yield
    (means, scale_tril, transition) with means of shape (K, M) and scale_tril
    the lower-triangular factors of shape (K, M, M).  The transition matrix is
    completed so each row sums to one.
    """
    v = np.asarray(theta, dtype=float)
    if v.shape != (layout.dim,):
        raise LayoutMismatch(f"expected {layout.dim} coordinates, got {v.shape}")
    k, m = layout.n_states, layout.obs_dim
    trans, _ = complete_transition_rows(v[layout.transition_slice], k)
    if layout.kind == "poisson":
        return v[:k].copy(), trans
    means = v[: k * m].reshape(k, m).copy()
    tril_flat = v[k * m : layout.emission_size].reshape(k, m * (m + 1) // 2)
    rows, cols = np.tril_indices(m)
    scale = np.zeros((k, m, m))
    scale[:, rows, cols] = tril_flat
    return means, scale, trans


def pack(blocks, layout: ParamLayout) -> ParamVector:
    """Inverse of :func:`unpack`; bit-for-bit round trip on valid inputs."""
    k, m = layout.n_states, layout.obs_dim
    if layout.kind == "poisson":
        if len(blocks) != 2:
            raise LayoutMismatch("poisson layout packs (rates, transition)")
        rates, trans = blocks
        rates = np.asarray(rates, dtype=float)
        if rates.shape != (k,):
            raise LayoutMismatch(f"rates must have shape ({k},)")
        emission = rates
    else:
        if len(blocks) != 3:
            raise LayoutMismatch("gaussian layout packs (means, scale_tril, transition)")
        means, scale, trans = blocks
        means = np.asarray(means, dtype=float)
        scale = np.asarray(scale, dtype=float)
        if means.shape != (k, m) or scale.shape != (k, m, m):
            raise LayoutMismatch("means/scale blocks have wrong shape")
        rows, cols = np.tril_indices(m)
        emission = np.concatenate([means.ravel(), scale[:, rows, cols].ravel()])
    trans = np.asarray(trans, dtype=float)
    if trans.shape != (k, k):
        raise LayoutMismatch(f"transition must have shape ({k}, {k})")
    stored = trans[:, : k - 1].ravel()
    return ParamVector(np.concatenate([emission, stored]), layout)
