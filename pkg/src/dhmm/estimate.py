"""Parameter estimation by bounded derivative-free likelihood maximization.

Both estimators maximize over the parameter box: the quasi-estimator ("qmle")
maximizes the homogeneous-density likelihood of the noisy observations, the
exact estimator ("mle") maximizes the time-indexed likelihood.  The surface is
continuous but not concave (mixtures create local optima), so every fit runs a
small multi-start of Nelder-Mead restarts: Latin-hypercube points over the box
plus the box center, optionally extended by caller-provided warm starts.

Hidden-state labels are not identified: permuting states and conjugating the
transition matrix leaves both likelihoods unchanged.  Estimates are therefore
canonicalized (emission rates or mean vectors in ascending order) before any
error is measured.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from .core import ParamSpace, ParamVector, complete_transition_rows, pack, unpack
from .exceptions import AllStartsFailed, DimensionMismatch, InvalidParams, NonFinite
from .likelihood import log_p, log_q

ESTIMATOR_KINDS = ("qmle", "mle")


@dataclass(frozen=True)
class OptimizerConfig:
    """Multi-start Nelder-Mead settings; deterministic given seed.

    Every start first runs a coarse exploration pass; the leading starts are
    then polished to value_tol / param_tol with an iteration budget of
    max_iters.
    """

    n_starts: int = 8
    max_iters: int = 2000
    value_tol: float = 1e-9
    param_tol: float = 1e-8
    seed: int = 0
    keep_trace: bool = False
    polish_starts: int = 2

    def __post_init__(self):
        if self.n_starts < 1:
            raise InvalidParams("n_starts must be >= 1")
        if self.value_tol <= 0 or self.param_tol <= 0:
            raise InvalidParams("tolerances must be positive")


@dataclass(frozen=True, eq=False)
class FitResult:
    kind: str
    theta_hat: ParamVector
    log_lik: float
    starts: int
    best_start_index: int
    iterations: int
    converged: bool
    start_optima: tuple = ()
    trace: Optional[tuple] = None

    _CSV_FIELDS = ("kind", "log_lik", "converged", "starts", "best_start_index", "iterations")

    def to_text(self) -> str:
        """Flat key = value record; theta coordinates are comma-separated."""
        lines = [
            f"kind = {self.kind}",
            "theta_hat = " + ",".join(repr(float(v)) for v in self.theta_hat.values),
            f"log_lik = {self.log_lik!r}",
            f"converged = {str(self.converged).lower()}",
            f"starts = {self.starts}",
            f"best_start_index = {self.best_start_index}",
            f"iterations = {self.iterations}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def csv_header(cls):
        return list(cls._CSV_FIELDS) + ["theta_hat"]

    def to_csv_row(self):
        vals = [
            self.kind,
            repr(float(self.log_lik)),
            str(self.converged).lower(),
            str(self.starts),
            str(self.best_start_index),
            str(self.iterations),
        ]
        return vals + [" ".join(repr(float(v)) for v in self.theta_hat.values)]


def canonicalize(theta, layout) -> ParamVector:
    """Sort hidden-state blocks ascending and conjugate the transition block.

    Poisson blocks order by rate, Gaussian blocks lexicographically by mean
    vector; already-sorted parameters are returned bitwise unchanged.
    """
    values = np.asarray(theta, dtype=float)
    if layout.kind == "poisson":
        rates, trans = unpack(values, layout)
        order = np.argsort(rates, kind="stable")
        if np.array_equal(order, np.arange(layout.n_states)):
            return ParamVector(values, layout)
        return pack((rates[order], trans[np.ix_(order, order)]), layout)
    means, scale, trans = unpack(values, layout)
    order = np.lexsort(means.T[::-1])
    if np.array_equal(order, np.arange(layout.n_states)):
        return ParamVector(values, layout)
    return pack((means[order], scale[order], trans[np.ix_(order, order)]), layout)


def _objective(kind, model, obs, nu_w, space, consts):
    trans_slice = model.layout.transition_slice
    k = model.n_states
    loglik = log_q if kind == "qmle" else log_p

    def negative(v):
        _, valid = complete_transition_rows(v[trans_slice], k, space.eps_p)
        if not valid:
            return np.inf
        value = loglik(model, v, nu_w, obs, consts)
        if np.isnan(value):
            raise NonFinite("objective returned NaN", theta=np.array(v))
        return -value

    return negative


def _start_points(space: ParamSpace, cfg: OptimizerConfig, model, extra_starts):
    d = space.dim
    points = [space.center]
    if cfg.n_starts > 1:
        sampler = qmc.LatinHypercube(d=d, seed=cfg.seed)
        unit = sampler.random(cfg.n_starts - 1)
        points.extend(space.lower + unit * (space.upper - space.lower))
    for w in extra_starts:
        points.append(space.project(np.asarray(w, dtype=float)))
    trans_slice = model.layout.transition_slice
    # The box center itself can violate the derived-row constraint for K >= 3;
    # infeasible points shrink toward uniform transition rows instead.
    anchor = np.array(space.center, dtype=float)
    anchor[trans_slice] = np.clip(
        1.0 / model.n_states, space.lower[trans_slice], space.upper[trans_slice]
    )
    fixed = []
    for p in points:
        p = np.array(p, dtype=float)
        for _ in range(64):
            _, valid = complete_transition_rows(p[trans_slice], model.n_states, space.eps_p)
            if valid:
                break
            p = anchor + 0.9 * (p - anchor)
        fixed.append(p)
    return fixed


def fit(kind, model, obs, nu, space: ParamSpace, cfg: OptimizerConfig, extra_starts=()) -> FitResult:
    """Maximize the selected likelihood over the box; deterministic given cfg.seed."""
    kind = kind.lower()
    if kind not in ESTIMATOR_KINDS:
        raise InvalidParams(f"estimator kind must be one of {ESTIMATOR_KINDS}")
    obs = np.asarray(obs)
    if obs.shape[0] == 0:
        raise DimensionMismatch("observation sequence must be nonempty")
    nu_w = np.asarray(nu, dtype=float)
    consts = model.emission_constants(obs)
    negative = _objective(kind, model, obs, nu_w, space, consts)
    starts = _start_points(space, cfg, model, extra_starts)
    bounds = list(zip(space.lower, space.upper))

    d = space.dim
    coarse_options = {
        "maxiter": min(cfg.max_iters, max(100 * d, 200)),
        "xatol": max(cfg.param_tol, 1e-3),
        "fatol": max(cfg.value_tol, 1e-3),
    }
    # inf - inf inside the simplex convergence test is benign (fully
    # penalized simplices) and surfaces as a RuntimeWarning otherwise.
    with np.errstate(invalid="ignore"):
        coarse = [
            optimize.minimize(
                negative, p, method="Nelder-Mead", bounds=bounds, options=coarse_options
            )
            for p in starts
        ]
    finite = [i for i, res in enumerate(coarse) if np.isfinite(res.fun)]
    if not finite:
        raise AllStartsFailed(f"all {len(starts)} optimizer starts returned -inf")

    results = list(coarse)
    iterations = [int(res.nit) for res in coarse]
    traces = [() for _ in coarse]
    finite.sort(key=lambda i: coarse[i].fun)
    for i in finite[: max(1, cfg.polish_starts)]:
        trace: list = []
        callback = None
        if cfg.keep_trace:
            def callback(intermediate, _trace=trace):
                _trace.append((np.array(intermediate.x), -float(intermediate.fun)))

        with np.errstate(invalid="ignore"):
            res = optimize.minimize(
                negative,
                coarse[i].x,
                method="Nelder-Mead",
                bounds=bounds,
                callback=callback,
                options={
                    "maxiter": cfg.max_iters,
                    "xatol": cfg.param_tol,
                    "fatol": cfg.value_tol,
                },
            )
        results[i] = res
        iterations[i] += int(res.nit)
        traces[i] = tuple(trace)

    def sort_key(i):
        canon = canonicalize(results[i].x, model.layout)
        return (results[i].fun, tuple(canon.values))

    best = min(finite, key=sort_key)
    best_res = results[best]
    theta_hat = canonicalize(best_res.x, model.layout)
    log_lik = -negative(theta_hat.values)
    return FitResult(
        kind=kind,
        theta_hat=theta_hat,
        log_lik=float(log_lik),
        starts=len(starts),
        best_start_index=best,
        iterations=iterations[best],
        converged=bool(best_res.success),
        start_optima=tuple(-res.fun for res in results),
        trace=traces[best] if cfg.keep_trace else None,
    )


@dataclass(frozen=True, eq=False)
class ErrorTracePoint:
    n: int
    error: float
    result: Optional[FitResult]
    message: str = ""


def error_trace(kind, model, theta_star, traj, grid, nu, space, cfg, obs=None):
    """Fit on growing observation prefixes and report canonical Euclidean errors.

    Each grid point reuses the previous estimate as a warm start on top of the
    configured restarts.  Fit failures are recorded per grid point rather than
    raised.  obs overrides the fitted sequence (the hybrid pipeline fits on a
    transformed copy of traj.z).
    """
    grid = [int(n) for n in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise DimensionMismatch("grid must be strictly ascending")
    data = np.asarray(traj.z if obs is None else obs)
    if grid and grid[-1] > data.shape[0]:
        raise DimensionMismatch("grid exceeds trajectory length")
    target = canonicalize(theta_star, model.layout).values
    points = []
    warm = None
    for n in grid:
        extra = (warm,) if warm is not None else ()
        try:
            res = fit(kind, model, data[:n], nu, space, cfg, extra_starts=extra)
        except (AllStartsFailed, NonFinite) as exc:
            points.append(ErrorTracePoint(n=n, error=float("nan"), result=None, message=str(exc)))
            continue
        err = float(np.linalg.norm(res.theta_hat.values - target))
        points.append(ErrorTracePoint(n=n, error=err, result=res))
        warm = res.theta_hat.values
    return points
