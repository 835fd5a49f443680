import numpy as np
import pytest

import dhmm.estimate as estimate_mod
from dhmm.core import ParamLayout, ParamSpace, stationary_distribution, unpack
from dhmm.estimate import (
    ErrorTracePoint,
    FitResult,
    OptimizerConfig,
    canonicalize,
    error_trace,
    fit,
)
from dhmm.exceptions import AllStartsFailed, InvalidParams, NonFinite
from dhmm.likelihood import log_q
from dhmm.models import GaussianDhmm, NoiseSchedule, PoissonDhmm, zero_schedule
from dhmm.simulate import simulate

FIG3_THETA = np.array([10.0, 20.0, 0.8, 0.1])


def poisson_space():
    layout = ParamLayout("poisson", 2)
    return ParamSpace(
        np.array([0.1, 0.1, 0.01, 0.01]), np.array([100.0, 100.0, 0.99, 0.99]), layout
    )


class TestCanonicalize:
    def test_sorts_two_rates_and_conjugates(self):
        layout = ParamLayout("poisson", 2)
        got = canonicalize(np.array([20.0, 10.0, 0.8, 0.1]), layout)
        # The conjugated entries pick up derived-column arithmetic (1 - 0.1).
        np.testing.assert_allclose(got.values, [10.0, 20.0, 0.9, 0.2], atol=1e-15)

    def test_sorted_input_unchanged_bitwise(self):
        layout = ParamLayout("poisson", 2)
        got = canonicalize(FIG3_THETA, layout)
        assert np.array_equal(got.values, FIG3_THETA)

    def test_idempotent(self):
        layout = ParamLayout("poisson", 3)
        theta = np.array([30.0, 5.0, 12.0, 0.2, 0.3, 0.1, 0.6, 0.4, 0.5])
        once = canonicalize(theta, layout).values
        twice = canonicalize(once, layout).values
        assert np.array_equal(once, twice)

    def test_gaussian_lexicographic_means(self):
        layout = ParamLayout("gaussian", 2, 1)
        got = canonicalize(np.array([4.0, 0.0, 0.7, 0.5, 0.4, 0.5]), layout)
        np.testing.assert_array_equal(got.values, [0.0, 4.0, 0.5, 0.7, 0.5, 0.6])

    def test_objective_invariant_under_relabeling(self):
        model = PoissonDhmm(2, NoiseSchedule(2.0, 1.0))
        rng = np.random.default_rng(23)
        obs = rng.poisson(13.0, size=150)
        nu = np.array([0.5, 0.5])
        theta = np.array([20.0, 10.0, 0.8, 0.1])
        canon = canonicalize(theta, model.layout).values
        a = log_q(model, theta, nu, obs)
        b = log_q(model, canon, nu, obs)
        assert abs(a - b) <= 1e-12 * abs(a)


class TestClosedFormRecovery:
    def test_gaussian_single_state_matches_sample_moments(self):
        model = GaussianDhmm(1, zero_schedule())
        traj = simulate(model, np.array([0.0, 1.0]), 10_000, seed=55, nu=np.array([1.0]))
        space = ParamSpace(np.array([-20.0, 0.05]), np.array([20.0, 20.0]), model.layout)
        res = fit("qmle", model, traj.z, np.array([1.0]), space, OptimizerConfig(n_starts=4, seed=0))
        mu_hat, sigma_hat = res.theta_hat.values
        assert abs(mu_hat - traj.z.mean()) < 1e-6
        assert abs(sigma_hat - traj.z.std(ddof=0)) < 1e-6
        assert abs(mu_hat) < 0.05 and abs(sigma_hat - 1.0) < 0.05

    def test_poisson_single_state_matches_sample_mean(self):
        model = PoissonDhmm(1, zero_schedule())
        traj = simulate(model, np.array([10.0]), 10_000, seed=56, nu=np.array([1.0]))
        space = ParamSpace(np.array([0.1]), np.array([100.0]), model.layout)
        res = fit("qmle", model, traj.z, np.array([1.0]), space, OptimizerConfig(n_starts=4, seed=0))
        assert abs(res.theta_hat.values[0] - traj.z.mean()) < 1e-5

    def test_noise_floor_biases_vriance_to_limit(self):
        # With a never-vanishing noise floor the quasi-fit settles at the
        # inflated variance, not the generating one.
        model = GaussianDhmm(1, NoiseSchedule(0.0, 1.0, 0.5))
        traj = simulate(model, np.array([0.0, 1.0]), 100_000, seed=5, nu=np.array([1.0]))
        space = ParamSpace(np.array([-20.0, 0.05]), np.array([20.0, 20.0]), model.layout)
        res = fit("qmle", model, traj.z, np.array([1.0]), space, OptimizerConfig(n_starts=4, seed=0))
        assert abs(res.theta_hat.values[1] ** 2 - 1.25) < 0.05


class TestFitInvariants:
    def _fit_once(self, seed=0, kind="qmle"):
        model = PoissonDhmm(2, NoiseSchedule(40.0, 1.01))
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        traj = simulate(model, FIG3_THETA, 800, seed=31)
        cfg = OptimizerConfig(n_starts=4, seed=seed)
        return model, pi, traj, fit(kind, model, traj.z, pi, poisson_space(), cfg)

    def test_estimate_stays_in_box(self):
        _, _, _, res = self._fit_once()
        space = poisson_space()
        assert space.contains(res.theta_hat.values)

    def test_reported_value_is_best_start(self):
        _, _, _, res = self._fit_once()
        assert all(res.log_lik >= v - 1e-9 for v in res.start_optima)
        assert res.starts == 4
        assert 0 <= res.best_start_index < res.starts

    def test_log_lik_matches_reevaluation(self):
        model, pi, traj, res = self._fit_once()
        again = log_q(model, res.theta_hat.values, pi, traj.z)
        assert abs(again - res.log_lik) <= 1e-9

    def test_estimate_is_canonical(self):
        _, _, _, res = self._fit_once()
        again = canonicalize(res.theta_hat.values, res.theta_hat.layout)
        assert np.array_equal(again.values, res.theta_hat.values)

    def test_deterministic_given_seed(self):
        _, _, _, a = self._fit_once(seed=3)
        _, _, _, b = self._fit_once(seed=3)
        assert np.array_equal(a.theta_hat.values, b.theta_hat.values)
        assert a.log_lik == b.log_lik

    def test_zero_noise_estimators_coincide(self):
        model = PoissonDhmm(2, zero_schedule())
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        space = poisson_space()
        rng = np.random.default_rng(9)
        for _ in range(5):
            traj = simulate(model, FIG3_THETA, 300, seed=int(rng.integers(1, 10_000)))
            cfg = OptimizerConfig(n_starts=3, seed=1)
            rq = fit("qmle", model, traj.z, pi, space, cfg)
            rm = fit("mle", model, traj.z, pi, space, cfg)
            assert abs(rq.log_lik - rm.log_lik) <= 1e-9
            assert np.array_equal(rq.theta_hat.values, rm.theta_hat.values)


class TestFitErrors:
    def test_all_starts_failed(self):
        # Stored row entries forced so large that every derived entry is
        # negative: no start can produce a finite objective.
        layout = ParamLayout("poisson", 3)
        space = ParamSpace(
            np.array([0.1, 0.1, 0.1, 0.6, 0.6, 0.6, 0.6, 0.6, 0.6]),
            np.array([100.0, 100.0, 100.0, 0.99, 0.99, 0.99, 0.99, 0.99, 0.99]),
            layout,
        )
        model = PoissonDhmm(3, zero_schedule())
        obs = np.array([5, 6, 7])
        with pytest.raises(AllStartsFailed):
            fit("qmle", model, obs, np.full(3, 1 / 3), space, OptimizerConfig(n_starts=3, seed=0))

    def test_nan_objective_raises_nonfinite(self, monkeypatch):
        monkeypatch.setattr(estimate_mod, "log_q", lambda *a, **k: float("nan"))
        model = PoissonDhmm(2, zero_schedule())
        with pytest.raises(NonFinite):
            fit(
                "qmle",
                model,
                np.array([5, 6]),
                np.array([0.5, 0.5]),
                poisson_space(),
                OptimizerConfig(n_starts=2, seed=0),
            )

    def test_unknown_kind_rejected(self):
        model = PoissonDhmm(2, zero_schedule())
        with pytest.raises(InvalidParams):
            fit("map", model, np.array([5]), np.array([0.5, 0.5]), poisson_space(), OptimizerConfig())


class TestErrorTrace:
    def test_single_point_equals_fit_plus_norm(self):
        model = PoissonDhmm(2, NoiseSchedule(40.0, 1.01))
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        traj = simulate(model, FIG3_THETA, 600, seed=41)
        cfg = OptimizerConfig(n_starts=3, seed=2)
        points = error_trace("qmle", model, FIG3_THETA, traj, [600], pi, poisson_space(), cfg)
        res = fit("qmle", model, traj.z, pi, poisson_space(), cfg)
        target = canonicalize(FIG3_THETA, model.layout).values
        assert points[0].n == 600
        assert points[0].error == pytest.approx(
            float(np.linalg.norm(res.theta_hat.values - target)), abs=1e-12
        )

    def test_perfect_estimates_give_zero_trace(self, monkeypatch):
        model = PoissonDhmm(2, NoiseSchedule(40.0, 1.01))
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        traj = simulate(model, FIG3_THETA, 300, seed=43)
        perfect = FitResult(
            kind="qmle",
            theta_hat=canonicalize(FIG3_THETA, model.layout),
            log_lik=0.0,
            starts=1,
            best_start_index=0,
            iterations=0,
            converged=True,
        )
        monkeypatch.setattr(estimate_mod, "fit", lambda *a, **k: perfect)
        points = estimate_mod.error_trace(
            "qmle", model, FIG3_THETA, traj, [100, 300], pi, poisson_space(), OptimizerConfig()
        )
        assert all(pt.error == 0.0 for pt in points)

    def test_error_shrinks_with_more_data(self):
        model = PoissonDhmm(2, NoiseSchedule(40.0, 1.01))
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        space = poisson_space()
        wins = 0
        for seed in (101, 102, 103, 104, 105):
            traj = simulate(model, FIG3_THETA, 5000, seed=seed)
            cfg = OptimizerConfig(n_starts=4, seed=seed)
            pts = error_trace("qmle", model, FIG3_THETA, traj, [500, 5000], pi, space, cfg)
            wins += pts[1].error < pts[0].error
        assert wins >= 4

    def test_grid_validation(self):
        model = PoissonDhmm(2, zero_schedule())
        traj = simulate(model, FIG3_THETA, 100, seed=1)
        pi = np.array([0.5, 0.5])
        with pytest.raises(Exception):
            error_trace("qmle", model, FIG3_THETA, traj, [50, 50], pi, poisson_space(), OptimizerConfig())
        with pytest.raises(Exception):
            error_trace("qmle", model, FIG3_THETA, traj, [50, 200], pi, poisson_space(), OptimizerConfig())


class TestFitResultSerialization:
    def _result(self):
        model = PoissonDhmm(2, zero_schedule())
        traj = simulate(model, FIG3_THETA, 120, seed=77)
        pi = np.array([0.5, 0.5])
        return fit("qmle", model, traj.z, pi, poisson_space(), OptimizerConfig(n_starts=2, seed=0))

    def test_text_record_fields(self):
        res = self._result()
        text = res.to_text()
        record = dict(line.split(" = ", 1) for line in text.strip().splitlines())
        assert record["kind"] == "qmle"
        assert record["converged"] in ("true", "false")
        values = np.array([float(v) for v in record["theta_hat"].split(",")])
        np.testing.assert_array_equal(values, res.theta_hat.values)
        assert float(record["log_lik"]) == res.log_lik

    def test_csv_row_aligns_with_header(self):
        res = self._result()
        header = FitResult.csv_header()
        row = res.to_csv_row()
        assert len(header) == len(row)
        assert row[0] == "qmle"
        assert float(row[1]) == res.log_lik
