import math

import numpy as np
import pytest

import dhmm.diagnostics as diag_mod
from dhmm.core import ParamSpace, stationary_distribution, unpack
from dhmm.diagnostics import (
    ConditionReport,
    c2_poisson_closed_form,
    check_c1,
    check_c2,
    check_c2_gaussian,
    check_c2_poisson,
    check_c3,
    check_structural,
    mc_c2_poisson,
    score_diagnostics,
    score_fd,
)
from dhmm.exceptions import InvalidParams, StepTooLarge, WrongModelKind
from dhmm.models import (
    CounterexampleDhmm,
    GaussianDhmm,
    NoiseSchedule,
    PoissonDhmm,
    zero_schedule,
)
from dhmm.simulate import simulate

FIG3_THETA = np.array([10.0, 20.0, 0.8, 0.1])
FIG5_THETA = np.array([0.0, 4.0, 0.5, 0.5, 0.4, 0.5])


def fig3_model():
    return PoissonDhmm(2, NoiseSchedule(40.0, 1.01))


def fig5_model():
    return GaussianDhmm(2, NoiseSchedule(10.0, 0.75))


def counterexample_model():
    return CounterexampleDhmm(1, NoiseSchedule(0.0, 1.0, 0.5), 1)


class TestC2Poisson:
    def test_zero_noise_value_is_one(self):
        model = PoissonDhmm(2, zero_schedule())
        np.testing.assert_array_equal(c2_poisson_closed_form(model, FIG3_THETA, 5), [1.0, 1.0])

    def test_settles_at_one_for_vanishing_noise(self):
        rep = check_c2_poisson(fig3_model(), FIG3_THETA)
        assert rep.status == "verified-numeric"
        values = [v for _, v in rep.evidence]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert abs(c2_poisson_closed_form(fig3_model(), FIG3_THETA, 10**6).max() - 1.0) < 1e-3

    def test_floor_schedule_is_violated(self):
        model = PoissonDhmm(2, NoiseSchedule(0.0, 1.0, 40.0))
        rep = check_c2_poisson(model, FIG3_THETA)
        assert rep.status == "violated"
        assert all(v > 1e10 for _, v in rep.evidence)

    def test_closed_form_agrees_with_monte_carlo(self):
        model = fig3_model()
        for t in (10, 1000):
            for s in (1, 2):
                est, se = mc_c2_poisson(model, FIG3_THETA, t, s, samples=20_000, seed=3)
                want = c2_poisson_closed_form(model, FIG3_THETA, t)[s - 1]
                assert abs(est - want) <= 3.0 * se

    def test_wrong_model_kind(self):
        with pytest.raises(WrongModelKind):
            check_c2_poisson(fig5_model(), FIG5_THETA)


class TestC2Gaussian:
    def test_zero_noise_ratio_is_exactly_one(self):
        model = GaussianDhmm(1, zero_schedule())
        rep = check_c2_gaussian(model, np.array([0.0, 1.0]), n_grid=(10,), mc_samples=500, seed=0)
        assert rep.status == "verified-numeric"
        assert rep.evidence[0][1] == pytest.approx(1.0, abs=0)

    def test_vanishing_noise_settles_at_one(self):
        rep = check_c2_gaussian(fig5_model(), FIG5_THETA, mc_samples=100_000, seed=0)
        assert rep.status == "verified-numeric"
        at_1e4 = dict(rep.evidence)[10_000]
        assert 1.0 <= at_1e4 <= 1.05

    def test_noise_floor_is_violated(self):
        rep = check_c2_gaussian(counterexample_model(), np.array([0.0, 1.0]), mc_samples=100_000, seed=0)
        assert rep.status == "violated"
        est = rep.evidence[-1][1]
        # Analytic limit at floor b=0.5, unit scale: the ratio is
        # sqrt(1/(1+b^2)) exp(c Z^2) with Z ~ N(0, 1+b^2) and 2c(1+b^2) = b^2,
        # so the expectation is sqrt(1/(1+b^2)) (1-b^2)^(-1/2).
        want = math.sqrt(1.0 / 1.25) / math.sqrt(1.0 - 0.25)
        assert est == pytest.approx(want, abs=0.01)

    def test_dispatch_by_kind(self):
        assert check_c2(fig3_model(), FIG3_THETA).status == "verified-numeric"
        assert check_c2(counterexample_model(), np.array([0.0, 1.0]), seed=1).status == "violated"


class TestC1:
    def test_vanishing_poisson_noise_verified(self):
        rep = check_c1(fig3_model(), FIG3_THETA)
        assert rep.status == "verified-numeric"
        slope = float(rep.notes.split()[-1])
        assert slope == pytest.approx(-1.01, abs=1e-3)

    def test_gaussian_markov_bound_slope(self):
        # exponent 0.75 gives moment order 4 and therefore slope -3.
        rep = check_c1(fig5_model(), FIG5_THETA)
        assert rep.status == "verified-numeric"
        slope = float(rep.notes.split()[-1])
        assert slope == pytest.approx(-3.0, abs=1e-6)

    def test_constant_noise_violated(self):
        rep = check_c1(counterexample_model(), np.array([0.0, 1.0]))
        assert rep.status == "violated"

    def test_zero_schedule_trivially_verified(self):
        rep = check_c1(PoissonDhmm(2, zero_schedule()), FIG3_THETA)
        assert rep.status == "verified-numeric"


class TestC3:
    def test_reported_not_checkable(self):
        rep = check_c3(fig3_model(), FIG3_THETA)
        assert rep.status == "not-checkable"

    def test_gaussian_spot_checks_add_evidence(self):
        rep = check_c3(
            fig5_model(),
            FIG5_THETA,
            theta_spots=(FIG5_THETA + 0.3,),
            n_grid=(10_000,),
            mc_samples=5_000,
            seed=0,
        )
        assert rep.status == "not-checkable"
        assert rep.evidence


class TestScoreFiniteDifferences:
    def test_matches_analytic_normal_score(self):
        model = GaussianDhmm(1, zero_schedule())
        theta = np.array([0.0, 1.0])
        traj = simulate(model, theta, 2000, seed=5, nu=np.array([1.0]))
        got = score_fd(model, theta, traj.z, np.array([1.0]))
        z = traj.z
        mu, sigma = theta
        want = np.array(
            [np.sum(z - mu) / sigma**2, np.sum((z - mu) ** 2) / sigma**3 - z.size / sigma]
        )
        np.testing.assert_allclose(got, want, rtol=1e-4)

    def test_quadratic_function_is_differentiated_exactly(self, monkeypatch):
        a = np.array([[2.0, 0.5], [0.5, 3.0]])
        b = np.array([1.0, -2.0])

        def quadratic(model, theta, nu, obs, consts=None):
            theta = np.asarray(theta)
            return float(-0.5 * theta @ a @ theta + b @ theta)

        monkeypatch.setattr(diag_mod, "log_q", quadratic)
        model = GaussianDhmm(1, zero_schedule())
        theta = np.array([0.3, 1.7])
        got = score_fd(model, theta, np.zeros(3), np.array([1.0]))
        np.testing.assert_allclose(got, -a @ theta + b, atol=1e-6)

    def test_forward_and_central_schemes_agree(self):
        model = PoissonDhmm(2, NoiseSchedule(40.0, 1.01))
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        traj = simulate(model, FIG3_THETA, 400, seed=2)
        h = 1e-5
        central = score_fd(model, FIG3_THETA, traj.z, pi, h=h, scheme="central")
        forward = score_fd(model, FIG3_THETA, traj.z, pi, h=h, scheme="forward")
        scale = np.abs(central) + 1.0
        assert np.all(np.abs(central - forward) <= 10.0 * h * scale * np.abs(central + 1))

    def test_flat_function_raises_step_too_large(self, monkeypatch):
        monkeypatch.setattr(diag_mod, "log_q", lambda *a, **k: 1.0)
        model = GaussianDhmm(1, zero_schedule())
        with pytest.raises(StepTooLarge):
            score_fd(model, np.array([0.0, 1.0]), np.zeros(3), np.array([1.0]))


class TestScoreDiagnostics:
    def test_fig3_matrices_are_positive_definite(self):
        model = fig3_model()
        pi = np.asarray(stationary_distribution(unpack(FIG3_THETA, model.layout)[1]))
        obs_list = [simulate(model, FIG3_THETA, 500, seed=s).z for s in range(30)]
        diag = score_diagnostics(model, FIG3_THETA, obs_list, pi)
        assert np.max(np.abs(diag.G_n - diag.G_n.T)) <= 1e-8
        assert np.max(np.abs(diag.F_n - diag.F_n.T)) <= 1e-8
        assert diag.lambda_min_G > 0
        assert diag.lambda_min_F > 0
        assert diag.mean_score_scaled >= 0
        assert diag.n == 500 and diag.replications == 30

    def test_requires_common_length(self):
        model = fig3_model()
        with pytest.raises(InvalidParams):
            score_diagnostics(model, FIG3_THETA, [np.ones(5, int), np.ones(6, int)], np.array([0.5, 0.5]))

    def test_interior_requirement(self):
        model = fig3_model()
        space = ParamSpace(
            np.array([10.0, 0.1, 0.01, 0.01]),
            np.array([100.0, 100.0, 0.99, 0.99]),
            model.layout,
        )
        with pytest.raises(InvalidParams):
            score_diagnostics(
                model, FIG3_THETA, [np.ones(5, int)], np.array([0.5, 0.5]), space=space
            )

    def test_csv_rows_shape(self):
        model = fig3_model()
        pi = np.array([0.5, 0.5])
        obs_list = [simulate(model, FIG3_THETA, 50, seed=s).z for s in range(3)]
        diag = score_diagnostics(model, FIG3_THETA, obs_list, pi)
        rows = diag.to_csv_rows()
        assert rows[0] == ["quantity", "i", "j", "value"]
        d = FIG3_THETA.size
        assert len(rows) == 1 + d + 2 * d * d + 5


class TestStructuralChecks:
    def test_reference_model_all_verified(self):
        reports = {r.condition: r for r in check_structural(fig3_model(), FIG3_THETA, seed=0)}
        assert reports["P1"].status == "verified-structural"
        assert reports["P2"].status == "verified-structural"
        assert reports["H3"].status == "verified-structural"
        for name in ("H1", "H2", "H4"):
            assert reports[name].status == "verified-numeric"

    def test_identity_transition_violates_p1(self):
        theta = np.array([10.0, 20.0, 0.99, 0.01])
        # Derived matrix [[0.99, 0.01], [0.01, 0.99]] is irreducible, but the
        # exact identity is not.
        reports = {r.condition: r for r in check_structural(fig3_model(), theta, seed=0)}
        assert reports["P1"].status == "verified-structural"
        identity = np.array([10.0, 20.0, 1.0, 0.0])
        reports = {r.condition: r for r in check_structural(fig3_model(), identity, seed=0)}
        assert reports["P1"].status == "violated"

    def test_gaussian_model_verified(self):
        reports = {r.condition: r for r in check_structural(fig5_model(), FIG5_THETA, seed=0)}
        for name in ("P1", "P2", "H1", "H2", "H3", "H4"):
            assert reports[name].status in ("verified-structural", "verified-numeric")

    def test_deterministic_given_seed(self):
        a = check_structural(fig3_model(), FIG3_THETA, seed=4)
        b = check_structural(fig3_model(), FIG3_THETA, seed=4)
        for ra, rb in zip(a, b):
            assert ra.status == rb.status and ra.evidence == rb.evidence


class TestConditionReportType:
    def test_requires_evidence_or_reason(self):
        with pytest.raises(InvalidParams):
            ConditionReport("C1", "verified-numeric", ())

    def test_csv_rows(self):
        rep = ConditionReport("C1", "verified-numeric", ((10, 0.5), (100, 0.05)), "slope -1")
        rows = rep.to_csv_rows()
        assert rows[0] == ["C1", "verified-numeric", "10", "0.5"]
        assert len(rows) == 2
