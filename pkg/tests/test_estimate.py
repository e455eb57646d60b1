import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.validation import check_is_fitted

from logrowth import (
    ConfigError,
    GrowthMLE,
    LikelihoodSettings,
    NumericalError,
    ObservationSeries,
    OptimOptions,
    Params,
    ReplicateScenario,
    classify_extinction,
    fit,
    nelder_mead,
    replicate,
    simulate_em,
)
from logrowth.estimate import as_observation_series
from logrowth.fpe import Grid
from logrowth.simulate import Trajectory

pytestmark = pytest.mark.filterwarnings("ignore::logrowth.exceptions.HoldingTimeWarning")


class TestNelderMead:
    def test_quadratic_bowl(self):
        res = nelder_mead(lambda th: np.sum((th - np.array([3.0, 4.0])) ** 2),
                          [1.0, 1.0],
                          OptimOptions(f_tol=1e-14, max_evals=800))
        assert res.converged
        assert np.allclose(res.theta_hat, [3.0, 4.0], atol=1e-6)

    def test_rosenbrock_classic_start(self):
        rosen = lambda th: (1 - th[0]) ** 2 + 100.0 * (th[1] - th[0] ** 2) ** 2
        res = nelder_mead(rosen, [-1.2, 1.0],
                          OptimOptions(f_tol=1e-16, max_evals=2000,
                                       positivity="none", simplex_scale=0.5))
        assert res.n_evaluations <= 2000
        assert np.allclose(res.theta_hat, [1.0, 1.0], atol=1e-4)

    def test_log_space_bijection(self):
        f = lambda th: np.sum((th - np.array([3.0, 4.0])) ** 2)
        res = nelder_mead(f, [1.0, 1.0], OptimOptions(f_tol=1e-14, max_evals=800,
                                                      positivity="log"))
        assert np.allclose(res.theta_hat, [3.0, 4.0], atol=1e-6)
        assert np.all(res.theta_hat > 0)

    def test_constant_shift_invariance(self):
        f = lambda th: np.sum((th - np.array([0.5, 2.0])) ** 2)
        a = nelder_mead(f, [1.0, 1.0], OptimOptions(f_tol=1e-13, max_evals=600))
        b = nelder_mead(lambda th: f(th) + 100.0, [1.0, 1.0],
                        OptimOptions(f_tol=1e-13, max_evals=600))
        assert np.array_equal(a.theta_hat, b.theta_hat)
        assert a.n_evaluations == b.n_evaluations

    def test_nan_objective_aborts_with_theta(self):
        # the bowl bottom sits inside the NaN region, so descent must hit it
        def bad(th):
            return float("nan") if th[0] < 1.0 else np.sum(th ** 2)

        with pytest.raises(NumericalError, match="theta"):
            nelder_mead(bad, [1.5, 1.5], OptimOptions(max_evals=400))

    def test_budget_and_convergence_flag(self):
        res = nelder_mead(lambda th: np.sum(th ** 2), [5.0, 5.0],
                          OptimOptions(f_tol=1e-30, max_evals=20))
        assert not res.converged
        assert res.n_evaluations >= 20

    def test_log_space_needs_positive_start(self):
        with pytest.raises(ConfigError):
            nelder_mead(lambda th: np.sum(th ** 2), [-1.0, 1.0], OptimOptions())

    def test_options_validated(self):
        with pytest.raises(ConfigError):
            OptimOptions(f_tol=0.0)
        with pytest.raises(ConfigError):
            nelder_mead(lambda th: 0.0, [1.0, 1.0], OptimOptions(max_evals=2))

    def test_trace_records_descent(self):
        res = nelder_mead(lambda th: np.sum((th - 2.0) ** 2), [1.0, 1.0],
                          OptimOptions(max_evals=300))
        best = np.array([f for _, f in res.trace])
        assert best.size > 1
        assert np.all(np.diff(best) <= 1e-12)  # best vertex never worsens


@pytest.fixture(scope="module")
def short_fit_setup(table1):
    traj = simulate_em(table1, 0.25, 3.0, 1e-3, seed=0)
    obs = ObservationSeries.from_trajectory(traj, 0.05)
    grid = Grid.for_model(table1, x0=0.25, h=2e-3)
    settings = LikelihoodSettings(backend="finite-difference", grid=grid, delta=2e-3)
    return obs, settings


class TestFit:
    def test_recovers_growth_rate(self, table1, short_fit_setup):
        obs, settings = short_fit_setup
        theta0 = table1.replace(lam=15.0, mu=13.0)
        res = fit(obs, settings, theta0,
                  OptimOptions(max_evals=250, f_tol=1e-7))
        assert res.converged
        assert np.all(res.theta_hat > 0)
        r_hat = res.theta_hat[0] - res.theta_hat[1]
        assert abs(r_hat - 2.0) < 0.5
        assert res.params_hat.alpha == table1.alpha
        assert res.params_hat.rho == table1.rho

    def test_deterministic_restart(self, table1, short_fit_setup):
        obs, settings = short_fit_setup
        theta0 = table1.replace(lam=15.0, mu=13.0)
        opts = OptimOptions(max_evals=120, f_tol=1e-6)
        a = fit(obs, settings, theta0, opts)
        b = fit(obs, settings, theta0, opts)
        assert np.array_equal(a.theta_hat, b.theta_hat)
        assert a.nll_at_min == b.nll_at_min

    def test_mc_backend_warns(self, table1, short_fit_setup):
        obs, _ = short_fit_setup
        settings = LikelihoodSettings(backend="pedersen", delta=2e-3, n_paths=30,
                                      rng_seed=3)
        with pytest.warns(RuntimeWarning, match="Monte Carlo"):
            fit(obs, settings, table1.replace(lam=15.0, mu=13.0),
                OptimOptions(max_evals=12, f_tol=1e-3))


class TestClassifier:
    def test_never(self, table1):
        traj = Trajectory(t0=0.0, dt=0.1, states=[0.25, 1.0, 2.0, 2.1])
        assert classify_extinction(traj, table1) == "never"

    def test_during_transient(self, table1):
        traj = Trajectory(t0=0.0, dt=0.1, states=[0.25, 0.5, 0.0, 0.0])
        assert classify_extinction(traj, table1) == "during_transient"

    def test_after_stationarity(self, table1):
        traj = Trajectory(t0=0.0, dt=0.1, states=[0.25, 1.0, 2.0, 0.0])
        assert classify_extinction(traj, table1) == "after_stationarity"


class TestReplicate:
    def test_single_rep_reduces_to_fit(self, table1, short_fit_setup):
        _, settings = short_fit_setup
        scenario = ReplicateScenario(
            params=table1, x0=0.25, horizon=3.0, delta_sim=1e-3, delta_obs=0.05,
            settings=settings, theta_init=table1.replace(lam=15.0, mu=13.0),
            opts=OptimOptions(max_evals=120, f_tol=1e-6, record_trace=False),
        )
        rows = replicate(scenario, 1, master_seed=5)
        assert len(rows) == 1
        row = rows[0]
        assert row.error is None
        assert row.extinction_class in ("never", "during_transient",
                                        "after_stationarity")
        rows_again = replicate(scenario, 1, master_seed=5)
        assert rows_again[0].lambda_hat == row.lambda_hat
        assert rows_again[0].mu_hat == row.mu_hat

    def test_parallel_matches_serial(self, table1, short_fit_setup):
        _, settings = short_fit_setup
        scenario = ReplicateScenario(
            params=table1, x0=0.25, horizon=2.0, delta_sim=1e-3, delta_obs=0.1,
            settings=settings, theta_init=table1.replace(lam=15.0, mu=13.0),
            opts=OptimOptions(max_evals=60, f_tol=1e-5, record_trace=False),
        )
        serial = replicate(scenario, 3, master_seed=9, n_jobs=1)
        parallel = replicate(scenario, 3, master_seed=9, n_jobs=2)
        for a, b in zip(serial, parallel):
            assert a.lambda_hat == b.lambda_hat
            assert a.mu_hat == b.mu_hat
            assert a.extinction_class == b.extinction_class


class TestGrowthMLE:
    def test_sklearn_contract(self):
        est = GrowthMLE(delta_obs=0.05)
        params = est.get_params()
        assert params["lam_init"] == 15.0
        cloned = clone(est)
        assert cloned.get_params() == params
        est.set_params(max_evals=100)
        assert est.get_params()["max_evals"] == 100

    def test_fit_sets_attributes(self, table1):
        traj = simulate_em(table1, 0.25, 2.0, 1e-3, seed=0)
        obs = ObservationSeries.from_trajectory(traj, 0.05)
        est = GrowthMLE(h=2e-3, delta=2e-3, max_evals=120, f_tol=1e-6)
        est.fit(obs)
        check_is_fitted(est)
        assert est.lambda_hat_ > 0 and est.mu_hat_ > 0
        assert np.isfinite(est.nll_)
        assert est.n_evaluations_ > 0
        assert np.isfinite(est.score(obs))

    def test_accepts_raw_values_with_spacing(self, table1):
        traj = simulate_em(table1, 0.25, 2.0, 1e-3, seed=0)
        values = traj.states[::50]
        est = GrowthMLE(delta_obs=0.05, h=2e-3, delta=2e-3, max_evals=80,
                        f_tol=1e-5)
        est.fit(values)
        check_is_fitted(est)

    def test_raw_values_without_spacing_rejected(self):
        with pytest.raises(ConfigError):
            as_observation_series(np.array([0.25, 0.3, 0.4]))
