"""Maximum likelihood estimation of (lam, mu) by Nelder--Mead.

The optimizer is a standard simplex method with coefficients
(1, 2, 0.5, 0.5); positivity of the rates is enforced by searching in
log-parameter space.  The replication harness refits many simulated
trajectories and labels each with its extinction behavior: never
extinct, extinct during the transient (before first reaching K/2), or
extinct after reaching the quasi-stationary range.

``GrowthMLE`` wraps the same machinery in a scikit-learn style
estimator so it composes with the usual tooling (get_params/set_params,
clone, check_is_fitted).
"""

import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator

from ._rng import derive_seed
from .exceptions import ConfigError, NumericalError
from .fpe import Grid
from .likelihood import LikelihoodSettings, neg_log_likelihood
from .model import Params
from .simulate import ObservationSeries, Trajectory, simulate_em


@dataclass
class OptimOptions:
    """Nelder--Mead controls.

    ``simplex_scale`` sets the initial vertex displacements per
    coordinate (in log-parameter space when positivity="log");
    termination is on the simplex spread of objective values or on the
    evaluation budget.
    """

    simplex_scale: float = 0.25
    max_evals: int = 400
    f_tol: float = 1e-8
    positivity: str = "log"
    record_trace: bool = True

    def __post_init__(self):
        if self.f_tol <= 0:
            raise ConfigError("f_tol must be positive")
        if self.positivity not in ("log", "none"):
            raise ConfigError("positivity mode must be 'log' or 'none'")


@dataclass
class FitResult:
    theta_hat: np.ndarray
    nll_at_min: float
    n_evaluations: int
    converged: bool
    trace: Optional[list] = field(default=None, repr=False)
    params_hat: Optional[Params] = None


def nelder_mead(objective, theta_init, opts: OptimOptions = None):
    """Minimize ``objective`` from ``theta_init`` with a standard simplex.

    With positivity="log" the search runs in u = log(theta), so every
    iterate stays strictly positive; objective values that come back NaN
    abort with the offending point attached.
    """
    opts = opts or OptimOptions()
    theta_init = np.atleast_1d(np.asarray(theta_init, dtype=float))
    dim = theta_init.size
    if opts.max_evals < dim + 1:
        raise ConfigError("max_evals must be at least dimension + 1")

    log_space = opts.positivity == "log"
    if log_space:
        if np.any(theta_init <= 0):
            raise ConfigError("log-space optimization needs a positive start")
        decode = np.exp
        x0 = np.log(theta_init)
    else:
        decode = lambda u: u
        x0 = theta_init.copy()

    n_evals = 0

    def f(u):
        nonlocal n_evals
        n_evals += 1
        value = float(objective(decode(u)))
        if np.isnan(value):
            raise NumericalError(
                f"objective returned NaN at theta={decode(u)!r}"
            )
        return value

    scale = np.broadcast_to(np.asarray(opts.simplex_scale, dtype=float), (dim,))
    simplex = [x0.copy()]
    for i in range(dim):
        v = x0.copy()
        v[i] += scale[i]
        simplex.append(v)
    fvals = [f(v) for v in simplex]

    trace = [] if opts.record_trace else None
    converged = False
    while n_evals < opts.max_evals:
        order = np.argsort(fvals, kind="stable")
        simplex = [simplex[i] for i in order]
        fvals = [fvals[i] for i in order]
        if trace is not None:
            trace.append((decode(simplex[0]).copy(), fvals[0]))
        if fvals[-1] - fvals[0] < opts.f_tol:
            converged = True
            break

        centroid = np.mean(simplex[:-1], axis=0)
        worst = simplex[-1]
        xr = centroid + 1.0 * (centroid - worst)
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
            else:
                xc = centroid + 0.5 * (worst - centroid)
            fc = f(xc)
            if fc < min(fr, fvals[-1]):
                simplex[-1], fvals[-1] = xc, fc
            else:
                best = simplex[0]
                for i in range(1, dim + 1):
                    simplex[i] = best + 0.5 * (simplex[i] - best)
                    fvals[i] = f(simplex[i])

    order = np.argsort(fvals, kind="stable")
    best = simplex[order[0]]
    return FitResult(
        theta_hat=decode(best),
        nll_at_min=fvals[order[0]],
        n_evaluations=n_evals,
        converged=converged,
        trace=trace,
    )


def fit(obs: ObservationSeries, settings: LikelihoodSettings, theta_init: Params,
        opts: OptimOptions = None, free=("lam", "mu")):
    """Minimize the negative log-likelihood over the ``free`` parameters.

    The remaining coordinates of ``theta_init`` stay fixed.  Monte Carlo
    backends are accepted but their evaluation noise misleads the
    simplex search, so a warning is emitted; estimation experiments use
    the finite-difference backend.
    """
    opts = opts or OptimOptions()
    if settings.backend != "finite-difference":
        warnings.warn(
            "a Monte Carlo backend drives the optimizer; evaluation noise can "
            "strand the simplex search",
            RuntimeWarning,
            stacklevel=2,
        )

    def objective(vec):
        theta = theta_init.replace(**dict(zip(free, vec)))
        return neg_log_likelihood(theta, obs, settings).value

    x0 = np.array([getattr(theta_init, name) for name in free])
    result = nelder_mead(objective, x0, opts)
    result.params_hat = theta_init.replace(**dict(zip(free, result.theta_hat)))
    return result


def classify_extinction(traj: Trajectory, p: Params):
    """'never', 'during_transient' or 'after_stationarity'.

    Transient means the path died before first reaching K/2, the halfway
    point to the carrying capacity.
    """
    threshold = 0.5 * p.carrying_capacity
    zero = np.flatnonzero(traj.states == 0.0)
    if zero.size == 0:
        return "never"
    reached = np.any(traj.states[: zero[0]] >= threshold)
    return "after_stationarity" if reached else "during_transient"


@dataclass
class ReplicateScenario:
    """Ground truth and fitting configuration for the replication study."""

    params: Params
    x0: float
    horizon: float
    delta_sim: float
    delta_obs: float
    settings: LikelihoodSettings
    theta_init: Params
    opts: OptimOptions = field(default_factory=OptimOptions)
    free: tuple = ("lam", "mu")


@dataclass
class ReplicateRow:
    rep: int
    lambda_hat: float
    mu_hat: float
    nll: float
    extinction_class: str
    converged: bool
    n_evaluations: int
    error: Optional[str] = None


def _one_replicate(scenario: ReplicateScenario, rep, seed):
    traj = simulate_em(scenario.params, scenario.x0, scenario.horizon,
                       scenario.delta_sim, seed=seed)
    label = classify_extinction(traj, scenario.params)
    try:
        obs = ObservationSeries.from_trajectory(traj, scenario.delta_obs)
        settings = replace(scenario.settings, rng_seed=derive_seed(seed, 1))
        result = fit(obs, settings, scenario.theta_init, scenario.opts,
                     free=scenario.free)
        lam_hat, mu_hat = result.theta_hat[0], result.theta_hat[1]
        return ReplicateRow(
            rep=rep, lambda_hat=float(lam_hat), mu_hat=float(mu_hat),
            nll=result.nll_at_min, extinction_class=label,
            converged=result.converged, n_evaluations=result.n_evaluations,
        )
    except Exception as exc:  # individual fit failures are recorded, not fatal
        return ReplicateRow(
            rep=rep, lambda_hat=float("nan"), mu_hat=float("nan"),
            nll=float("nan"), extinction_class=label, converged=False,
            n_evaluations=0, error=str(exc),
        )


def replicate(scenario: ReplicateScenario, n_reps, master_seed=0, n_jobs=1):
    """Simulate, sample and fit ``n_reps`` independent trajectories.

    Each replicate owns a seed derived from the master seed, so the
    output is reproducible for any ``n_jobs``.
    """
    if n_reps < 1:
        raise ConfigError("n_reps must be >= 1")
    seeds = [derive_seed(master_seed, r) for r in range(n_reps)]
    if n_jobs == 1:
        return [_one_replicate(scenario, r, s) for r, s in enumerate(seeds)]
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_one_replicate)(scenario, r, s) for r, s in enumerate(seeds)
    )
    return list(rows)


def as_observation_series(X, delta_obs=None):
    """Validate fit input: an ObservationSeries, or values plus a spacing."""
    if isinstance(X, ObservationSeries):
        return X
    if delta_obs is None:
        raise ConfigError(
            "passing raw observation values requires delta_obs (the spacing)"
        )
    return ObservationSeries(delta_obs=float(delta_obs), values=np.asarray(X, dtype=float))


class GrowthMLE(BaseEstimator):
    """Maximum likelihood estimator for the birth and death rates.

    Fits (lam, mu) of the stochastic logistic growth model to a
    discretely observed trajectory, holding alpha and rho fixed.  The
    fitted attributes are ``lambda_hat_``, ``mu_hat_``, ``params_hat_``,
    ``nll_``, ``converged_`` and ``n_evaluations_``.

    Parameters mirror the library configuration: the likelihood backend
    (finite-difference by default), its inner time step and grid bounds,
    Monte Carlo particle counts, and the simplex controls.
    """

    def __init__(self, lam_init=15.0, mu_init=13.0, alpha=1.0, rho=0.1,
                 delta_obs=None, backend="finite-difference", h=1e-3, delta=1e-3,
                 x_max=None, n_paths=500, rng_seed=0, floor=1e-300,
                 simplex_scale=0.25, max_evals=400, f_tol=1e-8):
        self.lam_init = lam_init
        self.mu_init = mu_init
        self.alpha = alpha
        self.rho = rho
        self.delta_obs = delta_obs
        self.backend = backend
        self.h = h
        self.delta = delta
        self.x_max = x_max
        self.n_paths = n_paths
        self.rng_seed = rng_seed
        self.floor = floor
        self.simplex_scale = simplex_scale
        self.max_evals = max_evals
        self.f_tol = f_tol

    def _settings(self, theta0, obs):
        grid = None
        if self.backend == "finite-difference":
            grid = Grid.for_model(theta0, x0=float(np.max(obs.values)), h=self.h,
                                  x_max=self.x_max)
        return LikelihoodSettings(
            backend=self.backend, grid=grid, delta=self.delta,
            n_paths=self.n_paths, rng_seed=self.rng_seed, floor=self.floor,
        )

    def fit(self, X, y=None):
        obs = as_observation_series(X, self.delta_obs)
        theta0 = Params(self.lam_init, self.mu_init, self.alpha, self.rho)
        settings = self._settings(theta0, obs)
        opts = OptimOptions(simplex_scale=self.simplex_scale,
                            max_evals=self.max_evals, f_tol=self.f_tol)
        result = fit(obs, settings, theta0, opts)
        self.lambda_hat_ = float(result.theta_hat[0])
        self.mu_hat_ = float(result.theta_hat[1])
        self.params_hat_ = result.params_hat
        self.nll_ = result.nll_at_min
        self.converged_ = result.converged
        self.n_evaluations_ = result.n_evaluations
        self.result_ = result
        return self

    def score(self, X, y=None):
        """Log-likelihood of ``X`` under the fitted parameters (higher is better)."""
        obs = as_observation_series(X, self.delta_obs)
        settings = self._settings(self.params_hat_, obs)
        return -neg_log_likelihood(self.params_hat_, obs, settings).value
