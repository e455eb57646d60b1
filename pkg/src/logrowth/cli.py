"""Command-line front end: seeded experiment commands emitting plot-ready CSV.

Commands: simulate, fpe, kernel, nll-surface, fit, replicate.  Global
flags: --config PATH (flat ``block.key = value`` text), --seed (overrides
the config seed), --out DIR.  Exit codes: 0 success, 2 configuration
error, 3 numerical failure.  Every command validates its whole
configuration before writing anything; each output CSV comes with a
one-line recipe file naming the columns to plot.
"""

import argparse
import csv
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .estimate import (
    OptimOptions,
    ReplicateScenario,
    fit as fit_mle,
    replicate as run_replicates,
)
from .exceptions import ConfigError, NumericalError
from .fpe import Grid, solve_evolution, solve_kernel
from .kernels import kernel_replicates
from .likelihood import BACKENDS, LikelihoodSettings, neg_log_likelihood
from .model import Params
from .simulate import (
    ObservationSeries,
    ensemble_to_csv,
    extinction_frequency,
    simulate_em,
    simulate_em_ensemble,
)


@dataclass
class ExperimentConfig:
    # model block
    lam: float = 20.0
    mu: float = 18.0
    alpha: float = 1.0
    rho: float = 0.1
    x0: float = 0.25
    horizon: float = 10.0
    # simulation block
    h: float = 1e-3
    delta: float = 1e-3
    n_paths: int = 200
    n_particles: int = 500
    x_max: float = None
    seed: int = 0
    record_every: int = 1
    # observation block
    delta_obs: float = 0.05
    m_obs: int = 200
    # fit block
    backend: str = "finite-difference"
    lambda_init: float = 15.0
    mu_init: float = 13.0
    max_evals: int = 400
    f_tol: float = 1e-8
    simplex_scale: float = 0.25
    floor: float = 1e-300
    # kernel block
    kernel_x: float = 0.25
    kernel_delta_obs: float = 1.0
    kernel_y: tuple = (0.0, 1.5, 2.0, 2.5)
    kernel_replicates: int = 200
    kernel_methods: tuple = ("pedersen", "bridge-modified")
    # surface block
    lambda_min: float = 18.0
    lambda_max: float = 22.0
    lambda_steps: int = 9
    mu_min: float = 16.0
    mu_max: float = 20.0
    mu_steps: int = 9
    # fpe block
    n_snapshots: int = 50
    # replicate block
    n_reps: int = 100
    n_jobs: int = 1

    def params(self):
        return Params(self.lam, self.mu, self.alpha, self.rho)

    def grid(self):
        return Grid.for_model(self.params(), self.x0, self.h, self.x_max)


def _parse_float_list(text):
    return tuple(float(v) for v in text.split(","))


def _parse_str_list(text):
    return tuple(v.strip() for v in text.split(","))


_KEY_MAP = {
    "model.lambda": ("lam", float),
    "model.mu": ("mu", float),
    "model.alpha": ("alpha", float),
    "model.rho": ("rho", float),
    "model.x0": ("x0", float),
    "model.T": ("horizon", float),
    "simulation.h": ("h", float),
    "simulation.delta": ("delta", float),
    "simulation.n_paths": ("n_paths", int),
    "simulation.n_particles": ("n_particles", int),
    "simulation.x_max": ("x_max", float),
    "simulation.seed": ("seed", int),
    "simulation.record_every": ("record_every", int),
    "observation.Delta": ("delta_obs", float),
    "observation.M": ("m_obs", int),
    "fit.backend": ("backend", str),
    "fit.lambda_init": ("lambda_init", float),
    "fit.mu_init": ("mu_init", float),
    "fit.max_evals": ("max_evals", int),
    "fit.f_tol": ("f_tol", float),
    "fit.simplex_scale": ("simplex_scale", float),
    "fit.floor": ("floor", float),
    "kernel.x": ("kernel_x", float),
    "kernel.Delta": ("kernel_delta_obs", float),
    "kernel.y": ("kernel_y", _parse_float_list),
    "kernel.n_replicates": ("kernel_replicates", int),
    "kernel.methods": ("kernel_methods", _parse_str_list),
    "surface.lambda_min": ("lambda_min", float),
    "surface.lambda_max": ("lambda_max", float),
    "surface.lambda_steps": ("lambda_steps", int),
    "surface.mu_min": ("mu_min", float),
    "surface.mu_max": ("mu_max", float),
    "surface.mu_steps": ("mu_steps", int),
    "fpe.n_snapshots": ("n_snapshots", int),
    "replicate.n_reps": ("n_reps", int),
    "replicate.n_jobs": ("n_jobs", int),
}


def parse_config(text):
    """Parse ``block.key = value`` lines; '#' starts a comment."""
    config = ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'block.key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        attr, cast = _KEY_MAP[key]
        try:
            setattr(config, attr, cast(value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return config


def load_config(path, seed_override=None):
    if path is None:
        config = ExperimentConfig()
    else:
        config = parse_config(Path(path).read_text())
    if seed_override is not None:
        config.seed = seed_override
    validate_config(config)
    return config


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def validate_config(config):
    """Check positivity and divisibility constraints before any work starts."""
    config.params()  # positivity of the rates
    _require(config.x0 >= 0, "model.x0 must be non-negative")
    _require(config.horizon > 0, "model.T must be positive")
    _require(config.h > 0, "simulation.h must be positive")
    _require(config.delta > 0, "simulation.delta must be positive")
    _require(config.n_paths >= 1, "simulation.n_paths must be >= 1")
    _require(config.n_particles >= 1, "simulation.n_particles must be >= 1")
    _require(config.record_every >= 1, "simulation.record_every must be >= 1")
    _require(config.seed >= 0, "simulation.seed must be a non-negative integer")
    _require(config.delta_obs > 0, "observation.Delta must be positive")
    _require(config.m_obs >= 1, "observation.M must be >= 1")
    _require(config.backend in BACKENDS, f"fit.backend must be one of {BACKENDS}")
    _require(config.floor > 0, "fit.floor must be positive")
    _require(config.n_reps >= 1, "replicate.n_reps must be >= 1")
    _require(config.kernel_replicates >= 1, "kernel.n_replicates must be >= 1")
    for ratio, msg in (
        (config.horizon / config.delta, "model.T must be a multiple of simulation.delta"),
        (config.delta_obs / config.delta,
         "observation.Delta must be a multiple of simulation.delta"),
    ):
        _require(abs(ratio - round(ratio)) < 1e-9 * max(1.0, ratio) and round(ratio) >= 1,
                 msg)
    _require(config.m_obs * config.delta_obs <= config.horizon + 1e-9,
             "observation window M*Delta exceeds the simulated horizon T")
    if config.x0 > 0:
        config.grid()  # grid covers the support


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, (str, int)) else repr(float(v))
                             for v in row])


def _write_recipe(out, command, lines):
    path = out / f"{command}_recipe.txt"
    path.write_text("\n".join(lines) + "\n")


def cmd_simulate(config, out):
    ensemble = simulate_em_ensemble(
        config.params(), config.x0, config.horizon, config.delta,
        config.n_paths, seed=config.seed, record_every=config.record_every,
    )
    ensemble_to_csv(ensemble, out / "trajectories.csv")
    times = ensemble[0].times
    freq = [extinction_frequency(ensemble, t) for t in times]
    _write_rows(out / "extinction_frequency.csv", ["t", "frequency"],
                zip(times, freq))
    _write_recipe(out, "simulate", [
        "trajectories.csv: plot x against t, one line per path_id",
        "extinction_frequency.csv: plot frequency against t",
    ])
    return 0


def cmd_fpe(config, out):
    n_steps = int(round(config.horizon / config.delta))
    record_every = max(1, n_steps // config.n_snapshots)
    while n_steps % record_every != 0:
        record_every -= 1
    evo = solve_evolution(config.params(), config.x0, config.horizon,
                          config.grid(), config.delta, record_every=record_every)
    evo.density_csv(out / "fpe_density.csv")
    evo.atom_csv(out / "fpe_atom.csv")
    _write_recipe(out, "fpe", [
        "fpe_density.csv: contour of p over (t, y)",
        "fpe_atom.csv: plot atom against t",
    ])
    return 0


def cmd_kernel(config, out, x=None, delta_obs=None, ys=None):
    x = config.kernel_x if x is None else x
    delta_obs = config.kernel_delta_obs if delta_obs is None else delta_obs
    ys = config.kernel_y if ys is None else ys
    td = solve_kernel(config.params(), x, delta_obs, config.grid(), config.delta)
    rows = [
        (method, y, rep, est)
        for method, y, rep, est in kernel_replicates(
            config.params(), x, ys, delta_obs, config.delta,
            config.n_particles, config.kernel_replicates,
            methods=config.kernel_methods, seed=config.seed,
        )
    ]
    td.to_csv(out / "kernel_fd_density.csv")
    _write_rows(out / "kernel_replicates.csv",
                ["method", "y", "replicate", "estimate"],
                ((m, y, r, v) for m, y, r, v in rows))
    fd_rows = [(y,) + td.density_at(y) for y in ys]
    _write_rows(out / "kernel_fd_reference.csv", ["y", "estimate", "at_atom"],
                ((y, v, int(flag)) for y, v, flag in fd_rows))
    _write_recipe(out, "kernel", [
        "kernel_replicates.csv: box-plot estimate per (method, y)",
        "kernel_fd_reference.csv: overlay estimate as a horizontal line per y",
        "kernel_fd_density.csv: first row is the extinction atom, then y,p pairs",
    ])
    return 0


def _simulated_observations(config):
    traj = simulate_em(config.params(), config.x0,
                       config.m_obs * config.delta_obs, config.delta,
                       seed=config.seed)
    return ObservationSeries.from_trajectory(traj, config.delta_obs)


def _likelihood_settings(config):
    grid = config.grid() if config.backend == "finite-difference" else None
    return LikelihoodSettings(backend=config.backend, grid=grid,
                              delta=config.delta, n_paths=config.n_particles,
                              rng_seed=config.seed, floor=config.floor)


def cmd_nll_surface(config, out):
    obs = _simulated_observations(config)
    settings = _likelihood_settings(config)
    lams = np.linspace(config.lambda_min, config.lambda_max, config.lambda_steps)
    mus = np.linspace(config.mu_min, config.mu_max, config.mu_steps)
    rows = []
    for lam in lams:
        for mu in mus:
            theta = config.params().replace(lam=float(lam), mu=float(mu))
            rows.append((lam, mu, neg_log_likelihood(theta, obs, settings).value))
    _write_rows(out / "nll_surface.csv", ["lambda", "mu", "nll"], rows)
    _write_recipe(out, "nll-surface",
                  ["nll_surface.csv: surface/contour of nll over (lambda, mu)"])
    return 0


def cmd_fit(config, out):
    obs = _simulated_observations(config)
    settings = _likelihood_settings(config)
    theta0 = config.params().replace(lam=config.lambda_init, mu=config.mu_init)
    opts = OptimOptions(simplex_scale=config.simplex_scale,
                        max_evals=config.max_evals, f_tol=config.f_tol)
    result = fit_mle(obs, settings, theta0, opts)
    _write_rows(out / "fit_result.csv",
                ["lambda_hat", "mu_hat", "nll", "n_evaluations", "converged"],
                [(result.theta_hat[0], result.theta_hat[1], result.nll_at_min,
                  result.n_evaluations, int(result.converged))])
    if result.trace:
        _write_rows(out / "fit_trace.csv", ["iteration", "lambda", "mu", "nll"],
                    ((i, th[0], th[1], f) for i, (th, f) in enumerate(result.trace)))
    _write_recipe(out, "fit", [
        "fit_result.csv: fitted rates and diagnostics",
        "fit_trace.csv: path of the simplex best vertex over iterations",
    ])
    return 0


def cmd_replicate(config, out):
    scenario = ReplicateScenario(
        params=config.params(), x0=config.x0, horizon=config.horizon,
        delta_sim=config.delta, delta_obs=config.delta_obs,
        settings=_likelihood_settings(config),
        theta_init=config.params().replace(lam=config.lambda_init,
                                           mu=config.mu_init),
        opts=OptimOptions(simplex_scale=config.simplex_scale,
                          max_evals=config.max_evals, f_tol=config.f_tol,
                          record_trace=False),
    )
    rows = run_replicates(scenario, config.n_reps, master_seed=config.seed,
                          n_jobs=config.n_jobs)
    _write_rows(out / "replicate_fits.csv",
                ["rep", "lambda_hat", "mu_hat", "nll", "extinction_class",
                 "converged"],
                ((r.rep, r.lambda_hat, r.mu_hat, r.nll, r.extinction_class,
                  int(r.converged)) for r in rows))
    _write_recipe(out, "replicate", [
        "replicate_fits.csv: scatter mu_hat against lambda_hat, "
        "marker by extinction_class",
    ])
    return 0


def build_parser():
    # the global flags are accepted both before and after the subcommand;
    # the subparser copies use SUPPRESS so they never clobber values parsed
    # at the top level
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS,
                        help="configuration file path")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="overrides the configuration seed")
    common.add_argument("--out", default=argparse.SUPPRESS,
                        help="output directory")

    parser = argparse.ArgumentParser(
        prog="logrowth",
        description="Stochastic logistic growth with extinction: simulation, "
                    "Fokker-Planck solver, kernel estimators and MLE experiments.",
    )
    parser.add_argument("--config", default=None, help="configuration file path")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides the configuration seed")
    parser.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="trajectory ensemble and extinction frequency")
    sub.add_parser("fpe", parents=[common], help="time evolution of the solved law")
    kernel = sub.add_parser("kernel", parents=[common],
                            help="replicated kernel estimates at query points")
    kernel.add_argument("--x", type=float, default=None, help="starting state")
    kernel.add_argument("--delta-obs", type=float, default=None,
                        help="kernel time horizon")
    kernel.add_argument("--y", default=None,
                        help="comma-separated query points, e.g. 0,1.5,2")
    sub.add_parser("nll-surface", parents=[common],
                   help="negative log-likelihood over a rate grid")
    sub.add_parser("fit", parents=[common],
                   help="fit (lambda, mu) on a simulated trajectory")
    sub.add_parser("replicate", parents=[common],
                   help="replicated fits with extinction labels")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, seed_override=args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(config, out)
        if args.command == "fpe":
            return cmd_fpe(config, out)
        if args.command == "kernel":
            ys = _parse_float_list(args.y) if args.y else None
            return cmd_kernel(config, out, x=args.x, delta_obs=args.delta_obs, ys=ys)
        if args.command == "nll-surface":
            return cmd_nll_surface(config, out)
        if args.command == "fit":
            return cmd_fit(config, out)
        if args.command == "replicate":
            return cmd_replicate(config, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
