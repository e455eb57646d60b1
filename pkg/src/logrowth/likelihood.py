"""Negative log-likelihood of a discretely observed trajectory.

The likelihood is the product of transition densities w.r.t. the mixed
reference measure between successive observations, so extinct
observations enter through the atom and the absorbed tail contributes
factors of exactly one.  The initial-state factor is omitted: the
experiments use a known deterministic starting point, a constant.

Backends: the finite-difference solver (deterministic; one solve per
distinct observed state, shared through a batched propagation) or one
of the Monte Carlo kernel estimators (reproducible through per-term
seeds derived from the settings seed).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._rng import derive_seed
from .exceptions import ConfigError, NumericalError
from .fpe import Grid, nearest_node, solve_kernel, solve_kernel_batch
from .kernels import bridge_density, nonparam_density, pedersen_density
from .model import Params
from .simulate import ObservationSeries

BACKENDS = (
    "finite-difference",
    "pedersen",
    "bridge-plain",
    "bridge-modified",
    "nonparametric",
)


@dataclass
class LikelihoodSettings:
    backend: str = "finite-difference"
    grid: Optional[Grid] = None
    delta: float = 1e-3
    n_paths: int = 500
    rng_seed: int = 0
    floor: float = 1e-300

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(
                f"unknown backend {self.backend!r}; choose one of {BACKENDS}"
            )
        if self.floor <= 0:
            raise ConfigError("density floor must be strictly positive")
        if self.delta <= 0:
            raise ConfigError("inner step delta must be positive")
        if self.backend == "finite-difference" and self.grid is None:
            raise ConfigError("finite-difference backend needs a grid")


@dataclass
class NllResult:
    """Value of the negative log-likelihood with its per-term breakdown."""

    value: float
    terms: np.ndarray = field(repr=False)
    n_floored: int = 0


def _mc_term(theta, x, y, delta_obs, settings, seed):
    if settings.backend == "pedersen":
        est = pedersen_density(theta, x, y, delta_obs, settings.delta,
                               settings.n_paths, seed=seed)
    elif settings.backend == "nonparametric":
        est = nonparam_density(theta, x, y, delta_obs, settings.delta,
                               settings.n_paths, seed=seed)
    else:
        variant = "plain" if settings.backend == "bridge-plain" else "modified"
        est = bridge_density(theta, x, y, delta_obs, settings.delta,
                             settings.n_paths, variant=variant, seed=seed)
    return est.value


def transition_term(theta: Params, x, y, delta_obs, settings: LikelihoodSettings,
                    _term_index=0):
    """Transition density value q_Delta(y | x) from the selected backend."""
    if x < 0 or y < 0:
        raise ConfigError("states must be non-negative")
    if x == 0.0:
        return 1.0 if y == 0.0 else 0.0
    if settings.backend == "finite-difference":
        td = solve_kernel(theta, x, delta_obs, settings.grid, settings.delta)
        value, _ = td.density_at(y)
        return value
    return _mc_term(theta, x, y, delta_obs, settings,
                    derive_seed(settings.rng_seed, _term_index))


def _fd_transition_values(theta, pairs, delta_obs, settings):
    """Transition values for (x, y) pairs with x > 0, one FD solve per distinct node."""
    grid = settings.grid
    n_steps = int(round(delta_obs / settings.delta))
    if abs(delta_obs - n_steps * settings.delta) > 1e-9 * max(1.0, delta_obs):
        raise ConfigError(
            f"observation spacing {delta_obs} is not an integer multiple of "
            f"delta {settings.delta}"
        )
    nodes = np.array([nearest_node(grid, x) for x, _ in pairs], dtype=int)
    unique_nodes, inverse = np.unique(nodes, return_inverse=True)
    atoms, densities = solve_kernel_batch(theta, grid, settings.delta, n_steps,
                                          unique_nodes)
    values = np.empty(len(pairs))
    for i, (x, y) in enumerate(pairs):
        col = inverse[i]
        if y == 0.0:
            values[i] = atoms[col]
        else:
            if y > grid.x_max:
                raise ConfigError(
                    f"observation {y} beyond grid end {grid.x_max}; enlarge the grid"
                )
            values[i] = np.interp(y, grid.nodes, densities[:, col])
    return values


def neg_log_likelihood(theta: Params, obs: ObservationSeries,
                       settings: LikelihoodSettings):
    """- sum_k log max(q(xi_{k+1} | xi_k), floor), with diagnostics.

    Terms after the first observed zero contribute exactly 0 because the
    absorbed state transitions to itself with probability one.  NaN from
    a backend is a hard error, never floored.
    """
    values = obs.values
    m = obs.n_transitions
    terms = np.zeros(m)
    live = [k for k in range(m) if values[k] > 0.0]
    pairs = [(float(values[k]), float(values[k + 1])) for k in live]

    if pairs:
        if settings.backend == "finite-difference":
            q = _fd_transition_values(theta, pairs, obs.delta_obs, settings)
        else:
            q = np.empty(len(pairs))
            for i, (x, y) in enumerate(pairs):
                k = live[i]
                try:
                    q[i] = _mc_term(theta, x, y, obs.delta_obs, settings,
                                    derive_seed(settings.rng_seed, k))
                except ConfigError:
                    raise
                except Exception as exc:
                    raise NumericalError(
                        f"transition term k={k} failed for (x={x!r}, y={y!r}): {exc}"
                    ) from exc
        bad = np.flatnonzero(np.isnan(q))
        if bad.size:
            k = live[int(bad[0])]
            raise NumericalError(
                f"backend returned NaN for term k={k} "
                f"(x={values[k]!r}, y={values[k + 1]!r})"
            )
        floored = q < settings.floor
        terms[live] = -np.log(np.maximum(q, settings.floor))
        n_floored = int(np.count_nonzero(floored))
    else:
        n_floored = 0

    return NllResult(value=float(np.sum(terms)), terms=terms, n_floored=n_floored)
