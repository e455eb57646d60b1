"""Path simulation: truncated Euler--Maruyama and exact birth--death.

The Euler--Maruyama scheme is clamped at 0,

    X_{k+1} = max(0, X_k + delta*b(X_k) + sqrt(delta)*sigma(X_k)*w_k),

so every trajectory is non-negative and absorbed once it reaches 0.
The birth--death process is simulated exactly (Gillespie) and resampled
onto a uniform grid by right-continuous step interpolation, so both
simulators feed the same downstream statistics.

All ensemble kernels draw from per-path random streams keyed by
(master seed, path index); results do not depend on thread scheduling.
"""

import csv
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from . import _rng
from .exceptions import ConfigError
from .model import MicroParams, Params, diffusion, drift


@dataclass
class Trajectory:
    """States on the uniform grid t0 + k*dt, k = 0..n."""

    t0: float
    dt: float
    states: np.ndarray

    def __post_init__(self):
        self.states = np.ascontiguousarray(np.asarray(self.states, dtype=float))
        if self.states.ndim != 1 or self.states.size < 1:
            raise ConfigError("states must be a non-empty 1-d sequence")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if np.any(self.states < 0):
            raise ConfigError("states must be non-negative")
        zero = np.flatnonzero(self.states == 0.0)
        if zero.size and np.any(self.states[zero[0]:] != 0.0):
            raise ConfigError("absorption violated: state left 0 after reaching it")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.size)

    @property
    def horizon(self):
        return self.t0 + self.dt * (self.states.size - 1)

    def state_at(self, t):
        """State at the largest grid time <= t."""
        if t < self.t0 - 1e-12 * self.dt or t > self.horizon + 1e-12 * self.dt:
            raise ConfigError(f"time {t} outside trajectory horizon")
        k = int(np.floor((t - self.t0) / self.dt + 1e-9))
        return float(self.states[min(max(k, 0), self.states.size - 1)])

    def extinct_by(self, t):
        return self.state_at(t) == 0.0

    def first_zero_time(self):
        """Time of absorption, or None if the path never reaches 0."""
        zero = np.flatnonzero(self.states == 0.0)
        if zero.size == 0:
            return None
        return self.t0 + self.dt * float(zero[0])


@dataclass
class ObservationSeries:
    """Discrete observations xi_0..xi_M at spacing delta_obs (M >= 1)."""

    delta_obs: float
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if self.delta_obs <= 0:
            raise ConfigError("delta_obs must be positive")
        if self.values.ndim != 1 or self.values.size < 2:
            raise ConfigError("need at least two observations (M >= 1)")
        if np.any(self.values < 0):
            raise ConfigError("observations must be non-negative")
        zero = np.flatnonzero(self.values == 0.0)
        if zero.size and np.any(self.values[zero[0]:] != 0.0):
            raise ConfigError("absorption violated in observation series")

    @property
    def n_transitions(self):
        return self.values.size - 1

    @classmethod
    def from_trajectory(cls, traj: Trajectory, delta_obs):
        stride = delta_obs / traj.dt
        k = int(round(stride))
        if k < 1 or abs(stride - k) > 1e-9 * max(1.0, stride):
            raise ConfigError(
                f"observation spacing {delta_obs} is not a multiple of dt={traj.dt}"
            )
        return cls(delta_obs=delta_obs, values=traj.states[::k].copy())


def em_step(p: Params, x, delta, w):
    """One truncated Euler step; returns exactly 0 when x = 0."""
    if x < 0:
        raise ConfigError("state must be non-negative")
    if x == 0.0:
        return 0.0
    proposal = x + delta * drift(p, x) + np.sqrt(delta) * diffusion(p, x) * w
    return max(0.0, proposal)


def _n_steps(horizon, delta):
    n = int(round(horizon / delta))
    if n < 1 or abs(horizon - n * delta) > 1e-9 * max(1.0, abs(horizon)):
        raise ConfigError(f"horizon {horizon} is not an integer multiple of delta {delta}")
    return n


@nb.njit(cache=True, parallel=True)
def _em_paths(lam, mu, alpha, rho, x0, n_steps, delta, n_paths, seed, record_every):
    n_rec = n_steps // record_every
    out = np.empty((n_paths, n_rec + 1))
    sqdt = np.sqrt(delta)
    for i in nb.prange(n_paths):
        s = _rng.seed_state(seed, i)
        x = x0
        out[i, 0] = x
        have_spare = False
        spare = 0.0
        for k in range(1, n_steps + 1):
            if x > 0.0:
                if have_spare:
                    w = spare
                    have_spare = False
                else:
                    w, spare = _rng.normal_pair(s)
                    have_spare = True
                b = (lam - mu - alpha * x) * x
                a = rho * rho * (lam + mu + alpha * x) * x
                x = max(0.0, x + delta * b + sqdt * np.sqrt(a) * w)
            if k % record_every == 0:
                out[i, k // record_every] = x
    return out


@nb.njit(cache=True, parallel=True)
def _em_endpoints(lam, mu, alpha, rho, x0, n_steps, delta, n_paths, seed):
    out = np.empty(n_paths)
    sqdt = np.sqrt(delta)
    for i in nb.prange(n_paths):
        s = _rng.seed_state(seed, i)
        x = x0
        have_spare = False
        spare = 0.0
        for k in range(n_steps):
            if x <= 0.0:
                break
            if have_spare:
                w = spare
                have_spare = False
            else:
                w, spare = _rng.normal_pair(s)
                have_spare = True
            b = (lam - mu - alpha * x) * x
            a = rho * rho * (lam + mu + alpha * x) * x
            x = max(0.0, x + delta * b + sqdt * np.sqrt(a) * w)
        out[i] = x
    return out


@nb.njit(cache=True, parallel=True)
def _em_exit(lam, mu, alpha, rho, x0, x_r, delta, n_paths, seed, max_steps):
    # codes: 0 hit zero first, 1 reached x_r first, 2 undecided at max_steps
    codes = np.empty(n_paths, dtype=np.int8)
    steps = np.empty(n_paths, dtype=np.int64)
    sqdt = np.sqrt(delta)
    for i in nb.prange(n_paths):
        s = _rng.seed_state(seed, i)
        x = x0
        code = np.int8(2)
        k = np.int64(0)
        have_spare = False
        spare = 0.0
        while k < max_steps:
            if have_spare:
                w = spare
                have_spare = False
            else:
                w, spare = _rng.normal_pair(s)
                have_spare = True
            b = (lam - mu - alpha * x) * x
            a = rho * rho * (lam + mu + alpha * x) * x
            x = max(0.0, x + delta * b + sqdt * np.sqrt(a) * w)
            k += 1
            if x == 0.0:
                code = np.int8(0)
                break
            if x >= x_r:
                code = np.int8(1)
                break
        codes[i] = code
        steps[i] = k
    return codes, steps


def simulate_em(p: Params, x0, horizon, delta, seed=0):
    """Single truncated-EM trajectory of n = horizon/delta steps."""
    if x0 < 0:
        raise ConfigError("x0 must be non-negative")
    n = _n_steps(horizon, delta)
    states = _em_paths(p.lam, p.mu, p.alpha, p.rho, float(x0), n, float(delta), 1,
                       _rng.as_seed(seed), 1)
    return Trajectory(t0=0.0, dt=float(delta), states=states[0])


def simulate_em_ensemble(p: Params, x0, horizon, delta, n_paths, seed=0, record_every=1):
    """Independent truncated-EM trajectories, one random stream per path.

    ``record_every`` thins the stored grid (the dynamics always run at
    ``delta``); it must divide the number of steps.
    """
    if x0 < 0:
        raise ConfigError("x0 must be non-negative")
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    n = _n_steps(horizon, delta)
    if record_every < 1 or n % record_every != 0:
        raise ConfigError("record_every must divide the number of steps")
    states = _em_paths(
        p.lam, p.mu, p.alpha, p.rho, float(x0), n, float(delta), int(n_paths),
        _rng.as_seed(seed), int(record_every),
    )
    dt_rec = float(delta) * record_every
    return [Trajectory(t0=0.0, dt=dt_rec, states=states[i]) for i in range(n_paths)]


def em_endpoints(p: Params, x0, horizon, delta, n_paths, seed=0):
    """Terminal states only; used by the Monte Carlo kernel estimators."""
    n = _n_steps(horizon, delta)
    return _em_endpoints(
        p.lam, p.mu, p.alpha, p.rho, float(x0), n, float(delta), int(n_paths),
        _rng.as_seed(seed),
    )


def extinction_frequency(ensemble, t):
    """Fraction of trajectories extinct at the largest grid time <= t."""
    ensemble = list(ensemble)
    if not ensemble:
        raise ConfigError("empty ensemble")
    hits = sum(1 for traj in ensemble if traj.state_at(t) == 0.0)
    return hits / len(ensemble)


def exit_split(p: Params, x0, x_r, delta, n_paths, seed=0, t_max=None):
    """First-passage tally on (0, x_r): (n hit 0 first, n hit x_r first, n undecided).

    Paths run until absorption at 0, first crossing of ``x_r``, or the
    ``t_max`` step budget (default 50 time units).
    """
    if not 0 < x0 < x_r:
        raise ConfigError("need 0 < x0 < x_r")
    if t_max is None:
        t_max = 50.0
    max_steps = int(round(t_max / delta))
    codes, _ = _em_exit(
        p.lam, p.mu, p.alpha, p.rho, float(x0), float(x_r), float(delta),
        int(n_paths), _rng.as_seed(seed), max_steps,
    )
    return (
        int(np.sum(codes == 0)),
        int(np.sum(codes == 1)),
        int(np.sum(codes == 2)),
    )


@nb.njit(cache=True, parallel=True)
def _bd_paths(lam, mu, alpha_over_kappa, n0, dt, n_rec, n_paths, seed):
    out = np.empty((n_paths, n_rec + 1))
    for i in nb.prange(n_paths):
        s = _rng.seed_state(seed, i)
        n = float(n0)
        out[i, 0] = n
        if n > 0.0:
            rate = (lam + mu + alpha_over_kappa * n) * n
            t_event = -np.log(1.0 - _rng.uniform01(s)) / rate
        else:
            t_event = np.inf
        for k in range(1, n_rec + 1):
            tk = k * dt
            while t_event <= tk:
                total = lam + mu + alpha_over_kappa * n
                if _rng.uniform01(s) < lam / total:
                    n += 1.0
                else:
                    n -= 1.0
                if n <= 0.0:
                    n = 0.0
                    t_event = np.inf
                else:
                    rate = (lam + mu + alpha_over_kappa * n) * n
                    t_event = t_event - np.log(1.0 - _rng.uniform01(s)) / rate
            out[i, k] = n
    return out


def bd_simulate(mp: MicroParams, n0, horizon, dt, seed=0):
    """Exact birth--death path, resampled to the grid k*dt (counts, not rescaled)."""
    if n0 < 0 or n0 != int(n0):
        raise ConfigError("n0 must be a non-negative integer")
    n_rec = _n_steps(horizon, dt)
    counts = _bd_paths(
        mp.lam, mp.mu, mp.alpha / mp.kappa, int(n0), float(dt), n_rec, 1,
        _rng.as_seed(seed),
    )
    return Trajectory(t0=0.0, dt=float(dt), states=counts[0])


def bd_simulate_ensemble(mp: MicroParams, n0, horizon, dt, n_paths, seed=0):
    if n0 < 0 or n0 != int(n0):
        raise ConfigError("n0 must be a non-negative integer")
    n_rec = _n_steps(horizon, dt)
    counts = _bd_paths(
        mp.lam, mp.mu, mp.alpha / mp.kappa, int(n0), float(dt), n_rec, int(n_paths),
        _rng.as_seed(seed),
    )
    return [Trajectory(t0=0.0, dt=float(dt), states=counts[i]) for i in range(n_paths)]


def ensemble_to_csv(ensemble, path):
    """Write trajectories as rows path_id,t,x (full float precision)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path_id", "t", "x"])
        for pid, traj in enumerate(ensemble):
            for t, x in zip(traj.times, traj.states):
                writer.writerow([pid, repr(float(t)), repr(float(x))])
