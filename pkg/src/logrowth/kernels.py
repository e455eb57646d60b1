"""Monte Carlo estimators of the transition density with extinction.

All estimators target the density of the transition law w.r.t. the
mixed reference measure (atom at 0 plus Lebesgue): the returned value
at y = 0 is an extinction-probability estimate, at y > 0 a density
estimate.  Starting from x = 0 every estimator is deterministic
(1 at y = 0, 0 elsewhere).

One Euler step from x > 0 has the two-part kernel

    K_delta(dz | x) = e_delta(x) delta_0(dz) + g_delta(z | x) dz

where g_delta is the N(x + delta*b(x), delta*a(x)) density restricted
to z >= 0 and e_delta(x) is the clamped mass, the normal CDF at 0.

* ``pedersen_density``: average of the last-step kernel density over
  paths simulated to Delta - delta; extinct paths contribute their full
  weight to the atom.
* ``bridge_density``: importance sampling with a Brownian-bridge-like
  proposal whose drift (y - X)/(Delta - t) forces paths toward the
  query point; per-step weights are ratios of Euler to proposal step
  densities (CDF ratios on the clamp-to-zero event), accumulated in log
  space and frozen once a path dies.  The ``modified`` variant damps
  the proposal noise by (1 - delta/(Delta - t)).
* ``nonparam_density``: boundary-reflected Gaussian KDE over surviving
  endpoints, scaled by the survivor fraction.
"""

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.special import log_ndtr, ndtr

from . import _rng
from .exceptions import ConfigError
from .model import Params, diffusion_sq, drift
from .simulate import em_endpoints

_LOG_2PI = float(np.log(2.0 * np.pi))
_SQRT2 = float(np.sqrt(2.0))
_LOG_TINY = -745.0


@dataclass(frozen=True)
class EulerKernelEval:
    """One-step truncated Euler kernel at a fixed starting state."""

    atom: float
    mean: float
    variance: float

    def density(self, z):
        """Gaussian part at z > 0 (0 for a dead start)."""
        if self.variance == 0.0:
            return np.zeros_like(np.asarray(z, dtype=float)) if np.ndim(z) else 0.0
        z = np.asarray(z, dtype=float) if np.ndim(z) else float(z)
        return np.exp(
            -0.5 * (z - self.mean) ** 2 / self.variance
        ) / np.sqrt(2.0 * np.pi * self.variance)


@dataclass
class KernelEstimate:
    """Estimated density w.r.t. the mixed reference measure at one point."""

    value: float
    at_atom: bool
    n_survivors: int
    n_paths: int
    n_underflow: int = 0

    def __post_init__(self):
        if not 0 <= self.n_survivors <= self.n_paths:
            raise ConfigError("survivor count out of range")


def euler_gaussian(p: Params, x, delta):
    """Mean and variance of the one-step Gaussian proposal from x > 0."""
    if x <= 0:
        raise ConfigError("euler_gaussian needs a strictly positive state")
    return x + delta * drift(p, x), delta * diffusion_sq(p, x)


def euler_atom(p: Params, x, delta):
    """Clamped mass e_delta(x); the complement of the Gaussian mass on [0, inf)."""
    if x == 0.0:
        return 1.0
    mean, var = euler_gaussian(p, x, delta)
    return float(ndtr(-mean / np.sqrt(var)))


def euler_kernel(p: Params, x, delta):
    if x == 0.0:
        return EulerKernelEval(atom=1.0, mean=0.0, variance=0.0)
    mean, var = euler_gaussian(p, x, delta)
    return EulerKernelEval(atom=float(ndtr(-mean / np.sqrt(var))), mean=mean, variance=var)


def _require_steps(delta_obs, delta):
    n = int(round(delta_obs / delta))
    if n < 1 or abs(delta_obs - n * delta) > 1e-9 * max(1.0, delta_obs):
        raise ConfigError(
            f"observation spacing {delta_obs} is not an integer multiple of delta {delta}"
        )
    return n


def _exp_mean(log_terms, n_total):
    """Mean over n_total of exp(log_terms); -inf entries contribute 0."""
    finite = log_terms[np.isfinite(log_terms)]
    if finite.size == 0:
        return 0.0
    m = float(np.max(finite))
    return float(np.exp(m) * np.sum(np.exp(finite - m)) / n_total)


def _log_gauss(z, mean, var):
    return -0.5 * ((z - mean) ** 2 / var) - 0.5 * (np.log(var) + _LOG_2PI)


def _deterministic_at_zero_start(y):
    return KernelEstimate(
        value=1.0 if y == 0.0 else 0.0, at_atom=(y == 0.0), n_survivors=0, n_paths=0
    )


def _pedersen_from_endpoints(p: Params, endpoints, y, delta):
    n_paths = endpoints.size
    alive = endpoints > 0.0
    n_s = int(np.count_nonzero(alive))
    xi = endpoints[alive]
    if y == 0.0:
        value = (n_paths - n_s) / n_paths
        if n_s:
            mean = xi + delta * drift(p, xi)
            sd = np.sqrt(delta * diffusion_sq(p, xi))
            value += float(np.sum(ndtr(-mean / sd))) / n_paths
        return KernelEstimate(value=value, at_atom=True, n_survivors=n_s, n_paths=n_paths)
    value = 0.0
    if n_s:
        mean = xi + delta * drift(p, xi)
        var = delta * diffusion_sq(p, xi)
        value = float(np.sum(np.exp(_log_gauss(y, mean, var)))) / n_paths
    return KernelEstimate(value=value, at_atom=False, n_survivors=n_s, n_paths=n_paths)


def pedersen_density(p: Params, x, y, delta_obs, delta, n_paths, seed=0):
    """Simulated-likelihood estimate: paths to Delta - delta, then the last-step kernel."""
    if x < 0 or y < 0:
        raise ConfigError("states must be non-negative")
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    n = _require_steps(delta_obs, delta)
    if x == 0.0:
        return _deterministic_at_zero_start(y)
    endpoints = em_endpoints(p, x, delta_obs - delta, delta, n_paths, seed) \
        if n > 1 else np.full(n_paths, float(x))
    return _pedersen_from_endpoints(p, endpoints, y, delta)


@nb.njit(inline="always", cache=True)
def _nb_log_gauss(z, mean, var):
    return -0.5 * ((z - mean) ** 2 / var) - 0.5 * (np.log(var) + _LOG_2PI)


@nb.njit(inline="always", cache=True)
def _nb_log_ndtr(z):
    if z >= -37.0:
        return np.log(0.5 * math.erfc(-z / _SQRT2))
    zz = z * z
    return -0.5 * zz - 0.5 * _LOG_2PI - np.log(-z) + np.log1p(-1.0 / zz + 3.0 / (zz * zz))


@nb.njit(cache=True, parallel=True)
def _bridge_paths(lam, mu, alpha, rho, x, y, delta_obs, delta, n_steps, modified,
                  n_paths, seed):
    """Proposal paths to Delta - delta with accumulated log importance weights.

    Returns (endpoints, log_weights); weights freeze when a path dies.
    """
    endpoints = np.empty(n_paths)
    log_w = np.empty(n_paths)
    sqdt = np.sqrt(delta)
    for i in nb.prange(n_paths):
        s = _rng.seed_state(seed, i)
        xi = x
        lw = 0.0
        have_spare = False
        spare = 0.0
        t = 0.0
        for k in range(n_steps):
            if xi > 0.0:
                if have_spare:
                    w = spare
                    have_spare = False
                else:
                    w, spare = _rng.normal_pair(s)
                    have_spare = True
                b = (lam - mu - alpha * xi) * xi
                a = rho * rho * (lam + mu + alpha * xi) * xi
                euler_mean = xi + delta * b
                bridge_mean = xi + delta * (y - xi) / (delta_obs - t)
                var_e = delta * a
                if modified:
                    damp = 1.0 - delta / (delta_obs - t)
                    sd_b = sqdt * np.sqrt(a) * damp
                else:
                    sd_b = sqdt * np.sqrt(a)
                var_b = sd_b * sd_b
                xi_new = max(0.0, bridge_mean + sd_b * w)
                if xi_new > 0.0:
                    lw += _nb_log_gauss(xi_new, euler_mean, var_e)
                    lw -= _nb_log_gauss(xi_new, bridge_mean, var_b)
                else:
                    lw += _nb_log_ndtr(-euler_mean / np.sqrt(var_e))
                    lw -= _nb_log_ndtr(-bridge_mean / sd_b)
                xi = xi_new
            t += delta
        endpoints[i] = xi
        log_w[i] = lw
    return endpoints, log_w


def bridge_density(p: Params, x, y, delta_obs, delta, n_paths, variant="plain", seed=0):
    """Importance-sampling estimate with a bridge proposal toward y.

    ``variant`` selects the proposal noise: "plain" keeps the Euler
    scale, "modified" damps it by (1 - delta/(Delta - t)) per step.
    """
    if variant not in ("plain", "modified"):
        raise ConfigError(f"unknown bridge variant {variant!r}")
    if x < 0 or y < 0:
        raise ConfigError("states must be non-negative")
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    n = _require_steps(delta_obs, delta)
    if x == 0.0:
        return _deterministic_at_zero_start(y)
    endpoints, log_w = _bridge_paths(
        p.lam, p.mu, p.alpha, p.rho, float(x), float(y), float(delta_obs),
        float(delta), n - 1, variant == "modified", int(n_paths), _rng.as_seed(seed),
    )
    alive = endpoints > 0.0
    n_s = int(np.count_nonzero(alive))
    n_underflow = int(np.count_nonzero(log_w < _LOG_TINY))
    if y == 0.0:
        log_terms = log_w.copy()
        if n_s:
            xi = endpoints[alive]
            mean = xi + delta * drift(p, xi)
            sd = np.sqrt(delta * diffusion_sq(p, xi))
            log_terms[alive] += log_ndtr(-mean / sd)
        value = _exp_mean(log_terms, n_paths)
        return KernelEstimate(
            value=value, at_atom=True, n_survivors=n_s, n_paths=n_paths,
            n_underflow=n_underflow,
        )
    log_terms = np.full(n_paths, -np.inf)
    if n_s:
        xi = endpoints[alive]
        mean = xi + delta * drift(p, xi)
        var = delta * diffusion_sq(p, xi)
        log_terms[alive] = log_w[alive] + _log_gauss(y, mean, var)
    value = _exp_mean(log_terms, n_paths)
    return KernelEstimate(
        value=value, at_atom=False, n_survivors=n_s, n_paths=n_paths,
        n_underflow=n_underflow,
    )


def silverman_bandwidth(samples):
    """0.9 min(sd, IQR/1.34) n^(-1/5), with a positive floor for degenerate samples."""
    n = samples.size
    sd = float(np.std(samples))
    q75, q25 = np.percentile(samples, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread <= 0:
        spread = max(abs(float(np.mean(samples))) * 1e-3, 1e-6)
    return 0.9 * spread * n ** (-0.2)


def nonparam_density(p: Params, x, y, delta_obs, delta, n_paths, bandwidth=None, seed=0):
    """Survivor-fraction-scaled KDE of the endpoint sample, reflected about 0.

    Reflection keeps the kernel mass out of the inaccessible negative
    half-line, so atom + density integrates to one by construction.
    """
    if x < 0 or y < 0:
        raise ConfigError("states must be non-negative")
    if n_paths < 1:
        raise ConfigError("n_paths must be >= 1")
    _require_steps(delta_obs, delta)
    if x == 0.0:
        return _deterministic_at_zero_start(y)
    endpoints = em_endpoints(p, x, delta_obs, delta, n_paths, seed)
    alive = endpoints > 0.0
    n_s = int(np.count_nonzero(alive))
    if y == 0.0:
        return KernelEstimate(
            value=(n_paths - n_s) / n_paths, at_atom=True,
            n_survivors=n_s, n_paths=n_paths,
        )
    if n_s == 0:
        return KernelEstimate(value=0.0, at_atom=False, n_survivors=0, n_paths=n_paths)
    xi = endpoints[alive]
    b = float(bandwidth) if bandwidth is not None else silverman_bandwidth(xi)
    z = (y - xi) / b
    z_ref = (y + xi) / b
    phi = (np.exp(-0.5 * z ** 2) + np.exp(-0.5 * z_ref ** 2)) / np.sqrt(2.0 * np.pi)
    value = (n_s / n_paths) * float(np.sum(phi)) / (n_s * b)
    return KernelEstimate(value=value, at_atom=False, n_survivors=n_s, n_paths=n_paths)


_METHODS = ("pedersen", "bridge-plain", "bridge-modified", "nonparametric")


def kernel_replicates(p: Params, x, ys, delta_obs, delta, n_paths, n_replicates,
                      methods=_METHODS, seed=0):
    """Replicated estimates at several query points, one row per estimate.

    Yields (method, y, replicate, estimate).  A Pedersen or KDE ensemble
    serves every y in one run; each bridge estimate needs its own run
    because the proposal drift targets the query point.
    """
    for method in methods:
        if method not in _METHODS:
            raise ConfigError(f"unknown kernel method {method!r}")
    ys = list(ys)
    for m_idx, method in enumerate(methods):
        for rep in range(n_replicates):
            rep_seed = _rng.derive_seed(seed, m_idx, rep)
            if method == "pedersen":
                n = _require_steps(delta_obs, delta)
                if x == 0.0:
                    for y in ys:
                        yield method, y, rep, _deterministic_at_zero_start(y).value
                    continue
                endpoints = em_endpoints(p, x, delta_obs - delta, delta, n_paths,
                                         rep_seed) if n > 1 else np.full(int(n_paths), float(x))
                for y in ys:
                    est = _pedersen_from_endpoints(p, endpoints, y, delta)
                    yield method, y, rep, est.value
            elif method == "nonparametric":
                for y in ys:
                    est = nonparam_density(p, x, y, delta_obs, delta, n_paths,
                                           seed=rep_seed)
                    yield method, y, rep, est.value
            else:
                variant = "plain" if method == "bridge-plain" else "modified"
                for y_idx, y in enumerate(ys):
                    est = bridge_density(p, x, y, delta_obs, delta, n_paths,
                                         variant=variant,
                                         seed=_rng.derive_seed(rep_seed, y_idx))
                    yield method, y, rep, est.value
