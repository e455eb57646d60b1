"""Model coefficients of the stochastic logistic growth diffusion.

The population density X_t follows

    dX = (lam - mu - alpha*X) X dt + rho * sqrt((lam + mu + alpha*X) X) dB

with birth rate ``lam``, death rate ``mu``, logistic coefficient
``alpha`` and noise intensity ``rho``.  The squared diffusion is
``a(x) = rho^2 (lam + mu + alpha x) x``; both coefficients vanish at 0,
which makes 0 an exit boundary: the process is eventually absorbed.

This module also carries the scale density

    s(y) = (exp(y) * (lam + mu + alpha*y)^(-2*lam/alpha))^(2/rho^2)

used for two-sided hitting probabilities, and the microscopic
birth--death rates whose large-population diffusion limit is the SDE
above (population scale kappa, with rho = 1/sqrt(kappa)).
"""

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .exceptions import ConfigError, QuadratureError, ScaleOverflowError

_LOG_FLOAT_MAX = np.log(np.finfo(float).max)


@dataclass(frozen=True)
class Params:
    """Parameter vector (lam, mu, alpha, rho); all strictly positive."""

    lam: float
    mu: float
    alpha: float
    rho: float

    def __post_init__(self):
        for name in ("lam", "mu", "alpha", "rho"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")

    @property
    def growth_rate(self):
        """Net growth rate r = lam - mu."""
        return self.lam - self.mu

    @property
    def carrying_capacity(self):
        """Deterministic equilibrium K = (lam - mu)/alpha (positive iff lam > mu)."""
        return (self.lam - self.mu) / self.alpha

    def replace(self, **kwargs):
        fields = {k: getattr(self, k) for k in ("lam", "mu", "alpha", "rho")}
        fields.update(kwargs)
        return Params(**fields)


@dataclass(frozen=True)
class MicroParams:
    """Birth--death rates at population scale kappa.

    Birth rate of the count process is lam*n, death rate
    (mu + alpha*n/kappa)*n.  The rescaled process N_t/kappa converges,
    for large kappa, to the diffusion with ``rho = kappa**-0.5``.
    """

    lam: float
    mu: float
    alpha: float
    kappa: float

    def __post_init__(self):
        for name in ("lam", "mu", "alpha", "kappa"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigError(f"{name} must be strictly positive, got {value!r}")

    def to_params(self):
        return Params(self.lam, self.mu, self.alpha, self.kappa ** -0.5)


def drift(p: Params, x):
    """Drift b(x) = (lam - mu - alpha*x) x.  Vectorized over x >= 0."""
    x = np.asarray(x, dtype=float) if np.ndim(x) else float(x)
    return (p.lam - p.mu - p.alpha * x) * x


def diffusion_sq(p: Params, x):
    """Squared diffusion a(x) = rho^2 (lam + mu + alpha*x) x."""
    x = np.asarray(x, dtype=float) if np.ndim(x) else float(x)
    return p.rho ** 2 * (p.lam + p.mu + p.alpha * x) * x


def diffusion(p: Params, x):
    """Diffusion coefficient sigma(x) = sqrt(a(x))."""
    return np.sqrt(diffusion_sq(p, x))


def boundary_derivatives(p: Params):
    """Closed-form (b'(0), a'(0), a''(0)).

    b'(0) = lam - mu, a'(0) = rho^2 (lam + mu), a''(0) = 2 rho^2 alpha.
    These drive the boundary row of the finite-difference generator,
    where only first derivatives survive because a(0) = 0.
    """
    b_prime_0 = p.lam - p.mu
    a_prime_0 = p.rho ** 2 * (p.lam + p.mu)
    a_second_0 = 2.0 * p.rho ** 2 * p.alpha
    return b_prime_0, a_prime_0, a_second_0


def log_scale_density(p: Params, y):
    """log s(y) = (2/rho^2) * (y - (2 lam/alpha) log(lam + mu + alpha y)).

    The normalization constant of the scale function cancels in every
    hitting-probability ratio, so it is dropped.  Exponents of order
    2/rho^2 (200 for rho = 0.1) make the log form the only usable one.
    """
    y = np.asarray(y, dtype=float) if np.ndim(y) else float(y)
    return (2.0 / p.rho ** 2) * (
        y - (2.0 * p.lam / p.alpha) * np.log(p.lam + p.mu + p.alpha * y)
    )


def scale_density(p: Params, y):
    """Scale density s(y) for y > 0; raises ScaleOverflowError if exp overflows."""
    log_s = log_scale_density(p, y)
    if np.max(log_s) > _LOG_FLOAT_MAX:
        raise ScaleOverflowError(float(np.max(log_s)))
    return np.exp(log_s)


def _log_integral_scale(p: Params, a, b, rel_tol):
    """log of the integral of s over [a, b], by shifted adaptive quadrature.

    The maximum of log s on a scan grid is factored out so the integrand
    handed to the Gauss-Kronrod routine stays within float range; the
    shifted integrand peaks at 1 on [a, b].
    """
    scan = np.linspace(a, b, 129)
    shift = float(np.max(log_scale_density(p, scan)))
    integrand = lambda y: np.exp(log_scale_density(p, y) - shift)
    value, abs_err, info = quad(
        integrand, a, b, epsabs=0.0, epsrel=rel_tol, limit=200, full_output=True
    )[:3]
    if value <= 0.0 or abs_err > 10.0 * rel_tol * value:
        raise QuadratureError(
            f"scale integral over [{a:.6g}, {b:.6g}] did not converge", abs_err
        )
    return shift + np.log(value)


def hitting_probability(p: Params, x, x_r, rel_tol=1e-8):
    """P_x(tau_0 < tau_{x_r}) = 1 - int_0^x s / int_0^{x_r} s, for 0 < x < x_r.

    Both integrals are evaluated in log space; the result is the
    probability that extinction occurs before the level ``x_r`` is
    reached, starting from ``x``.
    """
    x = float(x)
    x_r = float(x_r)
    if not 0.0 < x < x_r:
        raise ConfigError(f"need 0 < x < x_r, got x={x}, x_r={x_r}")
    log_num = _log_integral_scale(p, 0.0, x, rel_tol)
    log_den = _log_integral_scale(p, 0.0, x_r, rel_tol)
    prob = -np.expm1(log_num - log_den)
    return float(min(max(prob, 0.0), 1.0))


def bd_rates(mp: MicroParams, n):
    """Birth and death rates (lam*n, (mu + alpha*n/kappa)*n) of the count process."""
    if np.any(np.asarray(n) < 0):
        raise ConfigError("population count must be non-negative")
    n = np.asarray(n, dtype=float) if np.ndim(n) else float(n)
    birth = mp.lam * n
    death = (mp.mu + (mp.alpha / mp.kappa) * n) * n
    return birth, death
