"""Finite-difference solver for the degenerate Fokker--Planck system.

The law of the absorbed diffusion splits into a continuous density on
(0, x_L] and an extinction atom.  Space is discretized on the regular
grid x_l = l*h together with an extra cemetery state carrying the
extinction mass; the value 0 is deliberately represented twice, as the
grid node x_0 where the continuous density is evaluated and as the
absorbing cemetery state.

The spatial operator is the up-wind generator of a pure jump Markov
process: for interior nodes

    A[l, l-1] = b^-(x_l)/h + a(x_l)/(2 h^2)
    A[l, l]   = -|b(x_l)|/h - a(x_l)/h^2
    A[l, l+1] = b^+(x_l)/h + a(x_l)/(2 h^2)

with a reflecting right boundary and a boundary row at node 0,

    A[0, 0] = -|b'(0)| - a'(0)/h,   A[0, cemetery] = -A[0, 0],

chosen so the node-0 equation is consistent with the continuity
equation at the degenerate boundary (only first derivatives survive
since a(0) = 0).  Off-diagonals are non-negative and every row sums to
zero, so probability vectors stay on the simplex.

Time stepping is implicit Euler on the adjoint system,
``(I - delta*A)^T P_{k+1} = P_k``; the grid block is tridiagonal and is
solved by a Thomas factorization computed once per (params, grid,
delta), after which the cemetery mass is updated by one scalar
operation per step (the transposed row couples it to node 0 only).
"""

import csv
import warnings
from dataclasses import dataclass

import numba as nb
import numpy as np

from .exceptions import (
    ConfigError,
    HoldingTimeWarning,
    NumericalError,
    OutOfGridError,
)
from .model import Params, boundary_derivatives, diffusion_sq, drift

HOLDING_RATIO_THRESHOLD = 10.0


@dataclass(frozen=True)
class Grid:
    """Regular grid x_l = l*h, l = 0..L."""

    h: float
    L: int

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigError("mesh size h must be positive")
        if self.L < 2:
            raise ConfigError("need at least two grid intervals")

    @property
    def x_max(self):
        return self.h * self.L

    @property
    def nodes(self):
        return self.h * np.arange(self.L + 1)

    @property
    def cell_widths(self):
        """Quadrature weights tying node masses to densities (half cells at the ends)."""
        w = np.full(self.L + 1, self.h)
        w[0] = w[-1] = self.h / 2.0
        return w

    @classmethod
    def for_model(cls, p: Params, x0, h, x_max=None):
        """Grid covering the support: x_L >= 2*max(K, x0), default max(4K, 2*x0).

        The right boundary is artificial (reflecting), so it must sit far
        enough out that the boundary condition causes limited harm.
        """
        K = max(p.carrying_capacity, 0.0)
        if x_max is None:
            x_max = max(4.0 * K, 2.0 * x0)
        if x_max < 2.0 * max(K, x0) - 1e-12:
            raise ConfigError(
                f"x_max={x_max} too small: need at least 2*max(K, x0)={2*max(K, x0)}"
            )
        L = int(np.ceil(x_max / h - 1e-9))
        return cls(h=float(h), L=L)


@dataclass
class GeneratorMatrix:
    """Up-wind jump generator on {cemetery, x_0, ..., x_L}.

    Stored as the tridiagonal band of the grid block plus the single
    node-0 -> cemetery rate; the cemetery row is identically zero.
    ``lower[k] = A[k+1, k]`` and ``upper[k] = A[k, k+1]``.
    """

    grid: Grid
    diag: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    upsilon_rate: float

    def row_sums(self):
        """Row sums over [cemetery, 0, ..., L]; all zero for a conservative chain."""
        L = self.grid.L
        sums = np.empty(L + 2)
        sums[0] = 0.0  # the cemetery row is structurally zero (absorbing)
        sums[1] = self.diag[0] + self.upper[0] + self.upsilon_rate
        sums[2:L + 1] = self.lower[:L - 1] + self.diag[1:L] + self.upper[1:]
        sums[L + 1] = self.lower[L - 1] + self.diag[L]
        return sums

    def holding_ratio(self, delta):
        """delta * max_l |A[l,l]|: expected jumps per implicit step."""
        return float(delta * np.max(np.abs(self.diag)))

    def to_dense(self):
        """Dense (L+2)x(L+2) matrix, index 0 = cemetery, 1..L+1 = nodes."""
        L = self.grid.L
        A = np.zeros((L + 2, L + 2))
        A[1:, 1:] += np.diag(self.diag)
        A[2:, 1:][np.diag_indices(L)] = self.lower
        A[1:-1, 2:][np.diag_indices(L)] = self.upper
        A[1, 0] = self.upsilon_rate
        return A


def build_generator(p: Params, grid: Grid):
    """Assemble the generator from the model coefficients on the grid."""
    x = grid.nodes
    h = grid.h
    b = drift(p, x)
    a = diffusion_sq(p, x)
    b_plus = np.maximum(b, 0.0)
    b_minus = np.maximum(-b, 0.0)

    diag = np.empty(grid.L + 1)
    lower = np.empty(grid.L)
    upper = np.empty(grid.L)

    interior = slice(1, grid.L)
    diag[interior] = -(np.abs(b[interior]) / h + a[interior] / h ** 2)
    lower[: grid.L - 1] = b_minus[interior] / h + a[interior] / (2.0 * h ** 2)
    upper[1:] = b_plus[interior] / h + a[interior] / (2.0 * h ** 2)

    b1, a1, _ = boundary_derivatives(p)
    diag[0] = -(abs(b1) + a1 / h)
    upper[0] = 0.0
    upsilon_rate = -diag[0]

    lower[grid.L - 1] = abs(b[grid.L]) / h + a[grid.L] / h ** 2
    diag[grid.L] = -lower[grid.L - 1]

    return GeneratorMatrix(
        grid=grid, diag=diag, lower=lower, upper=upper, upsilon_rate=upsilon_rate
    )


@dataclass
class ProbVector:
    """Discrete law over {cemetery, x_0, ..., x_L}."""

    p_upsilon: float
    masses: np.ndarray

    def __post_init__(self):
        self.masses = np.ascontiguousarray(np.asarray(self.masses, dtype=float))

    @property
    def total_mass(self):
        return self.p_upsilon + float(np.sum(self.masses))

    def validate(self, tol=1e-10):
        if self.p_upsilon < 0 or np.any(self.masses < 0):
            raise NumericalError("probability vector has negative entries")
        if abs(self.total_mass - 1.0) > tol:
            raise NumericalError(
                f"probability vector mass {self.total_mass} deviates from 1"
            )
        return self


def nearest_node(grid: Grid, x):
    """Index of the grid node nearest to x; ties break toward the lower node."""
    if x < 0 or x > grid.x_max + 0.5 * grid.h:
        raise OutOfGridError(f"initial state {x} outside grid [0, {grid.x_max}]")
    l = int(np.ceil(x / grid.h - 0.5))
    return min(max(l, 0), grid.L)


def dirac(grid: Grid, x):
    """Unit mass at the node nearest to x (x > 0); at the cemetery for x = 0."""
    masses = np.zeros(grid.L + 1)
    if x == 0.0:
        return ProbVector(p_upsilon=1.0, masses=masses)
    masses[nearest_node(grid, x)] = 1.0
    return ProbVector(p_upsilon=0.0, masses=masses)


@nb.njit(cache=True)
def _thomas_factor(sub, diag, sup):
    """LU of a tridiagonal, no pivoting (valid for our diagonally dominant M-matrix)."""
    n = diag.shape[0]
    piv = np.empty(n)
    mult = np.empty(n - 1)
    piv[0] = diag[0]
    for i in range(1, n):
        if piv[i - 1] <= 0.0 or not np.isfinite(piv[i - 1]):
            raise ValueError("tridiagonal factorization lost positivity")
        mult[i - 1] = sub[i - 1] / piv[i - 1]
        piv[i] = diag[i] - mult[i - 1] * sup[i - 1]
    if piv[n - 1] <= 0.0 or not np.isfinite(piv[n - 1]):
        raise ValueError("tridiagonal factorization lost positivity")
    return mult, piv


@nb.njit(cache=True)
def _thomas_solve_many(mult, piv, sup, B):
    """Solve for all columns of B (shape (n, m), C-contiguous)."""
    n, m = B.shape
    X = np.empty_like(B)
    for j in range(m):
        X[0, j] = B[0, j]
    for i in range(1, n):
        li = mult[i - 1]
        for j in range(m):
            X[i, j] = B[i, j] - li * X[i - 1, j]
    inv = 1.0 / piv[n - 1]
    for j in range(m):
        X[n - 1, j] *= inv
    for i in range(n - 2, -1, -1):
        ui = sup[i]
        inv = 1.0 / piv[i]
        for j in range(m):
            X[i, j] = (X[i, j] - ui * X[i + 1, j]) * inv
    return X


class ImplicitPropagator:
    """Repeated implicit Euler steps sharing one tridiagonal factorization.

    The adjoint system matrix M = I - delta*A^T restricted to the grid
    has sub-diagonal -delta*upper and super-diagonal -delta*lower; the
    cemetery mass update is the scalar
    ``P'(cemetery) = P(cemetery) + delta * upsilon_rate * P'(0)``.
    Because M is an M-matrix, the pivot-free solve keeps probabilities
    non-negative and total mass is conserved identically.
    """

    def __init__(self, A: GeneratorMatrix, delta):
        if delta <= 0:
            raise ConfigError("time step delta must be positive")
        self.A = A
        self.delta = float(delta)
        ratio = A.holding_ratio(delta)
        if ratio > HOLDING_RATIO_THRESHOLD:
            warnings.warn(
                f"holding-time ratio delta*max|A_ll| = {ratio:.3g} exceeds "
                f"{HOLDING_RATIO_THRESHOLD:g}; the implicit scheme stays stable "
                "but accuracy degrades",
                HoldingTimeWarning,
                stacklevel=2,
            )
        self._sub = -self.delta * A.upper
        self._sup = -self.delta * A.lower
        self._diag = 1.0 - self.delta * A.diag
        try:
            self._mult, self._piv = _thomas_factor(self._sub, self._diag, self._sup)
        except ValueError as exc:
            raise NumericalError(str(exc)) from exc
        self._c0 = self.delta * A.upsilon_rate

    def step_masses(self, masses, p_upsilon):
        X = _thomas_solve_many(
            self._mult, self._piv, self._sup, masses.reshape(-1, 1)
        )[:, 0]
        if not np.isfinite(X[0]):
            raise NumericalError("implicit Euler solve produced non-finite values")
        return X, p_upsilon + self._c0 * X[0]

    def step(self, P: ProbVector):
        masses, upsilon = self.step_masses(P.masses, P.p_upsilon)
        return ProbVector(p_upsilon=upsilon, masses=masses)

    def propagate(self, P: ProbVector, n_steps):
        masses = P.masses.copy()
        upsilon = P.p_upsilon
        for _ in range(n_steps):
            masses, upsilon = self.step_masses(masses, upsilon)
        return ProbVector(p_upsilon=upsilon, masses=masses)

    def propagate_matrix(self, columns, atoms, n_steps):
        """Advance many initial mass columns at once (columns: (L+1, k))."""
        X = np.ascontiguousarray(columns, dtype=float)
        atoms = np.asarray(atoms, dtype=float).copy()
        for _ in range(n_steps):
            X = _thomas_solve_many(self._mult, self._piv, self._sup, X)
            atoms += self._c0 * X[0, :]
        if not np.all(np.isfinite(atoms)):
            raise NumericalError("implicit Euler solve produced non-finite values")
        return X, atoms


def implicit_euler_step(A: GeneratorMatrix, P: ProbVector, delta):
    """One implicit Euler step of the adjoint system; checks the residual."""
    prop = ImplicitPropagator(A, delta)
    out = prop.step(P)
    # residual of the tridiagonal system, grid block only
    x = out.masses
    r = prop._diag * x - P.masses
    r[1:] += prop._sub * x[:-1]
    r[:-1] += prop._sup * x[1:]
    res = float(np.max(np.abs(r)))
    if not np.isfinite(res) or res > 1e-8 * max(1.0, float(np.max(np.abs(P.masses)))):
        raise NumericalError(f"implicit Euler solve failed, residual {res:.3g}")
    return out


@dataclass
class TransitionDensity:
    """Transition law after time Delta: extinction atom + gridded density.

    The density is taken w.r.t. the reference measure (point mass at 0
    plus Lebesgue), so the atom is the value at y = 0 and ``values[l]``
    approximates the continuous part at the node x_l.
    """

    atom: float
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.atom = float(self.atom)
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=float))

    def continuous_mass(self):
        """Trapezoid integral of the continuous part over [0, x_L]."""
        return float(np.trapezoid(self.values, dx=self.grid.h))

    def density_at(self, y):
        """(value, is_atom) at y: the atom at y = 0, linear interpolation for y > 0."""
        if y < 0:
            raise OutOfGridError("query point must be non-negative")
        if y > self.grid.x_max:
            raise OutOfGridError(
                f"query point {y} beyond grid end {self.grid.x_max}; enlarge the grid"
            )
        if y == 0.0:
            return float(self.atom), True
        return float(np.interp(y, self.grid.nodes, self.values)), False

    def mean(self):
        """Mean of the law (the atom contributes 0)."""
        return float(np.trapezoid(self.grid.nodes * self.values, dx=self.grid.h))

    def to_csv(self, path):
        """Header row ``atom,<E>`` followed by one ``y,p`` row per node."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["atom", repr(float(self.atom))])
            for y, v in zip(self.grid.nodes, self.values):
                writer.writerow([repr(float(y)), repr(float(v))])


def _masses_to_density(grid: Grid, P: ProbVector):
    return TransitionDensity(
        atom=P.p_upsilon, grid=grid, values=P.masses / grid.cell_widths
    )


def _check_divides(delta_obs, delta):
    n = int(round(delta_obs / delta))
    if n < 1 or abs(delta_obs - n * delta) > 1e-9 * max(1.0, delta_obs):
        raise ConfigError(
            f"observation spacing {delta_obs} is not an integer multiple of delta {delta}"
        )
    return n


def solve_kernel(p: Params, x, delta_obs, grid: Grid, delta):
    """Transition law after Delta = delta_obs starting from x.

    The initial law is a Dirac at the nearest grid node (ties toward the
    lower node); x = 0 starts, and stays, at the cemetery.
    """
    if x < 0:
        raise ConfigError("initial state must be non-negative")
    n = _check_divides(delta_obs, delta)
    P0 = dirac(grid, x)
    if x == 0.0:
        return TransitionDensity(atom=1.0, grid=grid, values=np.zeros(grid.L + 1))
    prop = ImplicitPropagator(build_generator(p, grid), delta)
    return _masses_to_density(grid, prop.propagate(P0, n))


def solve_kernel_batch(p: Params, grid: Grid, delta, n_steps, node_indices):
    """Transition laws from many initial nodes at once.

    Returns (atoms, densities) with one column of ``densities`` per
    initial node; used by the likelihood to share one factorization and
    one time loop across all distinct observed states.
    """
    node_indices = np.asarray(node_indices, dtype=int)
    k = node_indices.size
    columns = np.zeros((grid.L + 1, k))
    columns[node_indices, np.arange(k)] = 1.0
    prop = ImplicitPropagator(build_generator(p, grid), delta)
    X, atoms = prop.propagate_matrix(columns, np.zeros(k), n_steps)
    densities = X / grid.cell_widths[:, None]
    return atoms, densities


@dataclass
class FpeEvolution:
    """Snapshots of the solved law at uniformly spaced times."""

    times: np.ndarray
    atoms: np.ndarray
    densities: np.ndarray  # (n_snapshots, L+1)
    grid: Grid

    def to_density(self, i):
        return TransitionDensity(
            atom=float(self.atoms[i]), grid=self.grid, values=self.densities[i]
        )

    def density_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "y", "p"])
            for i, t in enumerate(self.times):
                for y, v in zip(self.grid.nodes, self.densities[i]):
                    writer.writerow([repr(float(t)), repr(float(y)), repr(float(v))])

    def atom_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "atom"])
            for t, e in zip(self.times, self.atoms):
                writer.writerow([repr(float(t)), repr(float(e))])


def solve_evolution(p: Params, x, horizon, grid: Grid, delta, record_every=1):
    """Evolve the law from a Dirac at x, recording every ``record_every`` steps."""
    n = _check_divides(horizon, delta)
    if record_every < 1 or n % record_every != 0:
        raise ConfigError("record_every must divide the number of steps")
    P = dirac(grid, x)
    prop = ImplicitPropagator(build_generator(p, grid), delta)
    n_rec = n // record_every
    times = np.empty(n_rec + 1)
    atoms = np.empty(n_rec + 1)
    densities = np.empty((n_rec + 1, grid.L + 1))
    widths = grid.cell_widths
    masses, upsilon = P.masses.copy(), P.p_upsilon
    times[0], atoms[0], densities[0] = 0.0, upsilon, masses / widths
    for r in range(1, n_rec + 1):
        for _ in range(record_every):
            masses, upsilon = prop.step_masses(masses, upsilon)
        times[r] = r * record_every * delta
        atoms[r] = upsilon
        densities[r] = masses / widths
    return FpeEvolution(times=times, atoms=atoms, densities=densities, grid=grid)


def extinction_rate_check(p: Params, densities, delta):
    """Consistency of the atom growth with the boundary flux; diagnostic only.

    Compares the per-step atom increment rate against
    (a'(0)/2 + (h/2)|b'(0)|) * p(0) evaluated at the step's left
    endpoint, and returns the maximum deviation relative to the largest
    rate encountered.  First-order in delta.
    """
    densities = list(densities)
    if len(densities) < 2:
        raise ConfigError("need at least two snapshots")
    h = densities[0].grid.h
    b1, a1, _ = boundary_derivatives(p)
    coeff = 0.5 * a1 + 0.5 * h * abs(b1)
    rates = np.array([coeff * td.values[0] for td in densities[:-1]])
    atoms = np.array([td.atom for td in densities])
    increments = np.diff(atoms) / delta
    scale = float(np.max(rates))
    if scale == 0.0:
        return float(np.max(np.abs(increments)))
    return float(np.max(np.abs(increments - rates)) / scale)
