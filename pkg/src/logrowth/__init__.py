"""Stochastic logistic growth with extinction.

Simulation of the clamped Euler--Maruyama scheme and the underlying
birth--death process, a finite-difference solver for the degenerate
Fokker--Planck system (continuous density plus extinction atom), Monte
Carlo transition-kernel estimators, and maximum likelihood estimation
of the birth and death rates from discretely sampled trajectories.
"""

from .estimate import (
    FitResult,
    GrowthMLE,
    OptimOptions,
    ReplicateRow,
    ReplicateScenario,
    classify_extinction,
    fit,
    nelder_mead,
    replicate,
)
from .exceptions import (
    ConfigError,
    HoldingTimeWarning,
    NumericalError,
    OutOfGridError,
    QuadratureError,
    ScaleOverflowError,
)
from .fpe import (
    FpeEvolution,
    GeneratorMatrix,
    Grid,
    ImplicitPropagator,
    ProbVector,
    TransitionDensity,
    build_generator,
    dirac,
    extinction_rate_check,
    implicit_euler_step,
    nearest_node,
    solve_evolution,
    solve_kernel,
    solve_kernel_batch,
)
from .kernels import (
    EulerKernelEval,
    KernelEstimate,
    bridge_density,
    euler_atom,
    euler_gaussian,
    euler_kernel,
    kernel_replicates,
    nonparam_density,
    pedersen_density,
)
from .likelihood import (
    BACKENDS,
    LikelihoodSettings,
    NllResult,
    neg_log_likelihood,
    transition_term,
)
from .model import (
    MicroParams,
    Params,
    bd_rates,
    boundary_derivatives,
    diffusion,
    diffusion_sq,
    drift,
    hitting_probability,
    log_scale_density,
    scale_density,
)
from .simulate import (
    ObservationSeries,
    Trajectory,
    bd_simulate,
    bd_simulate_ensemble,
    em_endpoints,
    em_step,
    ensemble_to_csv,
    exit_split,
    extinction_frequency,
    simulate_em,
    simulate_em_ensemble,
)

__version__ = "0.1.0"
