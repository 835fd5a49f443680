"""Hidden Markov models with fading inhomogeneous observation noise.

The package simulates trivariate processes made of a finite hidden chain, a
clean stationary emission layer and an observed noisy layer whose noise decays
with time; evaluates exact and quasi likelihoods of the noisy observations;
computes the corresponding maximum-likelihood estimators; verifies the
structural conditions behind their consistency numerically; and reproduces the
canonical consistency experiments as CSV output.
"""

from .core import (
    Distribution,
    ParamLayout,
    ParamSpace,
    ParamVector,
    TransitionMatrix,
    counting_measure,
    is_irreducible,
    pack,
    stationary_distribution,
    uniform_distribution,
    unpack,
)
from .models import (
    CounterexampleDhmm,
    GaussianDhmm,
    HybridDhmm,
    NoiseSchedule,
    PoissonDhmm,
    log_f,
    log_f_n,
    make_model,
    ratio_bound_constant,
    round_transform,
    zero_schedule,
)
from .likelihood import (
    ForwardState,
    brute_force_log_p,
    brute_force_log_q,
    log_likelihood_rate,
    log_p,
    log_q,
    loglik_trace,
)
from .simulate import (
    Trajectory,
    load_trajectory_csv,
    proximity_trace,
    save_trajectory_csv,
    simulate,
)
from .estimate import (
    FitResult,
    OptimizerConfig,
    canonicalize,
    error_trace,
    fit,
)
from .diagnostics import (
    ConditionReport,
    ScoreDiagnostics,
    check_c1,
    check_c2,
    check_c2_gaussian,
    check_c2_poisson,
    check_c3,
    check_structural,
    score_diagnostics,
    score_fd,
)
from .experiments import (
    ExperimentConfig,
    ExperimentResult,
    load_config,
    parse_config,
    preset_config,
    preset_names,
    run_counterexample,
    run_experiment,
    run_hybrid,
    run_replicated,
    run_single,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
