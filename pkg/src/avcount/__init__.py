"""Anytime-valid sequential tests and confidence sequences for count data.

Sequential multinomial testing with Dirichlet-multinomial posterior odds,
simplex confidence sequences with marginal and linear projections, contrast
inference for time-inhomogeneous Bernoulli and Poisson processes via the
softmax reduction, a Monte-Carlo verification harness, and a streaming CLI.
"""

from .confset import (
    EmptyConfidenceSetError,
    Interval,
    SolverReport,
    in_confidence_set,
    log_odds_at,
    marginal_ci,
    solve_linear_over_set,
)
from .contrasts import (
    CompositeTestStream,
    ContrastSpec,
    DeltaGauge,
    LinearHypothesis,
    PIN_LAST,
    composite_p,
    contrast_ci,
    delta_mle,
    null_from_equality,
    softmax_rho,
)
from .core import (
    CountVector,
    DirichletParams,
    SimplexVector,
    log_gamma,
    log_multivariate_beta,
    validate_simplex,
)
from .pointproc import (
    ConstantIntensity,
    MarkedEvent,
    SinusoidSigmoidIntensity,
    TabulatedIntensity,
    events_to_observations,
    mark_probability,
    simulate_marked_system,
    simulate_thinned,
)
from .seqtest import (
    OddsState,
    init_state,
    kl_divergence,
    kl_rate,
    sequential_p,
    should_reject,
    update,
    update_batch,
)
from .sim import (
    CoverageReport,
    ExperimentConfig,
    ExperimentResult,
    pearson_chi2_p,
    run_bernoulli_scenario,
    run_coverage_experiment,
    run_power_experiment,
    run_type1_experiment,
)

__version__ = "0.1.0"
