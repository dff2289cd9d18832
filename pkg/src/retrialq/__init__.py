"""Stationary analysis, simulation and admission control for a single-server
retrial queue with event-dependent Poisson arrivals and general service and
seek (retrieval) times."""

__version__ = "0.1.0"

from .analytic import (  # noqa: F401
    ArrivalClass,
    ModelSpec,
    RateProfile,
    StationaryReport,
    TYPO_LEDGER,
    UnstableModelError,
    arrival_count_pmf,
    departure_empty_prob,
    departure_orbit_pgf,
    epoch_state_pgfs,
    formula_metrics,
    idle_orbit_pgf,
    instant_seek_bounds,
    moments_and_throughput,
    orbit_transition_prob,
    empty_prob_terms,
    server_state_probs,
    service_arrival_pgf,
    service_arrival_pgf_derivatives,
    service_arrival_pmf,
    stability_margin,
    stationary_report,
    total_system_pgf,
    transform_throughput,
    two_argument_transforms,
)
from .dists import (  # noqa: F401
    Deterministic,
    DistributionError,
    DistributionSpec,
    Erlang,
    Exponential,
    HyperExponential,
    dist_from_dict,
    lst,
    moment,
    sample,
)
from .optimizer import (  # noqa: F401
    AdmissionProblem,
    AdmissionSolution,
    FormulaIntegrityError,
    evaluate,
    solve,
)
from .oracles import (  # noqa: F401
    PgfCoefficientError,
    TruncationConfig,
    TruncationInsufficientError,
    embedded_stationary_truncated,
    fd_derivative,
    ode_arrival_count,
    pgf_to_pmf,
    service_count_vector_ode,
)
from .simulator import (  # noqa: F401
    ConfigurationError,
    EventLabel,
    SimConfig,
    SimEstimates,
    batch_means,
    run,
)
