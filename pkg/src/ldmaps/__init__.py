"""Deviation-set volumes, thermodynamic quantities, and horseshoe certificates
for smooth interval maps with non-flat critical points."""

from .errors import (
    ArgumentError,
    ConstructionRejectedError,
    ConvergenceError,
    DegenerateConfigurationError,
    DomainError,
    IllConditionedInputError,
    InsufficientDataError,
    LdmapsError,
    NoConstrainedMassError,
    NoSafePointError,
    NoScaleFoundError,
    NotDiffeomorphicError,
    NotTopologicallyExactError,
    PreconditionError,
    ResourceLimitError,
    SearchFailureError,
    UnsupportedMapError,
)
from .maps import (
    EmpiricalMeasure,
    Interval,
    Observable,
    SmoothMap,
    birkhoff_sum,
    chebyshev_map,
    combine_observables,
    empirical_measure,
    identity_observable,
    log_deriv_observable,
    map_from_json,
    map_to_json,
    observable_from_json,
    observable_to_json,
    piecewise_map,
    poly_observable,
    quadratic_map,
    scale_observable,
    zero_observable,
)
from .pullback import (
    CriticalGraph,
    PartitionPn,
    PullBack,
    UslParams,
    backward_stability_scale,
    covering_time,
    critical_graph,
    cross_ratio,
    distortion,
    partition_Pn,
    preimage_components,
    pullbacks,
    pullbacks_to_json,
    uniform_scale_search,
)
from .safety import (
    CoveringSum,
    SafetyQuery,
    covering_sum,
    is_alpha_safe,
    safe_dense_set,
    safety_balls,
)
from .thermo import (
    MeasureStats,
    RateTable,
    UlamOperator,
    invariant_density,
    leading_eigenvalue,
    legendre_rate,
    measure_stats_periodic,
    measure_stats_ulam,
    observable_range,
    periodic_orbits,
    periodic_points,
    pressure,
    scgf,
    scgf_table,
    ulam_operator,
)
from .horseshoe import (
    ConstraintSet,
    Horseshoe,
    HorseshoeParams,
    KatokBlocks,
    KatokTarget,
    VerificationReport,
    build_horseshoe,
    free_energy_lower_bound,
    horseshoe_from_json,
    horseshoe_to_json,
    katok_blocks,
    verify_horseshoe,
)
from .harness import (
    DeviationExperiment,
    LdpConfig,
    LdpReport,
    deviation_measure,
    ldp_report,
    rate_fit,
    run_deviation_experiment,
    window_constraints,
)

__version__ = "0.1.0"
