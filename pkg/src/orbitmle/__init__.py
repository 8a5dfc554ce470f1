"""Maximum-likelihood orbit state estimation from a multistatic radar
network, with empirical verification of the estimator's strong-consistency
conditions."""

from .core import (
    EARTH_RADIUS,
    POSITION_SCALE,
    SPEED_OF_LIGHT,
    VELOCITY_SCALE,
    GeometryError,
    MeasurementTuple,
    ParameterBounds,
    RadarSite,
    Scenario,
    StateVector,
    derive_stream,
    project_to_feasible,
)
from .vmf import (
    VmfParams,
    vmf_covariance_bound,
    vmf_log_density,
    vmf_mean_resultant,
    vmf_sample,
)
from .measurement import (
    PredictedMeasurement,
    generate_sites,
    noiseless_tuples,
    predict,
    read_measurement_csv,
    simulate_scenario,
    simulate_tuple,
    write_measurement_csv,
)
from .likelihood import (
    BallSupConfig,
    Channels,
    ObjectiveBreakdown,
    gradient,
    log_density_tuple,
    log_ratio_term,
    objective,
    sup_log_density_ball,
)
from .solver import EstimationResult, RadarMLE, SolverOptions, estimate, initialize
from .consistency import (
    AssumptionCheckConfig,
    ConsistencyReport,
    LogRatioStats,
    check_assumption_iv,
    check_assumption_v,
    check_identifiability,
    check_lemma_approximations,
    compute_bn,
    default_far_probes,
    run_consistency_sweep,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
