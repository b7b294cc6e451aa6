"""Cramér–Rao bounds for magnetic-induction localization of underground things."""
from .channel import (
    ChannelDomainError,
    ChannelParams,
    CoilSpec,
    NoiseModel,
    NoiseSpec,
    coupling_constant,
    log_likelihood,
    mean_power_gradient,
    received_power,
    sample_measurement,
)
from .deployment import (
    Deployment,
    DeploymentError,
    MeasurementGraph,
    RadioConfig,
    ScenarioConfig,
    build_measurement_graph,
    generate_deployment,
    pairwise_distance,
    read_deployment,
    write_deployment,
)
from .estimator import (
    EstimateResult,
    EstimationDivergedError,
    MLELocalizer,
    SolverOptions,
    mle_localize,
    multi_start,
    rmse,
)
from .experiments import (
    Scenario,
    SweepConfig,
    SweepResult,
    efficiency_study,
    emit_csv,
    emit_plotdata,
    monte_carlo_crlb,
    run_sweep,
)
from .fim import (
    CrlbReport,
    FimMatrix,
    SingularBlockError,
    compare_modes,
    crlb_paper,
    crlb_standard,
    fim_oracle_fd,
    fim_oracle_mc,
    fim_paper,
    fim_standard,
)

__version__ = "0.1.0"
