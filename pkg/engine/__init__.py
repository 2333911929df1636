from .config_loader import design_spec_from_config, load_config, scenario_from_config
from .corr_assembly import (
    EstimatedSource,
    ExactSource,
    GaussianApprox,
    StochasticSource,
    assemble,
    cross_cor,
    within_stage_cor,
    within_test_cor,
)
from .design_engine import (
    DesignReport,
    DesignSpec,
    MvnSettings,
    SpendingSpec,
    design,
    predict_stopping_times,
    sample_size_curve,
    schoenfeld_events,
    solve_boundaries,
    solve_sample_size,
    spending,
)
from .errors import (
    ConfigError,
    DegenerateError,
    DomainError,
    EngineError,
    InconsistentCorrelationError,
    InfeasibleStageError,
    NoEffectError,
    SolverError,
    UnsupportedWeightError,
)
from .exact_predict import ExactScenario, exact_covariance, exact_variance
from .mvn_quad import MvnProblem, MvnResult, median_of_replicates, mvn_rectangle
from .stoch_predict import LOGRANK, WeightSpec, march, predict_mean, predict_variance
from .surv_model import AccrualCensoring, PiecewiseExponential, TwoArmModel, two_piece
from .trial_sim import (
    OperatingCharacteristics,
    Scenario,
    generate_trial,
    operating_characteristics,
    run_group_sequential,
    sample_correlation_report,
)
from .wlrt_engine import FrozenView, TrialData, freeze, read_trial_csv, wlrt_statistic

__version__ = "0.1.0"
