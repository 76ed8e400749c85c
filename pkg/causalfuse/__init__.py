from .config import ThreadPoolConfig, get_num_threads, set_num_threads
from .data import (
    CovariateSet,
    DatasetSchema,
    DatasetView,
    Design,
    FusedDataset,
    UnitRecord,
    load_csv,
    main_view,
    validation_view,
    write_csv,
)
from .design import (
    Allocation,
    AllocationProblem,
    allocation_variance,
    optimal_allocation,
)
from .errors import (
    CausalFuseError,
    DataError,
    EstimationWarning,
    NumericalError,
)
from .estimating import ModelFit, ModelKind, ModelSpec, fit_model, predict
from .estimators import (
    Estimand,
    EstimateWithExpansion,
    EstimatorForm,
    EstimatorKind,
    EstimatorOptions,
    Method,
    aipw,
    error_prone_pair,
    estimate,
    initial_estimate,
    ipw,
    matching_bias_corrected,
    reg_imputation,
)
from .fusion import (
    BootstrapSpec,
    FusionInputs,
    FusionResult,
    ResampleScheme,
    SensitivityPoint,
    SourcePair,
    VarianceSource,
    analytic_gamma_v,
    bootstrap_gamma_v,
    combine,
    fuse,
    fuse_multi,
    fuse_ratio_estimand,
    sensitivity_curve,
)
from .matching import DistanceScaling, MatchResult, find_matches
from .replicates import ParallelReplicates, par_replicates
from .sim import (
    MenuItem,
    Misspecification,
    SimConfig,
    SimReport,
    generate,
    run_monte_carlo,
    true_tau,
)

__version__ = "0.1.0"

__all__ = [
    "CovariateSet",
    "DatasetSchema",
    "DatasetView",
    "Design",
    "FusedDataset",
    "UnitRecord",
    "load_csv",
    "write_csv",
    "main_view",
    "validation_view",
    "ModelSpec",
    "ModelKind",
    "ModelFit",
    "fit_model",
    "predict",
    "DistanceScaling",
    "MatchResult",
    "find_matches",
    "Method",
    "Estimand",
    "EstimatorForm",
    "EstimatorKind",
    "EstimatorOptions",
    "EstimateWithExpansion",
    "reg_imputation",
    "ipw",
    "aipw",
    "matching_bias_corrected",
    "estimate",
    "initial_estimate",
    "error_prone_pair",
    "FusionInputs",
    "FusionResult",
    "BootstrapSpec",
    "ResampleScheme",
    "VarianceSource",
    "SourcePair",
    "SensitivityPoint",
    "analytic_gamma_v",
    "bootstrap_gamma_v",
    "combine",
    "fuse",
    "fuse_multi",
    "fuse_ratio_estimand",
    "sensitivity_curve",
    "AllocationProblem",
    "Allocation",
    "optimal_allocation",
    "allocation_variance",
    "SimConfig",
    "SimReport",
    "MenuItem",
    "Misspecification",
    "generate",
    "true_tau",
    "run_monte_carlo",
    "ParallelReplicates",
    "par_replicates",
    "ThreadPoolConfig",
    "set_num_threads",
    "get_num_threads",
    "CausalFuseError",
    "DataError",
    "NumericalError",
    "EstimationWarning",
]
