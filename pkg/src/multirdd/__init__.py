"""Regression discontinuity estimation with multivalued treatments."""

from .data_model import (
    Dataset,
    EstimationConfig,
    ModelSpec,
    TableSchema,
    encode_cells,
    encode_treatment,
    load_table,
    validate_dataset,
)
from .discontinuities import (
    CellTable,
    TwlateWeights,
    cell_jump,
    cell_table,
    plugin_estimator,
    ratio_late,
    relevance,
    twlate_weights,
    wlate_feasibility,
)
from .errors import (
    CellUnusableError,
    EstimationError,
    InputError,
    MultirddError,
    ParseError,
    RelevanceError,
    SchemaError,
    SingularDesignError,
    UnderIdentifiedError,
)
from .estimator import (
    DesignMatrices,
    FitResult,
    build_design,
    cluster_covariance,
    estimate,
    first_stage_diagnostics,
    j_test,
    weighted_2sls,
)
from .kernels import KernelKind, evaluate, one_sided_moment, weights_vector
from .montecarlo import (
    DgpSpec,
    SimResult,
    generate,
    load_dgp_spec,
    population_targets,
    run_study,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "TableSchema",
    "ModelSpec",
    "EstimationConfig",
    "load_table",
    "encode_treatment",
    "encode_cells",
    "validate_dataset",
    "KernelKind",
    "evaluate",
    "weights_vector",
    "one_sided_moment",
    "CellTable",
    "TwlateWeights",
    "cell_jump",
    "cell_table",
    "relevance",
    "twlate_weights",
    "plugin_estimator",
    "ratio_late",
    "wlate_feasibility",
    "DesignMatrices",
    "FitResult",
    "build_design",
    "weighted_2sls",
    "cluster_covariance",
    "j_test",
    "first_stage_diagnostics",
    "estimate",
    "DgpSpec",
    "SimResult",
    "population_targets",
    "generate",
    "run_study",
    "load_dgp_spec",
    "MultirddError",
    "InputError",
    "SchemaError",
    "ParseError",
    "EstimationError",
    "CellUnusableError",
    "RelevanceError",
    "UnderIdentifiedError",
    "SingularDesignError",
]
