"""
Escaping sets of meromorphic functions with prescribed order.

This package builds meromorphic functions from elliptic functions and comb conformal
maps, enumerates their poles, and estimates the Hausdorff dimension of the escaping set
from the convergence exponent of the pole series.
"""

__version__ = "0.1.0"

from .config import (
    AcceptanceConfig,
    DimensionOptions,
    GrowthOptions,
    MapOptions,
    RunConfig,
    build_run_config,
    get_default_config,
)
from .errors import (
    ArtifactError,
    CompletenessError,
    ConfigurationError,
    EscapeDimError,
    EvaluationRangeExceeded,
    InsufficientBlocks,
)
from .escape_dimension import (
    DimensionEstimate,
    GrowthCurve,
    critical_exponent,
    growth_curve,
    theoretical_bound,
)
from .logging_config import get_logger, log_exception, setup_logging
from .speiser_constructions import Construction, FunctionHandle, PoleAtlas, construct

__all__ = [
    "AcceptanceConfig",
    "ArtifactError",
    "CompletenessError",
    "ConfigurationError",
    "Construction",
    "DimensionEstimate",
    "DimensionOptions",
    "EscapeDimError",
    "EvaluationRangeExceeded",
    "FunctionHandle",
    "GrowthCurve",
    "GrowthOptions",
    "InsufficientBlocks",
    "MapOptions",
    "PoleAtlas",
    "RunConfig",
    "__version__",
    "build_run_config",
    "construct",
    "critical_exponent",
    "get_default_config",
    "get_logger",
    "growth_curve",
    "log_exception",
    "setup_logging",
    "theoretical_bound",
]
