"""Meta-gradient discount tuning.

Thin Python surface over the C++ core: built-in experiment cells, in-memory
training runs, the aggregate CSV/SVG codecs, and the finite-difference
validator for both meta-gradient estimators.
"""

from selftune._core import (
    ConfigError,
    EngineError,
    SchemaError,
    aggregate_csv,
    canonical_config,
    chain_value,
    check_meta_gradients,
    gamma_of_logit,
    logit_of_gamma,
    plot_svg,
    preset_config,
    preset_names,
    run,
    run_metrics_csv,
    __version__,
)

__all__ = [
    "ConfigError",
    "EngineError",
    "SchemaError",
    "aggregate_csv",
    "canonical_config",
    "chain_value",
    "check_meta_gradients",
    "gamma_of_logit",
    "logit_of_gamma",
    "plot_svg",
    "preset_config",
    "preset_names",
    "run",
    "run_metrics_csv",
    "__version__",
]
