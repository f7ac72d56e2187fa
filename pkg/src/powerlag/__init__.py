"""Sample size, power and measurement-error bias for matched designs with
distributed-lag exposures, plus a Monte Carlo laboratory to check them."""

from .exceptions import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateStratumError,
    NumericalError,
    PowerlagError,
    SingularDesignError,
)
from .types import (
    BiasSettings,
    ErrorSpec,
    ExposurePanel,
    LagEffect,
    MatchedDesign,
    ScenarioConfig,
    SimSettings,
    Stratum,
    TestSpec,
    VarianceSettings,
    VarianceSummary,
    validate_scenario,
)
from .variance import (
    OlsFit,
    cumulative_exposure,
    fisher_info_alt,
    fisher_info_null,
    ols_fit,
    partial_r2,
    sigma_bar_factor_c,
    sigma_bar_multiplicative,
    sigma_bar_weighted,
    stratum_variance,
)
from .power import (
    SampleSizeResult,
    design_modifier,
    power_at,
    sample_size,
    sample_size_iterative,
    se_approx,
    se_multiplicative,
    vcf,
)
from .bias import (
    BiasReport,
    CalibrationFit,
    ValidationData,
    bl_bias_approx,
    calib_bias_approx,
    compose_ce,
    lambda_linear,
    mb_bias,
    mc_attenuation,
    poly_bias_factor,
    theta_eq19,
    theta_eq20,
)
from .clogit import ClogitFit, clogit_fit, clogit_loglik, clogit_score, wald_test
from .exposure import (
    GroupMapping,
    NoiseField,
    aggregate_groups,
    apply_error,
    gen_exposure_panel,
    gen_noise_field,
)
from .study import (
    OutcomeModel,
    ReplicateSummary,
    gen_outcomes,
    match_case_crossover,
    run_replicates,
)

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DataError",
    "DegenerateStratumError",
    "NumericalError",
    "PowerlagError",
    "SingularDesignError",
    "BiasSettings",
    "ErrorSpec",
    "ExposurePanel",
    "LagEffect",
    "MatchedDesign",
    "ScenarioConfig",
    "SimSettings",
    "Stratum",
    "TestSpec",
    "VarianceSettings",
    "VarianceSummary",
    "validate_scenario",
    "OlsFit",
    "cumulative_exposure",
    "fisher_info_alt",
    "fisher_info_null",
    "ols_fit",
    "partial_r2",
    "sigma_bar_factor_c",
    "sigma_bar_multiplicative",
    "sigma_bar_weighted",
    "stratum_variance",
    "SampleSizeResult",
    "design_modifier",
    "power_at",
    "sample_size",
    "sample_size_iterative",
    "se_approx",
    "se_multiplicative",
    "vcf",
    "BiasReport",
    "CalibrationFit",
    "ValidationData",
    "bl_bias_approx",
    "calib_bias_approx",
    "compose_ce",
    "lambda_linear",
    "mb_bias",
    "mc_attenuation",
    "poly_bias_factor",
    "theta_eq19",
    "theta_eq20",
    "ClogitFit",
    "clogit_fit",
    "clogit_loglik",
    "clogit_score",
    "wald_test",
    "GroupMapping",
    "NoiseField",
    "aggregate_groups",
    "apply_error",
    "gen_exposure_panel",
    "gen_noise_field",
    "OutcomeModel",
    "ReplicateSummary",
    "gen_outcomes",
    "match_case_crossover",
    "run_replicates",
]

__version__ = "0.1.0"
