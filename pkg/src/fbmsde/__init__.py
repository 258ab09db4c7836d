"""Positivity-preserving drift-implicit Euler scheme for one-dimensional SDEs
driven by fractional Brownian motion (H > 1/2) with drifts singular at zero,
plus the machinery to verify its strong convergence order empirically."""

from .convergence import (
    ConvergenceReport,
    ExperimentPlan,
    MomentProbe,
    OrderFit,
    critical_horizon,
    fit_order,
    moment_probe,
    reference_bias_check,
    run_strong_error,
)
from .config import RunConfig, parse_config
from .drifts import (
    AitSahaliaModel,
    AssumptionCertificate,
    AuditReport,
    DriftFn,
    MeanRevertingModel,
    ModelSpec,
    ait_sahalia_drift,
    audit_assumptions,
    lamperti_forward,
    lamperti_inverse,
    mean_reverting_drift,
    validate_certificate,
)
from .errors import (
    ConfigError,
    EmbeddingError,
    FactorizationError,
    FbmsdeError,
    IntegrationError,
    NumericalError,
    ParameterError,
    RootBracketError,
    UsageError,
)
from .fbm import (
    CholeskySampler,
    CirculantSampler,
    FbmPath,
    Hurst,
    TimeGrid,
    empirical_increment_moment,
    fbm_covariance,
    mix_seed,
    sample_fbm_cholesky,
    sample_fbm_circulant,
    subsample,
)
from .solver import (
    Interpolant,
    SchemeConfig,
    SolutionPath,
    implicit_step,
    integrate,
    interpolate,
    power_path,
)

__version__ = "0.1.0"
