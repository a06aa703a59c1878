"""Uniform expansion of random volume-preserving walks on the flat torus.

Numerical companion to the construction of random perturbations of a
volume-preserving map: localized divergence-free flows in volume charts,
the random walk they generate, Lyapunov spectra along random orbits, and an
empirical (sampling plus local search) certification of uniform expansion
on every exterior power.
"""
from .certify import (
    CertificateReport,
    CertifyBudget,
    DiscrepancyReport,
    RankCheckReport,
    certify_all_dimensions,
    certify_uniform_expansion,
    equidistribution_test,
    transitivity_rank_check,
)
from .errors import (
    BudgetError,
    ConfigError,
    DegenerateVolumeError,
    IllConditionedGeneratorError,
    IntegratorFailure,
    NumericalCollapseError,
    NumericalError,
    OutOfChartError,
    ParameterError,
    PreconditionError,
    UExpandError,
)
from .exterior import (
    GrassmannPoint,
    compound,
    gram_log_volume,
    log_expansion,
    plucker,
    random_grassmann,
    transport,
)
from .fields import (
    AffineGenerator,
    BumpProfile,
    ChartSpec,
    build_generator,
    bumped_field,
    chart_back,
    chart_forward,
    n_params,
    stream_matrix,
)
from .flow import AffineTorusMap, ComposedDiffeo, LocalizedDiffeo, affine_exp, compose, localized_diffeo
from .lyapunov import (
    ExpansionEstimate,
    LyapunovEstimate,
    expected_log_expansion,
    lyapunov_spectrum,
    top_exponent_k,
)
from .seeding import derive_rng
from .selfcheck import SelfcheckSummary, selfcheck
from .walk import WalkMeasure, build_measure, dirac, discretize, sample, sample_word

__version__ = "0.1.0"
