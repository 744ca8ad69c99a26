"""Multivariate cure survival model with positive stable frailty for censored screening histories."""

__version__ = "0.1.0"

from .frailty import (
    FrailtySurvival,
    LagDistribution,
    QuadratureError,
    QuadratureSpec,
    full_density,
    integrate_1d,
    joint_survival,
    lag_cdf,
    median_lag,
    neg_partial_density,
    stable_laplace,
)
from .likelihood import (
    CaseTable,
    DatasetError,
    EligibilityTimeline,
    LikelihoodError,
    ModelConfig,
    SubjectRecord,
    TrajectoryCase,
    case_probability,
    enumerate_cases,
    expected_eta,
    log_likelihood,
    read_dataset,
    write_dataset,
)
from .sampler import (
    ChainConfig,
    ChainOutput,
    GibbsSampler,
    ParameterState,
    PriorConfig,
    SamplerError,
    run_chain,
    run_chains,
    sample_gamma,
    sample_kappa,
    sample_tau,
    sample_theta,
)
from .simulator import (
    CensoringModel,
    Scenario,
    TrueTrajectory,
    WindowDistribution,
    draw_frailty_stable,
    generate_dataset,
    generate_subject,
    paper_scenario,
    replicate_study,
    scenario_grid,
)
from .diagnostics import (
    CurveGrid,
    GridSpec,
    PosteriorSummary,
    empirical_hazard,
    gelman_rubin,
    geweke,
    summarize,
    survival_grids,
)
