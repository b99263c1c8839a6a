"""Skew convolution semigroups, immigration superprocesses and their particle approximations
on finite state spaces."""

__version__ = "0.1.0"

from .measure import SiteSet, FiniteMeasure, TestFunction, integrate, normalize
from .motion import MotionModel, KillingRate, transition, killed_transition, h_transform, excessive_h
from .cumulant import (
    BranchingMechanism,
    CumulantSolution,
    PEntranceLaw,
    DivergenceError,
    phi_eval,
    solve_cumulant,
    solve_cumulant_occupation,
    s_functional,
    s_functional_occupation,
    moment_flow,
)
from .semigroup import (
    EntranceLawSpec,
    SCSemigroupSpec,
    InhomogeneousSCSpec,
    ClosedInitialLaw,
    entrance_log_laplace,
    sc_log_laplace,
    verify_skew_homogeneous,
    transition_log_laplace,
    inhomogeneous_log_laplace,
    verify_sc_axiom,
    longtime_decompose,
)
from .particles import (
    ImmigrationSpec,
    ParticleModel,
    simulate_superprocess,
    simulate_immigration,
    simulate_stationary,
    sample_cluster,
    run_replicates,
    near_birth_diagnostic,
)
from .experiments import ExperimentConfig, ConfigError, load_config, run, list_checks
