"""Multilevel Gaussian random fields and MCMC on structured mesh
hierarchies.

Pipeline: build a mesh hierarchy (`grid`), assemble mass/divergence/
transfer operators (`spaces`), draw white noise single-level or
hierarchically (`noise`), turn noise into Matern fields via a mixed SPDE
solve (`sampler`), push fields through a Darcy forward model (`darcy`),
and run single-/multilevel pCN MCMC with diagnostics (`chain`).
Experiment drivers and serialization live in `lab`, the CLI in `cli`.
"""

__version__ = "0.1.0"

from .chain import (
    ChainError,
    ChainRecord,
    ChainState,
    DiagnosticsError,
    MlmcmcPlan,
    autocorrelation,
    iact,
    init_state,
    mh_step_single,
    mh_step_twolevel,
    ml_estimate,
    pcn_propose,
    plan_allocation,
    run_single_level,
    run_two_level,
    subsample_rate,
    subsampled_mean,
    twolevel_propose,
)
from .darcy import (
    ForwardError,
    ForwardSetup,
    Observation,
    conservation_residual,
    forward_map,
    interpolation_matrix,
    log_likelihood,
    make_forward_fn,
    make_synthetic_data,
    observe,
    qoi_flux,
    solve_darcy,
)
from .grid import GridError, LevelMesh, MeshSpec, build_hierarchy, locate_element, parent_map
from .noise import (
    NoiseError,
    NoiseVector,
    RngStreams,
    conditional_noise,
    decompose_noise,
    hierarchical_noise,
    single_level_noise,
)
from .sampler import (
    FieldRealization,
    SolverError,
    SpdeConfig,
    decompose_realization,
    dense_covariance,
    dense_schur,
    derive_g,
    log_prior_density,
    log_prior_density_from_u,
    marginal_variance,
    matern_nu,
    sample_conditional,
    sample_prior,
    solve_spde,
)
from .spaces import (
    AssemblyError,
    LevelOperators,
    TransferPair,
    assemble_div,
    assemble_rt_mass,
    assemble_theta_mass,
    build_hierarchy_operators,
    build_level_operators,
    build_transfer,
)
