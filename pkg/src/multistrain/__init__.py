"""Bayesian surveillance of co-circulating epidemic strains.

Couples K per-strain epidemic indicators into a joint hidden Markov
chain over 2**K states, layers smooth temporal, seasonal, and spatial
risk surfaces under Poisson counts, and provides simulation, manifold
MALA posterior sampling, epidemic-probability decoding, and marginal
likelihood estimation for model comparison.
"""

from .diagnostics import (
    effective_sample_size,
    split_rhat,
    summarize_chains,
)
from .evidence import (
    EvidenceEstimate,
    ParameterMap,
    StudentProposal,
    bridge_sampling_logml,
    fit_proposal,
    importance_sampling_logml,
    posterior_model_probs,
)
from .exceptions import NumericalError, ValidationError
from .likelihood import (
    IncidencePanel,
    LikelihoodEngine,
    RiskComponents,
    SmoothingResult,
    backward_smooth,
    forward_loglik,
    fully_observed_panel,
    smoothed_intensity,
    surface_gradients,
)
from .mcmc import (
    PosteriorDraws,
    SamplerConfig,
    default_structures,
    initial_components,
    log_unnormalized_posterior,
    run_chains,
    run_mcmc,
)
from .models import (
    FIXED_FIRST_LOADING,
    VARIANTS,
    free_transition_parameters,
    TransitionModel,
    VariantSpec,
    initial_model,
    variant_spec,
)
from .panelio import (
    read_adjacency,
    read_draws,
    read_panel,
    read_populations,
    write_adjacency,
    write_draws,
    write_panel,
    write_populations,
)
from .pipeline import (
    EvidenceSettings,
    RunConfig,
    config_hash,
    epidemic_probabilities,
    read_config,
    run_compare,
    run_decode,
    run_fit,
    run_simulate,
    run_validate,
)
from .priors import (
    PriorConfig,
    StructureMatrix,
    crw1_structure,
    dirichlet_prior_weights,
    icar_structure,
    igmrf_gradient,
    igmrf_logdensity,
    rw2_structure,
    sample_igmrf,
)
from .simulate import (
    DEFAULT_NEIGHBOUR_KM,
    Scenario,
    SimulatedPanel,
    adjacency_from_coordinates,
    demo_scenario,
    grid_adjacency,
    simulate_panel,
    simulate_states,
)
from .states import (
    GH_ORDER,
    FrankCopula,
    GaussianFactorCopula,
    IndependenceCopula,
    bit,
    build_copula_coupled,
    build_independent,
    frank_cdf,
    gaussian_factor_cdf,
    state_bits,
    stationary_distribution,
)

__version__ = "0.1.0"
