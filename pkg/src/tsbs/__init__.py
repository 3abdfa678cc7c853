"""Option pricing under the tempered subdiffusive Black-Scholes model."""

from tsbs.market import (
    MarketParams,
    OptionKind,
    PdeCoefficients,
    SubdiffusionParams,
    bs_price,
    parity_gap,
    payoff,
    pde_coefficients,
    smoothed_payoff,
)
from tsbs.fd import (
    GridSpec,
    MemoryWeights,
    SchemeOperators,
    SolutionSurface,
    assemble_operators,
    boundary_vector,
    convergence_study,
    memory_weights,
    price_at_spot,
    solve,
    step,
)
from tsbs.stability import (
    ConditionReport,
    check_implicit_condition,
    check_weighted_stability,
    find_stabilizing_beta,
    optimal_theta_subdiffusive,
    rescale_parameters,
)
from tsbs.stochastic import (
    PathParams,
    PricerEstimate,
    RngStream,
    SubordinatorSample,
    crr_price,
    inverse_subordinator_sample,
    mc_price,
    sample_stable_increment,
    sample_tempered_increment,
    simulate_tempered_gbm_path,
)

__version__ = "0.1.0"
