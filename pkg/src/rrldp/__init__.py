"""Randomized response under local differential privacy.

Mechanism matrices, unbiased frequency estimators with analytic variances,
privacy-budget analysis with variance-optimal parameter bounds, and
key-value protocols for degree/weight statistics on weighted bipartite
graphs, all validated by Monte Carlo simulation.
"""

__version__ = "0.1.0"

from .mechanisms import (
    MechanismSpec,
    ProbabilityMatrix,
    build_matrix,
    calibrate_two_element,
    perturb,
    perturb_many,
    response_distribution,
)
from .estimators import (
    CountVector,
    EstimateWithVariance,
    count_variance,
    inversion_estimate,
    mle_numeric,
    mle_symmetric,
    mle_symmetric3,
    mle_three_rate,
    mle_two_rate,
    mle_two_stage,
    var_symmetric,
    var_symmetric3,
    var_three_rate,
    var_two_rate,
    var_two_stage,
)
from .privacy import (
    FeasibleRegion,
    OptimizationResult,
    PrivacyBudget,
    budget_bruteforce,
    compose,
    epsilon_of_matrix,
    lpp0_budget,
    lpp_budget,
    optimal_dummy_weight,
    optimal_p_high,
    optimal_p_low,
    pckv_budget,
    region_contains,
    two_rate_boundary_optimum,
)
from .graphs import (
    WeightedBipartiteGraph,
    averages,
    benchmark_graph,
    degree,
    generate_graph,
    load_edge_list,
    save_edge_list,
    weight,
)
from .protocols import (
    GraphEstimates,
    ProtocolParams,
    Report,
    aggregate,
    category_survey,
    lpp_client,
    lpp_client_many,
    pckv_client_many,
    pckv_perturb,
    vpp,
)
from .experiments import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    parse_config,
    run_experiment,
)
from .streams import substream
