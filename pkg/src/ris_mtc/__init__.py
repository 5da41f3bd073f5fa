"""Link-level simulation and design of RIS-aided machine-type communication
for distributed parameter estimation.

Sensors send correlated measurements over a shared channel to a
multi-antenna collector assisted by a reconfigurable intelligent surface.
The package draws channels, trains and estimates the cascaded CSI, models
successive-interference-cancellation decoding with finite-blocklength
errors and optimizes the surface phases, pilot grouping and decoding order
for the average parameter MSE.
"""

from .config import ConfigError
from .csi import (
    BINARY, NONBINARY, CascadedPrior, CsiEstimate, PilotBook, TrainingProtocol,
    build_training_matrix, cascaded_prior_moments, lmmse_estimate, lmmse_filter,
    observation_moments, simulate_training,
)
from .channel import ChannelRealization, RisConfiguration, SteeringVectors, draw_channels
from .decoding import (
    DecodingOrder, MseTable, conditional_mse, effective_sinr, fbl_per, kappa,
    outcome_probabilities, per_bounds, uatf_sinr,
)
from .evaluator import (
    ExperimentSpec, ResultRow, ResultTable, average_mse, average_mse_no_sic,
    benchmark_ordering, nmse, run_sweep,
)
from .montecarlo import SystemModel, TrialBank
from .optimizer import (
    AoSettings, AoState, alternating_optimize, order_combined, order_greedy,
    order_measurement, order_random, order_rx_power,
)
from .scenario import (
    Geometry, ParameterStatistics, RadioConfig, ResourceBudget, Scenario, build_scenario,
    feasible_group_sizes,
)

__version__ = "0.1.0"

__all__ = [
    "AoSettings", "AoState", "BINARY", "CascadedPrior", "ChannelRealization", "ConfigError",
    "CsiEstimate", "DecodingOrder", "ExperimentSpec", "Geometry", "MseTable", "NONBINARY",
    "ParameterStatistics", "PilotBook", "RadioConfig", "ResourceBudget", "ResultRow",
    "ResultTable", "RisConfiguration", "Scenario", "SteeringVectors", "SystemModel",
    "TrainingProtocol", "TrialBank", "alternating_optimize", "average_mse", "average_mse_no_sic",
    "benchmark_ordering", "build_scenario", "build_training_matrix", "cascaded_prior_moments",
    "conditional_mse", "draw_channels", "effective_sinr", "fbl_per", "feasible_group_sizes",
    "kappa", "lmmse_estimate", "lmmse_filter", "nmse", "observation_moments", "order_combined",
    "order_greedy", "order_measurement", "order_random", "order_rx_power",
    "outcome_probabilities", "per_bounds", "run_sweep", "simulate_training", "uatf_sinr",
]
