"""Multiscale transportation networks with congestion-dependent tolls."""

from .benchmarks import (Benchmark, single_path, skewed_wheatstone, three_parallel, two_parallel, two_stage,
                         wheatstone)
from .choice import local_decision, logit_map, logit_response, path_costs
from .config import ExperimentConfig, bundled_config, load_config
from .dynamics import SimConfig, SimState, Trajectory, convergence_time, drift, simulate, step, tail_distance
from .equilibrium import (
    EquilibriumResult,
    LatencyReport,
    fixed_marginal_tolls,
    grid_oracle,
    perturbed_equilibrium,
    social_optimum,
    total_latency,
    wardrop,
    wardrop_gap,
)
from .links import (
    SENTINEL,
    LinkArray,
    LinkParams,
    TollPolicy,
    delay,
    delay_derivative,
    density_of_flow,
    flow_of_density,
    perceived_cost_integral,
    toll,
)
from .network import Network, PathSet, build_network, enumerate_paths, path_flows

__version__ = "0.1.0"
