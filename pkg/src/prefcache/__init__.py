"""Cache placement at base stations driven by user preference, activity and locality."""
from .baselines import (
    femtocaching_pop,
    femtocaching_pref,
    global_pop_policy,
    local_pop_policy,
)
from .delay import CachePolicy, DelayReport, evaluate, user_avg_delay, user_delays
from .demand import DemandModel, InfeasibleSimilarityError, synthesize_demand
from .geometry import NetworkLayout, build_layout, isolated_layout, locate, toy_layout
from .montecarlo import SimConfig, SimResult, simulate
from .optimizer import LpSolveError, build_lp, solve, solve_policy1, solve_policy2
from .radio import RadioParams, TauTable, compute_tau_table

__version__ = "0.1.0"
