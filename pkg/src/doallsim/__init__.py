"""Simulator and protocol library for cooperative task completion under
crash failures: expander overlay construction, a deterministic synchronous
round engine, pluggable selection rules and adversaries, and an offline
trace analyzer."""

from .adversaries import (AllButOne, CrashCoordinators, CrashDecision, FChain,
                          NoCrashes, RandomBounded, Scripted, make_policy)
from .effort import EffortParams, EffortPriority, derive_params
from .engine import (BalanceLoad, DeterministicPermutations,
                     RandomizedPermutations, TraceOptions, run_simulation)
from .errors import (ConfigError, DoAllError, FormatError, GraphError,
                     ParameterError, ScheduleError, ShapeError, SpecError)
from .graphs import (ExpanderGraph, OverlayGraph, PowerParams, SpectralReport,
                     build_lps, build_overlay, compact_threshold,
                     flood_horizon, graph_power, random_regular,
                     select_power_params, spectral_check, tanner_lower_bound)
from .rules import (PermutationPair, balance_rank, balance_select,
                    load_fixed_permutations, make_random_permutations,
                    pi2_domain)
from .trace import Envelope, RunMetrics, RunTrace, account, crash_apply

__all__ = [name for name in dir() if not name.startswith("_")]
