"""Simulator for structure-free duplicate-insensitive aggregation in mobile ad-hoc networks."""

__version__ = "0.1.0"

from .baselines import TreeOptions, TreeState, run_plain_rw, run_srrw, run_tree
from .harness import connected_world, run_experiment
from .hierarchy import CellToken, HierarchyConfig, run_hier
from .metrics import BatchSummary, TrialStats, exploration_overhead, summarize, visit_variance
from .mobility import MobilityConfig, link_change_rate, mobility_step
from .netsim import MediumConfig, Message, MsgKind, Simulator, run_until
from .oracles import (
    coupon_expected_draws,
    exact_distinct,
    gossip_projection,
    markov_cover_expectation,
    predicted_hier_messages,
)
from .protocol import EzagOptions, disseminate_result, flood_request, push_phase, run_ezag
from .synopsis import Kind, OdiSynopsis, estimate_count, synopsis_insert, synopsis_merge
from .world import DEFAULT_DENSITY, World, WorldConfig, build_world, cell_of, is_connected, neighbors

__all__ = [
    "DEFAULT_DENSITY",
    "BatchSummary",
    "CellToken",
    "EzagOptions",
    "HierarchyConfig",
    "Kind",
    "MediumConfig",
    "Message",
    "MobilityConfig",
    "MsgKind",
    "OdiSynopsis",
    "Simulator",
    "TreeOptions",
    "TreeState",
    "TrialStats",
    "World",
    "WorldConfig",
    "build_world",
    "cell_of",
    "connected_world",
    "coupon_expected_draws",
    "disseminate_result",
    "estimate_count",
    "exact_distinct",
    "exploration_overhead",
    "flood_request",
    "gossip_projection",
    "is_connected",
    "link_change_rate",
    "markov_cover_expectation",
    "mobility_step",
    "neighbors",
    "predicted_hier_messages",
    "push_phase",
    "run_experiment",
    "run_ezag",
    "run_hier",
    "run_plain_rw",
    "run_srrw",
    "run_tree",
    "run_until",
    "summarize",
    "synopsis_insert",
    "synopsis_merge",
    "visit_variance",
]
