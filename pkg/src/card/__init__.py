"""Condition-aware generation of communication topologies for agent teams."""

from .agents import AgentProfile, ConditionFeature, ConditionSet, Query
from .analysis import TopologyStats, adapt, pearson, stats
from .embedding import EmbedderSpec, batch_embed, embed
from .generator import GeneratorParams, generate, init_params, load_checkpoint, save_checkpoint
from .graph import AnchorTopology, CommTopology, break_cycles, schedule, threshold
from .runtime import aggregate, run_rounds
from .training import CostModel, TrainConfig, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AgentProfile", "AnchorTopology", "CommTopology", "ConditionFeature", "ConditionSet", "CostModel",
    "EmbedderSpec", "GeneratorParams", "Query", "TopologyStats", "TrainConfig", "adapt", "aggregate",
    "batch_embed", "break_cycles", "embed", "generate", "init_params", "load_checkpoint", "pearson",
    "run_rounds", "save_checkpoint", "schedule", "stats", "threshold", "train", "train_step",
]
