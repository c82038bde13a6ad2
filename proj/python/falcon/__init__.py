"""Desk-scale simulated loco-manipulation: world, policies and evaluation."""

from ._core import (
    RunConfig,
    World,
    WorldState,
    collect,
    evaluate,
    info_nce,
    is_derangement,
    load_config,
    progress,
    sample_derangement,
    total_loss,
    train,
)

__all__ = [
    "RunConfig",
    "World",
    "WorldState",
    "collect",
    "evaluate",
    "info_nce",
    "is_derangement",
    "load_config",
    "progress",
    "sample_derangement",
    "total_loss",
    "train",
]
