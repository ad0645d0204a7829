"""Tabular fluid games: text format, embedding, subgame-perfect solving and Nash verification."""

from .game import (
    DUMMY,
    ExtensiveFormGame,
    Strategy,
    TabularPOFSG,
    format_game,
    lift_strategy,
    load_game,
    parse_game,
    random_game,
    sequentialize,
    two_stage_spawn_game,
    uniform_strategy,
)
from .solve import (
    NashVerdict,
    SpneResult,
    backward_induction_spne,
    embedding_gap,
    enumerate_pure_spne,
    perturb,
    policy_value,
    stage_nash,
    verify_nash,
)

__all__ = [
    "DUMMY",
    "ExtensiveFormGame",
    "NashVerdict",
    "SpneResult",
    "Strategy",
    "TabularPOFSG",
    "backward_induction_spne",
    "embedding_gap",
    "enumerate_pure_spne",
    "format_game",
    "lift_strategy",
    "load_game",
    "parse_game",
    "perturb",
    "policy_value",
    "random_game",
    "sequentialize",
    "stage_nash",
    "two_stage_spawn_game",
    "uniform_strategy",
    "verify_nash",
]
