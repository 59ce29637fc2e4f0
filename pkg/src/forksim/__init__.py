"""forksim: longest-chain withholding strategies, fork-pattern detection, and
exact Markov reward analysis at desk scale."""

from .engine import (GameParams, GameResult, RoundDistribution, couple_check,
                     reduce_hashrates, round_distribution, run_game,
                     target_latency)
from .model import (Block, HeightState, StateSequence, View, height_states,
                    longest_chain, reward_fraction)

__version__ = "0.1.0"

__all__ = [
    "Block", "View", "HeightState", "StateSequence", "height_states",
    "longest_chain", "reward_fraction", "GameParams", "GameResult",
    "RoundDistribution", "run_game", "couple_check", "reduce_hashrates",
    "round_distribution", "target_latency", "__version__",
]
