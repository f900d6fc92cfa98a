"""Observation-function and sensor-placement synthesis for MDPs."""
from .mdp import (
    BLIND_OBS,
    GOAL_OBS,
    INFINITE,
    MarkovChain,
    Mdp,
    ObservationFunction,
    PositionalStrategy,
    ValueVector,
    chain_expected_reward,
    induce_chain,
    min_expected_reward,
    optimal_signatures,
    pomdp_reward_under_strategy,
    validate_mdp,
)
from .worlds import gen_grid, gen_line, gen_maze, load_mdp, save_mdp, trap_mdp

__version__ = "0.1.0"
