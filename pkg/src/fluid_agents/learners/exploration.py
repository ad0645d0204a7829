"""Epsilon-greedy action selection with a dedicated spawn probability inside the random branch."""

import numpy as np

from ..pofsg import DUMMY_ACTION


def spawn_eps_schedule(step: int, total_steps: int, max_eps_spawn: float) -> float:
    """Linear ramp from 0 at step 0 to ``max_eps_spawn`` at ``total_steps``."""
    if total_steps <= 0:
        return max_eps_spawn
    step = min(max(step, 0), total_steps)
    return max_eps_spawn * step / total_steps


def exploration_probs(n_actions: int, eps_spawn: float, spawn_action: int) -> np.ndarray:
    """Random-branch distribution: spawn w.p. eps_spawn, the rest split evenly."""
    probs = np.full(n_actions, (1.0 - eps_spawn) / (n_actions - 1))
    probs[spawn_action] = eps_spawn
    return probs


def select_action_eps_greedy(q_values: np.ndarray, eps: float, eps_spawn: float, spawn_action: int,
                             alive: bool, rng: np.random.Generator) -> int:
    if not alive:
        return DUMMY_ACTION
    q_values = np.asarray(q_values)
    if rng.random() >= eps:
        return int(np.argmax(q_values))  # first maximum, i.e. lowest index on ties
    return int(rng.choice(len(q_values), p=exploration_probs(len(q_values), eps_spawn, spawn_action)))


def eps_greedy_actions(q_values: np.ndarray, alive: np.ndarray, eps: float, eps_spawn: float,
                       spawn_action: int, rng: np.random.Generator) -> np.ndarray:
    """Batched ``select_action_eps_greedy`` over q_values of shape (..., n_actions)."""
    n_actions = q_values.shape[-1]
    actions = np.argmax(q_values, axis=-1)
    explore = rng.random(actions.shape) < eps
    spawn = rng.random(actions.shape) < eps_spawn
    other = rng.integers(0, n_actions - 1, size=actions.shape)
    other = np.where(other >= spawn_action, other + 1, other)
    random_actions = np.where(spawn, spawn_action, other)
    actions = np.where(explore, random_actions, actions)
    return np.where(alive, actions, DUMMY_ACTION).astype(np.int64)
