"""
Exact solvers for tabular fluid games
=====================================

Values are computed by backward recursion for finite horizons and by a
linear solve (policy evaluation) or value iteration otherwise. Stage games
with two players are solved by support enumeration through nashpy; one
player takes the argmax; more players fall back to pure equilibria.
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import nashpy as nash
import numpy as np

from ..errors import ConfigError, NashSolveError
from .game import Joint, State, Strategy, TabularPOFSG, lift_strategy

logger = logging.getLogger(__name__)

NASH_TOL = 1e-9
VALUE_ITERATION_TOL = 1e-12
MAX_VALUE_ITERATIONS = 1_000_000

ValueKey = Tuple[Optional[int], State]
ValueTable = Dict[ValueKey, np.ndarray]


# ---------------------------------------------------------------- stage games

def _contract(tensor: np.ndarray, profile: Sequence[np.ndarray], keep: Optional[int] = None) -> np.ndarray:
    result = tensor
    for axis in reversed(range(len(profile))):
        if axis != keep:
            result = np.tensordot(result, profile[axis], axes=([axis], [0]))
    return result


def expected_payoffs(payoffs: Sequence[np.ndarray], profile: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([float(_contract(p, profile)) for p in payoffs])


def deviation_gains(payoffs: Sequence[np.ndarray], profile: Sequence[np.ndarray]) -> np.ndarray:
    """Per player: best pure deviation payoff minus the profile's payoff."""
    gains = []
    for i, p in enumerate(payoffs):
        per_action = _contract(p, profile, keep=i)
        gains.append(float(per_action.max() - per_action @ profile[i]))
    return np.array(gains)


def pure_equilibria(payoffs: Sequence[np.ndarray], tol: float = NASH_TOL) -> List[Tuple[int, ...]]:
    shape = payoffs[0].shape
    found = []
    for joint in itertools.product(*(range(n) for n in shape)):
        stable = True
        for i, p in enumerate(payoffs):
            line = p[joint[:i] + (slice(None),) + joint[i + 1:]]
            if line.max() - p[joint] > tol:
                stable = False
                break
        if stable:
            found.append(joint)
    return found


def _one_hot(n: int, k: int) -> np.ndarray:
    v = np.zeros(n)
    v[k] = 1.0
    return v


def _clean(probs: np.ndarray) -> np.ndarray:
    probs = np.where(np.asarray(probs, dtype=np.float64) < 1e-12, 0.0, probs)
    return probs / probs.sum()


def _selection_key(profile: Sequence[np.ndarray]):
    supports = [tuple(np.flatnonzero(p > 0)) for p in profile]
    return supports, [tuple(-p) for p in profile]


def select_equilibrium(profiles: Sequence[Sequence[np.ndarray]]) -> List[np.ndarray]:
    """The profile with the lexicographically smallest supports, then the most mass on low indices."""
    return list(min(profiles, key=_selection_key))


def stage_nash(payoffs: Sequence[np.ndarray], tol: float = NASH_TOL) -> List[np.ndarray]:
    """Mixed equilibrium of a normal-form stage game.

    ``payoffs[i]`` has one axis per player. Among several equilibria
    ``select_equilibrium`` picks one.
    """
    payoffs = [np.asarray(p, dtype=np.float64) for p in payoffs]
    n_players = len(payoffs)
    if n_players == 0:
        return []
    if n_players == 1:
        return [_one_hot(len(payoffs[0]), int(np.argmax(payoffs[0])))]

    shape = payoffs[0].shape
    candidates = [[_one_hot(shape[i], k) for i, k in enumerate(joint)] for joint in pure_equilibria(payoffs, tol)]
    if n_players == 2:
        with warnings.catch_warnings():
            # nashpy warns about degenerate games; pure equilibria are added separately.
            warnings.simplefilter("ignore")
            for x, y in nash.Game(payoffs[0], payoffs[1]).support_enumeration():
                candidates.append([_clean(x), _clean(y)])
    elif not candidates:
        raise NashSolveError(f"no pure equilibrium in a {n_players}-player stage game of shape {shape}")

    valid = [c for c in candidates if deviation_gains(payoffs, c).max() <= tol]
    if not valid:
        raise NashSolveError(f"support enumeration found no equilibrium within {tol} for shape {shape}")
    return select_equilibrium(valid)


# ------------------------------------------------------------------ values

def joint_distribution(game: TabularPOFSG, strategy: Strategy, t: Optional[int],
                       state: State) -> List[Tuple[Joint, float]]:
    alive = game.alive[state]
    dists = [strategy.dist(t, state, i) for i in alive]
    out = []
    for joint in game.joint_actions(state):
        p = 1.0
        for i, (agent, action) in enumerate(zip(alive, joint)):
            p *= dists[i][game.agent_actions(state, agent).index(action)]
        if p > 0:
            out.append((joint, p))
    return out


def _continuation(game: TabularPOFSG, values: ValueTable, t: Optional[int], state: State,
                  joint: Joint) -> np.ndarray:
    nxt = None if t is None else t + 1
    total = np.zeros(game.n_agents)
    for s2, p in game.next_states(state, joint).items():
        total += p * values.get((nxt, s2), np.zeros(game.n_agents))
    return total


def policy_value(game: TabularPOFSG, strategy: Strategy, keys: Optional[Set[ValueKey]] = None) -> ValueTable:
    """Exact value vector (one entry per agent) of ``strategy`` at every (stage, state).

    Finite horizons recurse backwards; infinite horizons solve
    ``(I - gamma P) V = R`` for the stationary strategy.
    """
    if game.horizon is None:
        return _stationary_value(game, strategy)
    values: ValueTable = {}
    for t in reversed(range(game.horizon)):
        for s in game.states:
            if keys is not None and (t, s) not in keys:
                continue
            v = np.zeros(game.n_agents)
            if not game.is_terminal(s):
                for joint, p in joint_distribution(game, strategy, t, s):
                    v += p * (game.reward(s, joint) + game.gamma * _continuation(game, values, t, s, joint))
            values[(t, s)] = v
    return values


def _stationary_value(game: TabularPOFSG, strategy: Strategy) -> ValueTable:
    index = {s: k for k, s in enumerate(game.states)}
    n = len(game.states)
    transition = np.zeros((n, n))
    reward = np.zeros((n, game.n_agents))
    for s in game.states:
        if game.is_terminal(s):
            continue
        for joint, p in joint_distribution(game, strategy, None, s):
            reward[index[s]] += p * game.reward(s, joint)
            for s2, q in game.next_states(s, joint).items():
                transition[index[s], index[s2]] += p * q
    solved = np.linalg.solve(np.eye(n) - game.gamma * transition, reward)
    return {(None, s): solved[index[s]] for s in game.states}


def _own_action_values(game: TabularPOFSG, strategy: Strategy, agent: int, t: Optional[int], state: State,
                       continuation: ValueTable) -> np.ndarray:
    """Agent's value for each of its own actions, others playing ``strategy``."""
    alive = game.alive[state]
    own = alive.index(agent)
    labels = game.agent_actions(state, agent)
    dists = {i: strategy.dist(t, state, i) for i in alive if i != agent}
    q = np.zeros(len(labels))
    for joint in game.joint_actions(state):
        p = 1.0
        for i, action in zip(alive, joint):
            if i != agent:
                p *= dists[i][game.agent_actions(state, i).index(action)]
        if p == 0:
            continue
        nxt = None if t is None else t + 1
        cont = sum(prob * continuation.get((nxt, s2), 0.0) for s2, prob in game.next_states(state, joint).items())
        q[labels.index(joint[own])] += p * (game.reward(state, joint)[agent - 1] + game.gamma * cont)
    return q


def _others_value(game: TabularPOFSG, strategy: Strategy, agent: int, t: Optional[int], state: State,
                  continuation: ValueTable) -> float:
    """Agent's value in a state where it has no choice."""
    nxt = None if t is None else t + 1
    total = 0.0
    for joint, p in joint_distribution(game, strategy, t, state):
        cont = sum(prob * continuation.get((nxt, s2), 0.0) for s2, prob in game.next_states(state, joint).items())
        total += p * (game.reward(state, joint)[agent - 1] + game.gamma * cont)
    return total


def best_response_values(game: TabularPOFSG, strategy: Strategy, agent: int,
                         keys: Optional[Set[ValueKey]] = None) -> Dict[ValueKey, float]:
    """Optimal value of ``agent`` against the others' fixed strategies (a single-agent MDP)."""

    def backup(t, s, cont) -> float:
        if game.is_terminal(s):
            return 0.0
        if agent in game.alive[s] and len(game.agent_actions(s, agent)) > 0:
            return float(_own_action_values(game, strategy, agent, t, s, cont).max())
        return _others_value(game, strategy, agent, t, s, cont)

    if game.horizon is not None:
        values: Dict[ValueKey, float] = {}
        for t in reversed(range(game.horizon)):
            for s in game.states:
                if keys is None or (t, s) in keys:
                    values[(t, s)] = backup(t, s, values)
        return values

    values = {k: float(v[agent - 1]) for k, v in _stationary_value(game, strategy).items()}
    for iteration in range(MAX_VALUE_ITERATIONS):
        updated = {(None, s): backup(None, s, values) for s in game.states}
        delta = max(abs(updated[k] - values[k]) for k in updated)
        values = updated
        if delta < VALUE_ITERATION_TOL:
            logger.debug("value iteration for agent %d converged after %d sweeps", agent, iteration + 1)
            break
    else:
        logger.warning("value iteration for agent %d stopped at %d sweeps", agent, MAX_VALUE_ITERATIONS)
    return values


def reachable_keys(game: TabularPOFSG) -> Set[ValueKey]:
    """(stage, state) pairs reachable from the initial state under some joint action."""
    if game.horizon is None:
        raise ConfigError(f"{game.name}: reachability by stage needs a finite horizon")
    frontier = {game.initial}
    keys: Set[ValueKey] = set()
    for t in range(game.horizon):
        keys.update((t, s) for s in frontier)
        frontier = {s2 for s in frontier if not game.is_terminal(s)
                    for joint in game.joint_actions(s)
                    for s2, p in game.next_states(s, joint).items() if p > 0}
    return keys


# --------------------------------------------------------------- equilibria

@dataclass
class SpneResult:
    strategy: Strategy
    values: ValueTable

    def initial_value(self, game: TabularPOFSG) -> np.ndarray:
        return self.values[(0, game.initial)]


def backward_induction_spne(game: TabularPOFSG, tol: float = NASH_TOL) -> SpneResult:
    """Subgame-perfect equilibrium by solving stage games from the last stage backwards.

    Each stage game pays immediate reward plus discounted continuation under
    the equilibrium already fixed for later stages.
    """
    if game.horizon is None:
        raise ConfigError(f"{game.name}: backward induction needs a finite horizon")
    strategy = Strategy()
    values: ValueTable = {}
    for t in reversed(range(game.horizon)):
        for s in game.states:
            if game.is_terminal(s):
                values[(t, s)] = np.zeros(game.n_agents)
                continue
            alive = game.alive[s]
            sizes = tuple(len(game.agent_actions(s, i)) for i in alive)
            full = np.zeros(sizes + (game.n_agents,))
            for joint in game.joint_actions(s):
                idx = tuple(game.agent_actions(s, i).index(a) for i, a in zip(alive, joint))
                full[idx] = game.reward(s, joint) + game.gamma * _continuation(game, values, t, s, joint)
            profile = stage_nash([full[..., i - 1] for i in alive], tol)
            for i, probs in zip(alive, profile):
                strategy.set(t, s, i, probs)
            values[(t, s)] = np.array([_contract(full[..., k], profile) for k in range(game.n_agents)])
    logger.debug("backward induction on %s: initial value %s", game.name, values[(0, game.initial)])
    return SpneResult(strategy=strategy, values=values)


@dataclass
class NashVerdict:
    is_nash: bool
    max_gain: float
    worst_agent: Optional[int] = None
    worst_key: Optional[ValueKey] = None
    gains: Dict[int, float] = field(default_factory=dict)


def verify_nash(game: TabularPOFSG, strategy: Strategy, tol: float = NASH_TOL,
                only_reachable: bool = False) -> NashVerdict:
    """Largest gain any agent gets by a unilateral deviation, over every (stage, state).

    ``only_reachable`` restricts the check to pairs reachable from the
    initial state, for strategies defined only there.
    """
    keys = reachable_keys(game) if only_reachable else None
    values = policy_value(game, strategy, keys)
    verdict = NashVerdict(is_nash=True, max_gain=0.0)
    for agent in game.agents:
        best = best_response_values(game, strategy, agent, keys)
        gain_here = 0.0
        for key, v in best.items():
            gain = v - float(values[key][agent - 1])
            if gain > gain_here:
                gain_here = gain
            if gain > verdict.max_gain:
                verdict.max_gain, verdict.worst_agent, verdict.worst_key = gain, agent, key
        verdict.gains[agent] = gain_here
    verdict.is_nash = verdict.max_gain <= tol
    return verdict


def enumerate_pure_spne(game: TabularPOFSG, tol: float = NASH_TOL, limit: int = 200_000) -> List[Strategy]:
    """Every deterministic Markov profile on the reachable stages that passes ``verify_nash``.

    Exhaustive and slow; an oracle for small games only.
    """
    keys = sorted(reachable_keys(game), key=lambda k: (k[0], k[1]))
    points = [(t, s, i) for t, s in keys if not game.is_terminal(s)
              for i in game.alive[s] if game.agent_actions(s, i)]
    sizes = [len(game.agent_actions(s, i)) for _, s, i in points]
    total = int(np.prod(sizes)) if sizes else 1
    if total > limit:
        raise ConfigError(f"{game.name}: {total} pure profiles exceed the enumeration limit {limit}")

    found = []
    for choice in itertools.product(*(range(n) for n in sizes)):
        strategy = Strategy()
        for (t, s, i), k, n in zip(points, choice, sizes):
            strategy.set(t, s, i, _one_hot(n, k))
        if verify_nash(game, strategy, tol, only_reachable=True).is_nash:
            found.append(strategy)
    logger.debug("%s: %d of %d pure profiles are subgame perfect", game.name, len(found), total)
    return found


def same_pure_play(game: TabularPOFSG, a: Strategy, b: Strategy) -> bool:
    """Whether two strategies pick the same action at every reachable decision point."""
    for t, s in reachable_keys(game):
        if game.is_terminal(s):
            continue
        for i in game.alive[s]:
            if not game.agent_actions(s, i):
                continue
            if int(np.argmax(a.dist(t, s, i))) != int(np.argmax(b.dist(t, s, i))):
                return False
    return True


def perturb(strategy: Strategy, key: Tuple[Optional[int], State, int], mass: float = 0.1) -> Strategy:
    """Move ``mass`` from the most likely action to the others, evenly."""
    out = strategy.copy()
    probs = out.probs[key].copy()
    if len(probs) < 2:
        raise ConfigError("cannot perturb a single-action distribution")
    top = int(np.argmax(probs))
    take = min(mass, probs[top])
    probs[top] -= take
    others = [k for k in range(len(probs)) if k != top]
    probs[others] += take / len(others)
    out.probs[key] = probs
    return out


def embedding_gap(game: TabularPOFSG, strategy: Strategy) -> float:
    """Largest value difference between the fluid game and its fixed-population embedding."""
    fluid = policy_value(game, strategy)
    embedded = policy_value(game.embed(), lift_strategy(game, strategy))
    return max(float(np.abs(fluid[k] - embedded[k]).max()) for k in fluid)
