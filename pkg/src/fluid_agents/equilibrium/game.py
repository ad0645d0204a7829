"""
Tabular fluid games
===================

A ``TabularPOFSG`` is a fully observed, finite fluid stochastic game: every
state carries its alive set, only alive agents choose actions, and a joint
action is the tuple of alive agents' action labels in ascending id order.
States without transition rows are absorbing and pay nothing.

The module also holds the text format (see ``games/README.md``), behavioural
strategies, the fixed-population embedding and the sequential-move tree used
for subgame-perfect reasoning.
"""

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ConfigError, GameFormatError

logger = logging.getLogger(__name__)

DUMMY = "-"
PROB_TOL = 1e-12

State = str
Joint = Tuple[str, ...]


@dataclass
class TabularPOFSG:
    n_agents: int
    states: List[State]
    alive: Dict[State, Tuple[int, ...]]
    actions: Dict[Tuple[State, int], Tuple[str, ...]]
    transitions: Dict[Tuple[State, Joint], Dict[State, float]]
    rewards: Dict[Tuple[State, Joint], np.ndarray] = field(default_factory=dict)
    gamma: float = 1.0
    horizon: Optional[int] = None
    initial: Optional[State] = None
    name: str = "game"
    # Alive sets of the fluid game this one was embedded from.
    fluid_alive: Optional[Dict[State, Tuple[int, ...]]] = None

    def __post_init__(self):
        if self.initial is None and self.states:
            self.initial = self.states[0]
        self.validate()

    # ------------------------------------------------------------ structure

    @property
    def agents(self) -> Tuple[int, ...]:
        return tuple(range(1, self.n_agents + 1))

    def is_terminal(self, state: State) -> bool:
        return not any(key[0] == state for key in self.transitions)

    def agent_actions(self, state: State, agent: int) -> Tuple[str, ...]:
        return self.actions.get((state, agent), ())

    def joint_actions(self, state: State) -> Iterator[Joint]:
        return itertools.product(*(self.agent_actions(state, i) for i in self.alive[state]))

    def reward(self, state: State, joint: Joint) -> np.ndarray:
        return self.rewards.get((state, tuple(joint)), np.zeros(self.n_agents))

    def next_states(self, state: State, joint: Joint) -> Dict[State, float]:
        return self.transitions.get((state, tuple(joint)), {})

    def validate(self) -> None:
        if self.n_agents < 1:
            raise ConfigError(f"{self.name}: need at least one agent")
        if self.horizon is None and not 0 < self.gamma < 1:
            raise ConfigError(f"{self.name}: infinite-horizon games need gamma in (0, 1), got {self.gamma}")
        if self.horizon is not None and (self.horizon < 1 or not 0 < self.gamma <= 1):
            raise ConfigError(f"{self.name}: horizon must be >= 1 and gamma in (0, 1]")
        if self.initial not in self.alive:
            raise ConfigError(f"{self.name}: unknown initial state {self.initial!r}")
        for state in self.states:
            alive = self.alive[state]
            if any(not 1 <= i <= self.n_agents for i in alive):
                raise ConfigError(f"{self.name}: state {state!r} has agent ids outside 1..{self.n_agents}")
            if self.is_terminal(state):
                continue
            for i in alive:
                if not self.agent_actions(state, i):
                    raise ConfigError(f"{self.name}: agent {i} is alive in {state!r} but has no actions")
            for joint in self.joint_actions(state):
                dist = self.next_states(state, joint)
                if not dist:
                    raise ConfigError(f"{self.name}: no transition for {state!r} {','.join(joint) or DUMMY}")
                if abs(sum(dist.values()) - 1.0) > PROB_TOL or any(p < 0 for p in dist.values()):
                    raise ConfigError(f"{self.name}: transition {state!r} {joint} is not a distribution")
                unknown = set(dist) - set(self.alive)
                if unknown:
                    raise ConfigError(f"{self.name}: transition to unknown states {sorted(unknown)}")
                dead = [i for i in self.agents if i not in alive]
                r = self.reward(state, joint)
                if any(r[i - 1] != 0.0 for i in dead):
                    raise ConfigError(f"{self.name}: dead agents must get zero reward in {state!r}")

    # ----------------------------------------------------------- embedding

    def embed(self) -> "TabularPOFSG":
        """Fixed-population form: every agent acts everywhere, dead agents only have the dummy action."""
        actions: Dict[Tuple[State, int], Tuple[str, ...]] = {}
        transitions, rewards = {}, {}
        for state in self.states:
            for i in self.agents:
                actions[(state, i)] = self.agent_actions(state, i) if i in self.alive[state] else (DUMMY,)
            if self.is_terminal(state):
                continue
            for joint in self.joint_actions(state):
                full = _full_joint(self.alive[state], joint, self.n_agents)
                transitions[(state, full)] = dict(self.next_states(state, joint))
                if (state, joint) in self.rewards:
                    rewards[(state, full)] = self.rewards[(state, joint)].copy()
        return TabularPOFSG(
            n_agents=self.n_agents,
            states=list(self.states),
            alive={s: self.agents for s in self.states},
            actions=actions,
            transitions=transitions,
            rewards=rewards,
            gamma=self.gamma,
            horizon=self.horizon,
            initial=self.initial,
            name=f"{self.name}_embedded",
            fluid_alive=dict(self.alive),
        )

    def restrict_joint(self, state: State, full: Joint) -> Joint:
        """Drop dummy entries of a full joint action, keeping alive agents' labels."""
        alive = (self.fluid_alive or self.alive)[state]
        return tuple(full[i - 1] for i in alive)


def _full_joint(alive: Sequence[int], joint: Joint, n_agents: int) -> Joint:
    full = [DUMMY] * n_agents
    for i, a in zip(alive, joint):
        full[i - 1] = a
    return tuple(full)


# ------------------------------------------------------------- strategies

StrategyKey = Tuple[Optional[int], State, int]


@dataclass
class Strategy:
    """Behavioural strategy: per (stage, state, agent) a distribution over that agent's actions.

    Keys with stage ``None`` are stationary and used whenever no
    stage-specific entry exists.
    """
    probs: Dict[StrategyKey, np.ndarray] = field(default_factory=dict)

    def dist(self, t: Optional[int], state: State, agent: int) -> np.ndarray:
        if (t, state, agent) in self.probs:
            return self.probs[(t, state, agent)]
        if (None, state, agent) in self.probs:
            return self.probs[(None, state, agent)]
        raise KeyError(f"strategy has no entry for agent {agent} in {state!r} at stage {t}")

    def set(self, t: Optional[int], state: State, agent: int, probs: Sequence[float]) -> None:
        self.probs[(t, state, agent)] = np.asarray(probs, dtype=np.float64)

    def copy(self) -> "Strategy":
        return Strategy({k: v.copy() for k, v in self.probs.items()})

    def is_pure(self, tol: float = 1e-12) -> bool:
        return all(np.isclose(p.max(), 1.0, atol=tol) for p in self.probs.values())

    def to_dict(self, game: TabularPOFSG) -> List[dict]:
        rows = []
        for (t, state, agent), probs in sorted(self.probs.items(), key=lambda kv: (
                -1 if kv[0][0] is None else kv[0][0], kv[0][1], kv[0][2])):
            labels = game.agent_actions(state, agent)
            rows.append({"stage": t, "state": state, "agent": agent,
                         "probs": {a: float(p) for a, p in zip(labels, probs)}})
        return rows

    def save(self, path: Union[str, Path], game: TabularPOFSG) -> None:
        Path(path).write_text(json.dumps({"game": game.name, "strategy": self.to_dict(game)}, indent=2),
                              encoding="utf-8")

    @classmethod
    def load(cls, path: Union[str, Path], game: TabularPOFSG) -> "Strategy":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"strategy file not found: {path}")
        try:
            rows = json.loads(path.read_text(encoding="utf-8"))["strategy"]
        except (json.JSONDecodeError, KeyError) as e:
            raise ConfigError(f"{path}: not a strategy file ({e})") from e
        strategy = cls()
        for row in rows:
            labels = game.agent_actions(row["state"], row["agent"])
            if set(row["probs"]) != set(labels):
                raise ConfigError(f"{path}: actions {sorted(row['probs'])} do not match {list(labels)} "
                                  f"for agent {row['agent']} in {row['state']!r}")
            strategy.set(row["stage"], row["state"], row["agent"], [row["probs"][a] for a in labels])
        return strategy


def uniform_strategy(game: TabularPOFSG) -> Strategy:
    strategy = Strategy()
    for state in game.states:
        for i in game.alive[state]:
            n = len(game.agent_actions(state, i))
            if n:
                strategy.set(None, state, i, np.full(n, 1.0 / n))
    return strategy


def lift_strategy(game: TabularPOFSG, strategy: Strategy) -> Strategy:
    """Extend a fluid-game strategy to the embedded game: dead agents play the dummy w.p. 1."""
    lifted = strategy.copy()
    stages = {k[0] for k in strategy.probs} or {None}
    for state in game.states:
        for i in game.agents:
            if i not in game.alive[state]:
                for t in stages:
                    lifted.set(t, state, i, [1.0])
    return lifted


# -------------------------------------------------------------- text format

def parse_game(text: str, name: str = "game") -> TabularPOFSG:
    """Parse the line-oriented game format; ``#`` starts a comment."""
    n_agents, gamma, horizon, initial = None, 1.0, None, None
    states: List[State] = []
    alive: Dict[State, Tuple[int, ...]] = {}
    actions: Dict[Tuple[State, int], Tuple[str, ...]] = {}
    transitions: Dict[Tuple[State, Joint], Dict[State, float]] = {}
    raw_rewards: Dict[Tuple[State, Joint], Tuple[int, List[float]]] = {}

    def number(token: str, line_no: int) -> float:
        try:
            return float(token)
        except ValueError:
            raise GameFormatError(f"expected a number, got {token!r}", line_no) from None

    def known_state(state: str, line_no: int) -> State:
        if state not in alive:
            raise GameFormatError(f"state {state!r} used before it is declared", line_no)
        return state

    for line_no, line in enumerate(text.splitlines(), start=1):
        tokens = line.split("#", 1)[0].split()
        if not tokens:
            continue
        keyword, args = tokens[0], tokens[1:]
        if keyword == "agents" and len(args) == 1:
            n_agents = int(number(args[0], line_no))
        elif keyword == "gamma" and len(args) == 1:
            gamma = number(args[0], line_no)
        elif keyword == "horizon" and len(args) == 1:
            horizon = None if args[0] == "none" else int(number(args[0], line_no))
        elif keyword == "initial" and len(args) == 1:
            initial = args[0]
        elif keyword == "state" and len(args) >= 3 and args[1] == "alive":
            if args[0] in alive:
                raise GameFormatError(f"state {args[0]!r} declared twice", line_no)
            ids = () if args[2:] == [DUMMY] else tuple(sorted(int(number(a, line_no)) for a in args[2:]))
            states.append(args[0])
            alive[args[0]] = ids
        elif keyword == "actions" and len(args) >= 3:
            state = known_state(args[0], line_no)
            agent = int(number(args[1], line_no))
            if agent not in alive[state]:
                raise GameFormatError(f"agent {agent} is not alive in {state!r}", line_no)
            actions[(state, agent)] = tuple(args[2:])
        elif keyword == "transition" and "->" in args and args.index("->") == 2:
            state = known_state(args[0], line_no)
            joint = _parse_joint(args[1])
            outcomes = args[3:]
            if not outcomes or len(outcomes) % 2:
                raise GameFormatError("transition needs 'next prob' pairs after '->'", line_no)
            dist: Dict[State, float] = {}
            for nxt, p in zip(outcomes[::2], outcomes[1::2]):
                dist[nxt] = dist.get(nxt, 0.0) + number(p, line_no)
            transitions[(state, joint)] = dist
        elif keyword == "reward" and len(args) >= 2:
            state = known_state(args[0], line_no)
            raw_rewards[(state, _parse_joint(args[1]))] = (line_no, [number(r, line_no) for r in args[2:]])
        else:
            raise GameFormatError(f"cannot parse {line.strip()!r}", line_no)

    if n_agents is None:
        raise GameFormatError("missing 'agents' line")
    if not states:
        raise GameFormatError("no states declared")

    rewards: Dict[Tuple[State, Joint], np.ndarray] = {}
    for (state, joint), (line_no, values) in raw_rewards.items():
        if len(values) != len(alive[state]):
            raise GameFormatError(f"{state!r} has {len(alive[state])} alive agents but the reward row "
                                  f"has {len(values)} values", line_no)
        vector = np.zeros(n_agents)
        for i, v in zip(alive[state], values):
            vector[i - 1] = v
        rewards[(state, joint)] = vector

    return TabularPOFSG(n_agents=n_agents, states=states, alive=alive, actions=actions,
                        transitions=transitions, rewards=rewards, gamma=gamma, horizon=horizon,
                        initial=initial, name=name)


def _parse_joint(token: str) -> Joint:
    return () if token == DUMMY else tuple(token.split(","))


def load_game(path: Union[str, Path]) -> TabularPOFSG:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"game file not found: {path}")
    return parse_game(path.read_text(encoding="utf-8"), name=path.stem)


def format_game(game: TabularPOFSG) -> str:
    """Inverse of ``parse_game`` (comments are not kept)."""
    lines = [f"agents {game.n_agents}", f"gamma {game.gamma!r}",
             f"horizon {'none' if game.horizon is None else game.horizon}", f"initial {game.initial}"]
    for state in game.states:
        ids = " ".join(str(i) for i in game.alive[state]) or DUMMY
        lines.append(f"state {state} alive {ids}")
    for state in game.states:
        for i in game.alive[state]:
            if game.agent_actions(state, i):
                lines.append(f"actions {state} {i} {' '.join(game.agent_actions(state, i))}")
    for (state, joint), dist in game.transitions.items():
        outcomes = " ".join(f"{s} {p!r}" for s, p in dist.items())
        lines.append(f"transition {state} {','.join(joint) or DUMMY} -> {outcomes}")
    for (state, joint), vector in game.rewards.items():
        values = " ".join(repr(float(vector[i - 1])) for i in game.alive[state])
        lines.append(f"reward {state} {','.join(joint) or DUMMY} {values}".rstrip())
    return "\n".join(lines) + "\n"


# -------------------------------------------------------- example games

def two_stage_spawn_game(cost: float, gain: float, solo: float, gamma: float = 1.0) -> TabularPOFSG:
    """One agent may pay ``cost`` to spawn a partner; a pair that both work earns ``gain`` each step.

    Stage one: agent 1 in ``start`` chooses stay or spawn. Stage two: alone it
    earns ``solo`` by working; in a pair both agents share the team payoff
    ``gain`` if both work.
    """
    transitions = {
        ("start", ("stay",)): {"solo": 1.0},
        ("start", ("spawn",)): {"pair": 1.0},
        ("solo", ("work",)): {"done": 1.0},
        ("solo", ("idle",)): {"done": 1.0},
    }
    rewards = {
        ("start", ("spawn",)): np.array([-cost, 0.0]),
        ("solo", ("work",)): np.array([solo, 0.0]),
    }
    for joint in itertools.product(("work", "idle"), repeat=2):
        transitions[("pair", joint)] = {"done": 1.0}
        payoff = gain if joint == ("work", "work") else 0.0
        rewards[("pair", joint)] = np.array([payoff, payoff])
    return TabularPOFSG(
        n_agents=2,
        states=["start", "solo", "pair", "done"],
        alive={"start": (1,), "solo": (1,), "pair": (1, 2), "done": (1,)},
        actions={("start", 1): ("stay", "spawn"), ("solo", 1): ("work", "idle"),
                 ("pair", 1): ("work", "idle"), ("pair", 2): ("work", "idle")},
        transitions=transitions,
        rewards=rewards,
        gamma=gamma,
        horizon=2,
        initial="start",
        name="two_stage_spawn",
    )


def random_game(rng: np.random.Generator, n_agents: int = 2, n_states: int = 2, horizon: int = 2,
                max_actions: int = 3, gamma: float = 0.9) -> TabularPOFSG:
    """Random game with integer rewards, everyone alive in every state."""
    states = [f"s{k}" for k in range(n_states)]
    agents = tuple(range(1, n_agents + 1))
    actions = {(s, i): tuple(f"a{k}" for k in range(int(rng.integers(2, max_actions + 1))))
               for s in states for i in agents}
    transitions, rewards = {}, {}
    for s in states:
        for joint in itertools.product(*(actions[(s, i)] for i in agents)):
            weights = rng.random(n_states)
            transitions[(s, joint)] = {states[k]: float(w) for k, w in enumerate(weights / weights.sum())}
            rewards[(s, joint)] = rng.integers(-5, 6, size=n_agents).astype(np.float64)
    # Renormalise so that float rounding stays within tolerance.
    for key, dist in transitions.items():
        total = sum(dist.values())
        transitions[key] = {s: p / total for s, p in dist.items()}
    return TabularPOFSG(n_agents=n_agents, states=states, alive={s: agents for s in states}, actions=actions,
                        transitions=transitions, rewards=rewards, gamma=gamma, horizon=horizon,
                        initial=states[0], name="random")


# ------------------------------------------------------ sequential form

@dataclass
class Node:
    id: int
    kind: str                                  # "decision", "chance" or "terminal"
    stage: int
    state: State
    history: Tuple[Tuple[State, Joint], ...]   # completed stages
    partial: Joint = ()                         # same-stage moves already made
    player: Optional[int] = None
    payoff: Optional[np.ndarray] = None         # discounted return so far; final at terminals
    children: Dict[str, int] = field(default_factory=dict)
    outcomes: Dict[State, Tuple[float, int]] = field(default_factory=dict)

    @property
    def infoset(self) -> Optional[Tuple]:
        """Information set key; same-stage moves of earlier movers are hidden."""
        if self.kind != "decision":
            return None
        return self.player, self.stage, self.state, self.history


@dataclass
class ExtensiveFormGame:
    nodes: List[Node]
    n_agents: int

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def leaves(self) -> List[Node]:
        return [n for n in self.nodes if n.kind == "terminal"]

    def depth(self, node_id: int = 0) -> int:
        node = self.nodes[node_id]
        below = list(node.children.values()) + [c for _, c in node.outcomes.values()]
        return 0 if not below else 1 + max(self.depth(c) for c in below)

    def information_sets(self) -> Dict[Tuple, List[int]]:
        sets: Dict[Tuple, List[int]] = {}
        for node in self.nodes:
            if node.kind == "decision":
                sets.setdefault(node.infoset, []).append(node.id)
        return sets


def sequentialize(game: TabularPOFSG, ordering: Optional[Sequence[int]] = None,
                  max_nodes: int = 200_000) -> ExtensiveFormGame:
    """Sequential-move tree of a finite-horizon game.

    Within a stage the alive agents move one after another in ``ordering``
    (ascending id by default); an agent's information set holds every node
    with the same public history and stage state, so it cannot see earlier
    movers of its own stage. After the last mover a chance node draws the
    next state; the tree stops at the horizon or an absorbing state.
    """
    if game.horizon is None:
        raise ConfigError(f"{game.name}: sequentialization needs a finite horizon")
    order = list(ordering) if ordering is not None else list(game.agents)
    if sorted(order) != list(game.agents):
        raise ConfigError(f"ordering {order} is not a permutation of the agents")

    nodes: List[Node] = []

    def add(node: Node) -> Node:
        if len(nodes) >= max_nodes:
            raise ConfigError(f"{game.name}: sequential form exceeds {max_nodes} nodes")
        node.id = len(nodes)
        nodes.append(node)
        return node

    def stage_start(t: int, state: State, history, payoff: np.ndarray) -> int:
        if t >= game.horizon or game.is_terminal(state):
            return add(Node(0, "terminal", t, state, history, payoff=payoff)).id
        return mover(t, state, history, (), payoff)

    def mover(t: int, state: State, history, partial: Joint, payoff: np.ndarray) -> int:
        movers = [i for i in order if i in game.alive[state]]
        if len(partial) == len(movers):
            return resolve(t, state, history, partial, movers, payoff)
        player = movers[len(partial)]
        node = add(Node(0, "decision", t, state, history, partial, player=player, payoff=payoff))
        for action in game.agent_actions(state, player):
            node.children[action] = mover(t, state, history, partial + (action,), payoff)
        return node.id

    def resolve(t: int, state: State, history, partial: Joint, movers: List[int], payoff: np.ndarray) -> int:
        by_agent = dict(zip(movers, partial))
        joint = tuple(by_agent[i] for i in game.alive[state])
        payoff = payoff + game.gamma ** t * game.reward(state, joint)
        history = history + ((state, joint),)
        if t + 1 >= game.horizon:
            return add(Node(0, "terminal", t + 1, state, history, payoff=payoff)).id
        node = add(Node(0, "chance", t, state, history, payoff=payoff))
        for nxt, p in game.next_states(state, joint).items():
            if p > 0:
                node.outcomes[nxt] = (p, stage_start(t + 1, nxt, history, payoff))
        return node.id

    stage_start(0, game.initial, (), np.zeros(game.n_agents))
    # Children are created depth-first, so the root is the first node added.
    logger.debug("sequentialized %s into %d nodes", game.name, len(nodes))
    return ExtensiveFormGame(nodes=nodes, n_agents=game.n_agents)
