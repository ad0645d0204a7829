"""Tabular fluid games: parsing, embedding, sequential form, backward induction and Nash checks."""

import numpy as np
import pytest

from fluid_agents.equilibrium import (
    DUMMY,
    Strategy,
    backward_induction_spne,
    embedding_gap,
    enumerate_pure_spne,
    format_game,
    lift_strategy,
    load_game,
    parse_game,
    perturb,
    policy_value,
    random_game,
    sequentialize,
    stage_nash,
    two_stage_spawn_game,
    uniform_strategy,
    verify_nash,
)
from fluid_agents.equilibrium.solve import (
    deviation_gains,
    pure_equilibria,
    reachable_keys,
    same_pure_play,
    select_equilibrium,
)
from fluid_agents.errors import ConfigError, GameFormatError, NashSolveError

SOLO_GAME = """
agents 1
horizon 1
state s alive 1
state end alive 1
actions s 1 low high
transition s low -> end 1.0
transition s high -> end 1.0
reward s low 1
reward s high 4
"""


@pytest.fixture
def spawn_game(games_dir):
    return load_game(games_dir / "spawn_two_stage.game")


@pytest.fixture
def dilemma(games_dir):
    return load_game(games_dir / "prisoners_dilemma.game")


@pytest.fixture
def pennies(games_dir):
    return load_game(games_dir / "matching_pennies.game")


class TestFormat:
    def test_bundled_games_parse(self, spawn_game, dilemma, pennies):
        assert spawn_game.alive["pair"] == (1, 2)
        assert spawn_game.alive["start"] == (1,)
        assert dilemma.horizon == 1 and dilemma.is_terminal("end")
        assert pennies.horizon is None and pennies.gamma == 0.9

    def test_file_matches_builder(self, spawn_game):
        built = two_stage_spawn_game(cost=1.0, gain=3.0, solo=1.0)
        assert built.transitions == spawn_game.transitions
        for key, reward in built.rewards.items():
            assert np.array_equal(spawn_game.reward(*key), reward)

    def test_missing_reward_row_pays_zero(self, spawn_game):
        assert spawn_game.reward("pair", ("work", "idle")).tolist() == [0.0, 0.0]

    def test_format_then_parse(self, spawn_game):
        again = parse_game(format_game(spawn_game), name=spawn_game.name)
        assert again.transitions == spawn_game.transitions
        assert again.alive == spawn_game.alive
        assert set(again.rewards) == set(spawn_game.rewards)

    def test_errors_name_the_line(self):
        with pytest.raises(GameFormatError) as excinfo:
            parse_game("agents 2\nstate a alive 1 2\nactions b 1 x y\n")
        assert excinfo.value.line == 3
        with pytest.raises(GameFormatError) as excinfo:
            parse_game("agents 1\nstate a alive 1\nreward a x 1 2\n")
        assert excinfo.value.line == 3
        with pytest.raises(GameFormatError) as excinfo:
            parse_game("agents 1\nstate a alive 1\nbogus line\n")
        assert excinfo.value.line == 3
        with pytest.raises(GameFormatError) as excinfo:
            parse_game("state a alive 1\n")
        assert excinfo.value.line is None

    def test_dead_agent_cannot_have_actions(self):
        with pytest.raises(GameFormatError):
            parse_game("agents 2\nstate a alive 1\nactions a 2 x\n")

    def test_transitions_must_be_distributions(self):
        text = "agents 1\nhorizon 1\nstate a alive 1\nactions a 1 x\ntransition a x -> a 0.7\n"
        with pytest.raises(ConfigError):
            parse_game(text)

    def test_infinite_horizon_needs_discount(self):
        with pytest.raises(ConfigError):
            parse_game("agents 1\ngamma 1.0\nhorizon none\nstate a alive 1\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_game(tmp_path / "none.game")


class TestStageGames:
    def test_single_player_argmax(self):
        (probs,) = stage_nash([np.array([1.0, 4.0, 2.0])])
        assert probs.tolist() == [0.0, 1.0, 0.0]

    def test_dilemma_defects(self):
        a = np.array([[3.0, 0.0], [5.0, 1.0]])
        x, y = stage_nash([a, a.T])
        assert x.tolist() == [0.0, 1.0] and y.tolist() == [0.0, 1.0]

    def test_pennies_mix_evenly(self):
        a = np.array([[1.0, -1.0], [-1.0, 1.0]])
        x, y = stage_nash([a, -a])
        assert x == pytest.approx([0.5, 0.5]) and y == pytest.approx([0.5, 0.5])
        assert deviation_gains([a, -a], [x, y]).max() <= 1e-9

    def test_selection_prefers_low_indices(self):
        coordination = np.array([[2.0, 0.0], [0.0, 2.0]])
        x, y = stage_nash([coordination, coordination])
        assert x.tolist() == [1.0, 0.0] and y.tolist() == [1.0, 0.0]

    def test_selection_orders_supports_lexicographically(self):
        pure_high = [np.array([0.0, 1.0]), np.array([1.0, 0.0])]
        mixed = [np.array([0.5, 0.5]), np.array([1.0, 0.0])]
        assert [p.tolist() for p in select_equilibrium([pure_high, mixed])] == [[0.5, 0.5], [1.0, 0.0]]
        leaning_low = [np.array([0.75, 0.25]), np.array([1.0, 0.0])]
        assert select_equilibrium([mixed, leaning_low])[0].tolist() == [0.75, 0.25]

    def test_three_players_pure(self):
        payoff = np.zeros((2, 2, 2))
        payoff[1, 1, 1] = 1.0
        profile = stage_nash([payoff, payoff, payoff])
        assert [p.tolist() for p in profile] == [[1.0, 0.0]] * 3
        # All-ones plus every profile with at most one player on action 1.
        assert len(pure_equilibria([payoff] * 3)) == 5

    def test_three_players_without_pure_equilibrium(self):
        match = np.zeros((2, 2, 2))
        for a in range(2):
            match[a, a, :] = 1.0
        with pytest.raises(NashSolveError):
            stage_nash([match, 1.0 - match, np.zeros((2, 2, 2))])


class TestBackwardInduction:
    def test_spawning_is_subgame_perfect(self, spawn_game):
        result = backward_induction_spne(spawn_game)
        assert result.strategy.dist(0, "start", 1).tolist() == [0.0, 1.0]
        assert result.strategy.dist(1, "pair", 1).tolist() == [1.0, 0.0]
        assert result.strategy.dist(1, "pair", 2).tolist() == [1.0, 0.0]
        assert result.strategy.dist(1, "solo", 1).tolist() == [1.0, 0.0]
        assert result.initial_value(spawn_game) == pytest.approx([2.0, 3.0])
        assert verify_nash(spawn_game, result.strategy).is_nash

    def test_spawn_not_worth_its_cost(self):
        game = two_stage_spawn_game(cost=5.0, gain=3.0, solo=1.0)
        result = backward_induction_spne(game)
        assert result.strategy.dist(0, "start", 1).tolist() == [1.0, 0.0]
        assert result.initial_value(game)[0] == pytest.approx(1.0)

    def test_perturbed_equilibrium_rejected(self, spawn_game):
        result = backward_induction_spne(spawn_game)
        shaken = perturb(result.strategy, (1, "pair", 1), 0.1)
        verdict = verify_nash(spawn_game, shaken)
        assert not verdict.is_nash
        assert verdict.max_gain == pytest.approx(0.3)
        assert verdict.worst_agent == 1
        assert verdict.gains[2] == pytest.approx(0.0, abs=1e-12)

    def test_dilemma(self, dilemma):
        result = backward_induction_spne(dilemma)
        assert result.strategy.dist(0, "play", 1).tolist() == [0.0, 1.0]
        assert result.initial_value(dilemma) == pytest.approx([1.0, 1.0])

    def test_dominated_action_has_positive_gain(self, dilemma):
        cooperate = Strategy()
        for agent in (1, 2):
            cooperate.set(0, "play", agent, [1.0, 0.0])
        verdict = verify_nash(dilemma, cooperate)
        assert not verdict.is_nash
        assert verdict.max_gain == pytest.approx(2.0)

    def test_single_agent_takes_best_action(self):
        game = parse_game(SOLO_GAME)
        result = backward_induction_spne(game)
        assert result.strategy.dist(0, "s", 1).tolist() == [0.0, 1.0]
        assert result.initial_value(game) == pytest.approx([4.0])

    def test_infinite_horizon_rejected(self, pennies):
        with pytest.raises(ConfigError):
            backward_induction_spne(pennies)

    def test_enumeration_finds_both_pure_equilibria(self, spawn_game):
        result = backward_induction_spne(spawn_game)
        found = enumerate_pure_spne(spawn_game)
        assert len(found) == 2
        assert any(same_pure_play(spawn_game, result.strategy, s) for s in found)

    def test_reachable_keys(self, spawn_game):
        assert reachable_keys(spawn_game) == {(0, "start"), (1, "solo"), (1, "pair")}

    def test_random_games(self):
        checked, seed = 0, 0
        while checked < 20 and seed < 400:
            game = random_game(np.random.default_rng(seed), n_agents=2, n_states=2, horizon=2, max_actions=2)
            seed += 1
            try:
                result = backward_induction_spne(game)
            except NashSolveError:
                continue
            assert verify_nash(game, result.strategy, tol=1e-7).is_nash
            if result.strategy.is_pure():
                pure = enumerate_pure_spne(game, tol=1e-7)
                assert any(same_pure_play(game, result.strategy, s) for s in pure)
            checked += 1
        assert checked == 20


class TestStationary:
    def test_even_mix_is_nash(self, pennies):
        strategy = uniform_strategy(pennies)
        verdict = verify_nash(pennies, strategy)
        assert verdict.is_nash
        assert verdict.max_gain <= 1e-9
        values = policy_value(pennies, strategy)
        assert values[(None, "play")] == pytest.approx([0.0, 0.0])

    def test_pure_play_is_exploitable(self, pennies):
        strategy = Strategy()
        strategy.set(None, "play", 1, [1.0, 0.0])
        strategy.set(None, "play", 2, [1.0, 0.0])
        verdict = verify_nash(pennies, strategy)
        # Agent 2 switches to tails forever: 1/(1-0.9) either way, from -10 to +10.
        assert verdict.max_gain == pytest.approx(20.0, rel=1e-9)


class TestEmbedding:
    def test_dead_agents_get_the_dummy(self, spawn_game):
        embedded = spawn_game.embed()
        assert embedded.agent_actions("start", 2) == (DUMMY,)
        assert embedded.alive["start"] == (1, 2)
        assert embedded.next_states("start", ("spawn", DUMMY)) == {"pair": 1.0}
        assert embedded.restrict_joint("start", ("spawn", DUMMY)) == ("spawn",)

    @pytest.mark.parametrize("game_name", ["spawn_two_stage", "prisoners_dilemma", "matching_pennies"])
    def test_values_agree(self, games_dir, game_name):
        game = load_game(games_dir / f"{game_name}.game")
        assert embedding_gap(game, uniform_strategy(game)) <= 1e-12

    def test_equilibrium_values_agree(self, spawn_game):
        result = backward_induction_spne(spawn_game)
        assert embedding_gap(spawn_game, result.strategy) <= 1e-12
        lifted = lift_strategy(spawn_game, result.strategy)
        assert verify_nash(spawn_game.embed(), lifted).is_nash


class TestSequentialForm:
    def test_dilemma_tree(self, dilemma):
        tree = sequentialize(dilemma)
        assert len(tree.nodes) == 7
        assert tree.depth() == 2
        assert len(tree.leaves()) == 4
        sets = tree.information_sets()
        assert sorted(len(nodes) for nodes in sets.values()) == [1, 2]
        assert tree.root.player == 1
        leaf_payoffs = sorted(tuple(leaf.payoff) for leaf in tree.leaves())
        assert leaf_payoffs == [(0.0, 5.0), (1.0, 1.0), (3.0, 3.0), (5.0, 0.0)]

    def test_single_stage_single_agent(self):
        tree = sequentialize(parse_game(SOLO_GAME))
        assert tree.depth() == 1
        assert len(tree.leaves()) == 2

    def test_spawn_game_chance_and_dead_agents(self, spawn_game):
        tree = sequentialize(spawn_game)
        players = {node.player for node in tree.nodes if node.kind == "decision" and node.stage == 0}
        assert players == {1}
        assert any(node.kind == "chance" for node in tree.nodes)
        assert max(leaf.payoff[0] for leaf in tree.leaves()) == pytest.approx(2.0)

    def test_reverse_ordering(self, dilemma):
        tree = sequentialize(dilemma, ordering=[2, 1])
        assert tree.root.player == 2
        with pytest.raises(ConfigError):
            sequentialize(dilemma, ordering=[1, 1])

    def test_infinite_horizon_rejected(self, pennies):
        with pytest.raises(ConfigError):
            sequentialize(pennies)


class TestStrategyFiles:
    def test_save_and_load(self, spawn_game, tmp_path):
        result = backward_induction_spne(spawn_game)
        path = tmp_path / "spne.json"
        result.strategy.save(path, spawn_game)
        loaded = Strategy.load(path, spawn_game)
        assert set(loaded.probs) == set(result.strategy.probs)
        for key, probs in result.strategy.probs.items():
            assert loaded.probs[key].tolist() == probs.tolist()

    def test_labels_must_match(self, spawn_game, dilemma, tmp_path):
        path = tmp_path / "pd.json"
        backward_induction_spne(dilemma).strategy.save(path, dilemma)
        with pytest.raises(ConfigError):
            Strategy.load(path, spawn_game)

    def test_single_action_cannot_be_perturbed(self):
        strategy = Strategy()
        strategy.set(0, "s", 1, [1.0])
        with pytest.raises(ConfigError):
            perturb(strategy, (0, "s", 1))
