#!/usr/bin/env python3
"""
Fluid Agents - Multi-agent learning with a changing population
==============================================================

Train, evaluate and report on learners for fluid-population environments,
and solve small tabular fluid games exactly.

Usage:
    python fluid-agents.py presets
    python fluid-agents.py train --preset predprey_vdn --seed 0 --steps 2000 --out runs
    python fluid-agents.py eval --ckpt runs/predprey_vdn_s0/checkpoints/ckpt_0100.pt --episodes 100
    python fluid-agents.py report --runs runs --out reports
    python fluid-agents.py eq solve-spne --game games/spawn_two_stage.game
    python fluid-agents.py eq verify-ne --game games/matching_pennies.game --strategy strategy.json
    python fluid-agents.py eq embed --game games/spawn_two_stage.game
    python fluid-agents.py env fuzz --env puddle_bridge --steps 10000
"""

import argparse
import logging
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / "src"))

from fluid_agents import __version__  # noqa: E402
from fluid_agents.errors import FluidAgentsError  # noqa: E402
from fluid_agents.settings import RUNS_DIR, configure_logging  # noqa: E402

logger = logging.getLogger("fluid_agents.cli")


def cmd_presets(args) -> int:
    from fluid_agents.learners.presets import PRESETS

    print(f"{'preset':<24} {'env':<14} {'algorithm':<12} steps")
    for name, config in sorted(PRESETS.items()):
        print(f"{name:<24} {config.env:<14} {config.learner.algorithm:<12} {config.steps}")
    return 0


def _train_config(args):
    from fluid_agents.learners.presets import apply_overrides, get_preset, load_config, parse_overrides

    if args.config:
        config = load_config(args.config)
    else:
        config = get_preset(args.preset)
    overrides = parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.steps is not None:
        overrides["steps"] = str(args.steps)
    if args.workers is not None:
        overrides["workers"] = str(args.workers)
    return apply_overrides(config, overrides) if overrides else config


def cmd_train(args) -> int:
    from fluid_agents.harness.training import train

    config = _train_config(args)
    print("Fluid Agents - Training")
    print("=" * 60)
    print(f"Preset: {config.preset or '(custom)'}  env: {config.env}  algorithm: {config.learner.algorithm}")
    print(f"Steps: {config.steps} x {config.learner.num_envs} envs, seed {config.seed}, "
          f"{config.n_checkpoints} checkpoints")
    result = train(config, out_dir=args.out, run_id=args.run_id, show_progress=not args.quiet)
    print(f"\nRun written to {result.run_dir}")
    print(f"   Checkpoints: {len(result.checkpoints)}")
    if result.final_report is not None and len(result.final_report):
        report = result.final_report
        print(f"   Final return: {report.joint_return_mean:.3f} +- {report.joint_return_std:.3f}")
        print(f"   Agents alive at end: {report.alive_mean:.2f}")
    return 0


def cmd_eval(args) -> int:
    from fluid_agents.harness.evaluation import evaluate
    from fluid_agents.learners.presets import parse_overrides

    report = evaluate(args.ckpt, args.episodes, seed=args.seed, overrides=parse_overrides(args.set))
    print(f"Evaluated {args.ckpt} over {len(report)} episodes")
    if len(report):
        print(f"   Joint return: {report.joint_return_mean:.3f} +- {report.joint_return_std:.3f}")
        print(f"   Agents alive at end: {report.alive_mean:.2f}")
        for key, value in report.extra().items():
            print(f"   {key}: {value}")
    if args.out:
        path = report.save_episodes(Path(args.out) / "episodes.csv")
        print(f"   Episodes: {path}")
    return 0


def cmd_report(args) -> int:
    from fluid_agents.harness.reporting import load_runs, report, summary_lines

    written = report(args.runs, args.out)
    for line in summary_lines(load_runs(args.runs)):
        print(line)
    print(f"\nReport files in {args.out}:")
    for name in sorted(written):
        print(f"   {name}")
    return 0


def cmd_eq(args) -> int:
    from fluid_agents.equilibrium import (
        Strategy,
        backward_induction_spne,
        embedding_gap,
        format_game,
        load_game,
        sequentialize,
        uniform_strategy,
        verify_nash,
    )

    game = load_game(args.game)
    if args.eq_command == "solve-spne":
        result = backward_induction_spne(game)
        tree = sequentialize(game)
        verdict = verify_nash(game, result.strategy)
        print(f"Game {game.name}: {game.n_agents} agents, horizon {game.horizon}, "
              f"{len(tree.nodes)} nodes in sequential form")
        print(f"Initial value: {result.initial_value(game).round(6).tolist()}")
        print(f"Largest deviation gain: {verdict.max_gain:.3e}")
        for row in result.strategy.to_dict(game):
            probs = ", ".join(f"{a}={p:.4f}" for a, p in row["probs"].items())
            print(f"   stage {row['stage']} {row['state']} agent {row['agent']}: {probs}")
        if args.out:
            result.strategy.save(args.out, game)
            print(f"Strategy saved to {args.out}")
        return 0

    if args.eq_command == "verify-ne":
        strategy = Strategy.load(args.strategy, game) if args.strategy else uniform_strategy(game)
        verdict = verify_nash(game, strategy, tol=args.tol)
        print(f"Nash equilibrium: {'yes' if verdict.is_nash else 'no'}")
        print(f"Largest deviation gain: {verdict.max_gain:.3e} (agent {verdict.worst_agent}, {verdict.worst_key})")
        for agent, gain in sorted(verdict.gains.items()):
            print(f"   agent {agent}: {gain:.3e}")
        return 0 if verdict.is_nash else 2

    # embed
    embedded = game.embed()
    print(format_game(embedded), end="")
    strategy = Strategy.load(args.strategy, game) if args.strategy else uniform_strategy(game)
    print(f"# value gap between fluid and embedded form: {embedding_gap(game, strategy):.3e}")
    return 0


def cmd_env(args) -> int:
    from fluid_agents.envs.fuzz import fuzz
    from fluid_agents.learners.presets import parse_overrides

    report = fuzz(args.env, args.steps, seed=args.seed, config=parse_overrides(args.set, parse_values=True) or None)
    print(f"Fuzzed {report.env}: {report.steps} steps, {report.episodes} episodes, "
          f"max alive {report.max_alive}, {report.spawns_at_cap} spawns at the ceiling")
    for line in report.violations:
        print(f"   {line}")
    print("All invariants held" if report.ok else f"{len(report.violations)} invariant violations")
    return 0 if report.ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Multi-agent learning with a changing population")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Logging level (default from FLUID_AGENTS_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("presets", help="List named training presets").set_defaults(func=cmd_presets)

    train_p = sub.add_parser("train", help="Train a learner")
    source = train_p.add_mutually_exclusive_group(required=True)
    source.add_argument("--preset", help="Named preset, see 'presets'")
    source.add_argument("--config", help="JSON config file")
    train_p.add_argument("--seed", type=int)
    train_p.add_argument("--steps", type=int, help="Vector environment steps")
    train_p.add_argument("--workers", type=int, help="Threads stepping environments (0 = deterministic)")
    train_p.add_argument("--out", default=str(RUNS_DIR), help="Runs directory")
    train_p.add_argument("--run-id", help="Run directory name (default <preset>_s<seed>)")
    train_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                         help="Override, e.g. learner.lr_init=5e-4 or env.n_max=6")
    train_p.add_argument("--quiet", action="store_true", help="No progress bar")
    train_p.set_defaults(func=cmd_train)

    eval_p = sub.add_parser("eval", help="Evaluate a checkpoint")
    eval_p.add_argument("--ckpt", required=True)
    eval_p.add_argument("--episodes", type=int, default=100)
    eval_p.add_argument("--seed", type=int)
    eval_p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Environment override")
    eval_p.add_argument("--out", help="Directory for episodes.csv")
    eval_p.set_defaults(func=cmd_eval)

    report_p = sub.add_parser("report", help="Tables and figures over a runs directory")
    report_p.add_argument("--runs", default=str(RUNS_DIR))
    report_p.add_argument("--out", default="reports")
    report_p.set_defaults(func=cmd_report)

    eq_p = sub.add_parser("eq", help="Tabular fluid games")
    eq_sub = eq_p.add_subparsers(dest="eq_command", required=True)
    for name, text in (("solve-spne", "Subgame-perfect equilibrium by backward induction"),
                       ("verify-ne", "Check a strategy for profitable deviations"),
                       ("embed", "Print the fixed-population form")):
        p = eq_sub.add_parser(name, help=text)
        p.add_argument("--game", required=True)
        if name == "solve-spne":
            p.add_argument("--out", help="Save the strategy as JSON")
        else:
            p.add_argument("--strategy", help="Strategy JSON (default: uniform)")
        if name == "verify-ne":
            p.add_argument("--tol", type=float, default=1e-9)
    eq_p.set_defaults(func=cmd_eq)

    env_p = sub.add_parser("env", help="Environment tools")
    env_sub = env_p.add_subparsers(dest="env_command", required=True)
    fuzz_p = env_sub.add_parser("fuzz", help="Random actions with invariant checks")
    fuzz_p.add_argument("--env", required=True, choices=["predator_prey", "lbf", "puddle_bridge"])
    fuzz_p.add_argument("--steps", type=int, default=10_000)
    fuzz_p.add_argument("--seed", type=int, default=0)
    fuzz_p.add_argument("--set", action="append", metavar="KEY=VALUE", help="Environment config value")
    env_p.set_defaults(func=cmd_env)
    return parser


def main(argv=None) -> int:
    """Command line interface"""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except FluidAgentsError as e:
        print(f"Error: {e}")
        return 1
    except KeyboardInterrupt:
        print("\nStopped by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
