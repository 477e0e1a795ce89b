"""Command-line interface.

Subcommands:
  gen-env   write a generated environment to a file
  train     train a skill library on an environment and checkpoint it
  eval      evaluate a planner on an environment
  bench     run a benchmark grid from a config file (or the default grid)
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .environment import generate_chain_env, generate_random_env, load_env, save_env
from .harness import (
    MctsPlanner,
    MepPlanner,
    QPlanner,
    RrtPlanner,
    default_config,
    evaluate,
    parse_config,
    run_benchmark,
    write_results,
)
from .kernels import backend_name
from .library_io import load_library, save_library
from .rng import derive_seed, spawn
from .skills import LearnerConfig, SkillLibrary, run_training


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="base seed")
    parser.add_argument("--out", default=None, help="output path")
    parser.add_argument("--config", default=None, help="config file")


def _cmd_gen_env(args) -> int:
    if args.kind == "chain":
        env = generate_chain_env(args.nodes, args.seed, flip_prob=args.noise,
                                 episode_length=args.episode_length)
    else:
        env = generate_random_env(
            args.nodes, args.avg_edges, args.consuming, args.seed,
            flip_prob=args.noise, episode_length=args.episode_length)
    out = args.out or "environment.txt"
    save_env(env, out)
    print(f"wrote {out}: {env.dim} features, {len(env.actions)} actions, "
          f"goal {env.goal_dim}, episode length {env.episode_length}")
    return 0


def _cmd_train(args) -> int:
    env = load_env(args.env)
    cfg = LearnerConfig(epsilon=args.epsilon, delta=args.delta,
                        gamma=args.gamma)
    lib = SkillLibrary.from_environment(env, cfg)
    seed = derive_seed(args.seed, "train")
    run_training(env, lib, args.steps, spawn(seed, "agent"),
                 spawn(seed, "noise"))
    out = args.out or "library.txt"
    save_library(lib, out)
    print(f"wrote {out}: {len(lib.skills)} skills, {lib.total_arms()} arms "
          f"after {args.steps} training steps")
    return 0


class _LibraryPlanner:
    """Evaluation adapter around a checkpointed library."""

    kind = "mep"
    params = "from checkpoint"

    def __init__(self, library):
        self.library = library
        self._eval_library = library.evaluation_clone()

    def run_episode(self, env, seed):
        from .skills import run_goal_episode

        return run_goal_episode(env, self._eval_library,
                                spawn(seed, "agent"), spawn(seed, "noise"),
                                reuse_library=True)


def _build_planner(args):
    if args.library:
        return _LibraryPlanner(load_library(args.library))
    if args.planner == "mep":
        return MepPlanner(training_steps=args.steps)
    if args.planner == "q":
        return QPlanner()
    if args.planner == "mcts":
        return MctsPlanner(budget=args.budget)
    if args.planner == "rrt":
        return RrtPlanner(max_nodes=args.max_nodes)
    raise SystemExit(f"unknown planner {args.planner!r}")


def _cmd_eval(args) -> int:
    env = load_env(args.env)
    planner = _build_planner(args)
    planner.name = args.planner if not args.library else "mep"
    if hasattr(planner, "prepare"):
        planner.prepare(env, derive_seed(args.seed, "train", planner.name))
    row = evaluate(env, planner, args.runs, args.seed,
                   env_name=args.env_name)
    steps = ("--" if row.steps_mean is None
             else f"{row.steps_mean:.2f} ± {row.steps_std:.2f}")
    print(f"{row.planner}: success {row.success_rate:.1f}% over "
          f"{row.n_runs} runs, steps {steps}")
    if args.out:
        write_results([row], args.out)
        print(f"wrote {args.out}/results.csv")
    return 0


def _cmd_bench(args) -> int:
    if args.config:
        config = parse_config(args.config)
    else:
        config = default_config()
    if args.seed is not None:
        config.base_seed = args.seed
    if args.out:
        config.out_dir = args.out
    if args.runs:
        config.num_runs = args.runs
    results = run_benchmark(config, workers=args.workers)
    print(f"wrote {results}")
    print((results.parent / "report.txt").read_text())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="skillbandit",
        description="Skill-learning planner and baselines on binary "
                    "dependency-graph worlds "
                    f"(kernel backend: {backend_name()})",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="generate an environment file")
    p.add_argument("--kind", choices=("chain", "random"), default="random")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--avg-edges", type=float, default=2.0, dest="avg_edges")
    p.add_argument("--consuming", action="store_true")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--episode-length", type=int, default=None,
                   dest="episode_length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_gen_env)

    p = sub.add_parser("train", help="train a skill library")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a planner")
    p.add_argument("--env", required=True, help="environment file")
    p.add_argument("--env-name", default="env", dest="env_name")
    p.add_argument("--planner", choices=("mep", "q", "mcts", "rrt"),
                   default="mep")
    p.add_argument("--library", default=None,
                   help="library checkpoint (skips training)")
    p.add_argument("--steps", type=int, default=5000,
                   help="training steps for the skill planner")
    p.add_argument("--budget", type=int, default=1000, help="mcts budget")
    p.add_argument("--max-nodes", type=int, default=1000, dest="max_nodes")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="run a benchmark grid")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_bench)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
