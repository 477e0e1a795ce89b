"""Experiment orchestration: configs, training/eval loops, persistence.

A benchmark is a grid of environments x planners.  Every cell derives
its own seed from the base seed and the cell's names, so planner order
in the config can never shift another planner's streams.  Wall-clock
timing is written to a sidecar file (timing.csv) and the human report;
the canonical results.csv and runs.jsonl depend only on the seed and
are byte-reproducible.
"""
from __future__ import annotations

import configparser
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import (
    DEFAULT_MCTS_C,
    DEFAULT_Q_DISCOUNT,
    DEFAULT_Q_EPISODES,
    DEFAULT_Q_EPS,
    DEFAULT_Q_LR,
    DEFAULT_Q_TABLE_BYTES,
    DEFAULT_RRT_GOAL_BIAS,
    mcts_execute,
    q_train,
    rrt_execute,
)
from .environment import Environment, Episode, generate_chain_env, generate_random_env, load_env
from .rng import Pcg32, derive_seed, spawn
from .skills import LearnerConfig, SkillLibrary, run_goal_episode, run_training

DEFAULT_MEP_STEPS = 5000


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# Planners


class MepPlanner:
    """Skill-learning planner: train a library, then drive the goal skill."""

    kind = "mep"

    def __init__(self, training_steps: int = DEFAULT_MEP_STEPS,
                 config: LearnerConfig | None = None):
        if training_steps < 1:
            raise ConfigError("training_steps must be positive")
        self.training_steps = training_steps
        self.config = config or LearnerConfig()
        self.library: SkillLibrary | None = None
        self._eval_library: SkillLibrary | None = None

    @property
    def params(self) -> str:
        return f"steps={self.training_steps}"

    def prepare(self, env: Environment, seed: int) -> None:
        lib = SkillLibrary.from_environment(env, self.config)
        run_training(env, lib, self.training_steps,
                     spawn(seed, "agent"), spawn(seed, "noise"))
        self.library = lib
        self._eval_library = lib.evaluation_clone()

    def run_episode(self, env: Environment, seed: int) -> tuple[bool, int]:
        """Measured episodes share one evaluation copy of the library,
        so the bandit keeps adapting from run to run."""
        if self._eval_library is None:
            raise RuntimeError("planner not prepared")
        return run_goal_episode(env, self._eval_library,
                                spawn(seed, "agent"), spawn(seed, "noise"),
                                reuse_library=True)


class QPlanner:
    """Tabular Q-learning baseline."""

    kind = "q"

    def __init__(self, episodes: int = DEFAULT_Q_EPISODES,
                 lr: float = DEFAULT_Q_LR,
                 discount: float = DEFAULT_Q_DISCOUNT,
                 eps_greedy: float = DEFAULT_Q_EPS,
                 max_table_bytes: int = DEFAULT_Q_TABLE_BYTES):
        self.episodes = episodes
        self.lr = lr
        self.discount = discount
        self.eps_greedy = eps_greedy
        self.max_table_bytes = max_table_bytes
        self.table = None

    @property
    def params(self) -> str:
        return f"episodes={self.episodes}"

    def prepare(self, env: Environment, seed: int) -> None:
        self.table = q_train(
            env, spawn(seed, "agent"), episodes=self.episodes, lr=self.lr,
            discount=self.discount, eps_greedy=self.eps_greedy,
            max_table_bytes=self.max_table_bytes)

    def run_episode(self, env: Environment, seed: int) -> tuple[bool, int]:
        if self.table is None:
            raise RuntimeError("planner not prepared")
        if self.table.oom:
            return False, 0
        episode = Episode(env, spawn(seed, "noise"))
        from .baselines import q_execute

        q_execute(self.table, episode, spawn(seed, "agent"))
        if episode.succeeded:
            return True, int(episode.first_goal_step)
        return False, episode.steps_used

    @property
    def note(self) -> str:
        return "oom" if self.table is not None and self.table.oom else ""


class MctsPlanner:
    """Budgeted UCT search, re-run before every executed action."""

    kind = "mcts"

    def __init__(self, budget: int, exploration_c: float = DEFAULT_MCTS_C):
        if budget < 1:
            raise ConfigError("mcts budget must be positive")
        self.budget = budget
        self.exploration_c = exploration_c

    @property
    def params(self) -> str:
        return f"budget={self.budget}"

    def prepare(self, env: Environment, seed: int) -> None:
        pass

    def run_episode(self, env: Environment, seed: int) -> tuple[bool, int]:
        episode = Episode(env, spawn(seed, "noise"))
        mcts_execute(env, episode, self.budget, spawn(seed, "agent"),
                     exploration_c=self.exploration_c)
        if episode.succeeded:
            return True, int(episode.first_goal_step)
        return False, episode.steps_used


class RrtPlanner:
    """Goal-biased random tree over the noiseless model, with replanning."""

    kind = "rrt"

    def __init__(self, max_nodes: int,
                 goal_bias: float = DEFAULT_RRT_GOAL_BIAS):
        if max_nodes < 1:
            raise ConfigError("rrt max_nodes must be positive")
        self.max_nodes = max_nodes
        self.goal_bias = goal_bias

    @property
    def params(self) -> str:
        return f"max_nodes={self.max_nodes}"

    def prepare(self, env: Environment, seed: int) -> None:
        pass

    def run_episode(self, env: Environment, seed: int) -> tuple[bool, int]:
        episode = Episode(env, spawn(seed, "noise"))
        rrt_execute(env, episode, self.max_nodes, spawn(seed, "agent"),
                    goal_bias=self.goal_bias)
        if episode.succeeded:
            return True, int(episode.first_goal_step)
        return False, episode.steps_used


def train_mep(env: Environment, lib: SkillLibrary, steps: int,
              rng: Pcg32) -> SkillLibrary:
    """Train a library in place for a primitive-step budget."""
    return run_training(env, lib, steps, rng.split("agent"),
                        rng.split("noise"))


# ---------------------------------------------------------------------------
# Results


@dataclass
class RunRecord:
    env: str
    planner: str
    run: int
    seed: int
    success: bool
    steps: int
    time_s: float


@dataclass
class ResultRow:
    env: str
    planner: str
    params: str
    success_rate: float  # percent
    steps_mean: float | None
    steps_std: float | None
    n_runs: int
    seed: int
    note: str = ""
    time_mean_ms: float = 0.0
    time_std_ms: float = 0.0
    runs: list[RunRecord] = field(default_factory=list)


def _mean_std(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    if n < 2:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def evaluate(env: Environment, planner, num_runs: int, base_seed: int,
             env_name: str = "env") -> ResultRow:
    """Run independent measured episodes; aggregate per the row contract.

    Step statistics are computed over successful runs only.  Run i uses
    a seed derived from (base seed, env name, planner name, i), so rows
    are independent of grid order.
    """
    if num_runs < 1:
        raise ConfigError("num_runs must be at least 1")
    planner_name = getattr(planner, "name", planner.__class__.__name__)
    records = []
    for i in range(num_runs):
        run_seed = derive_seed(base_seed, "run", env_name, planner_name, i)
        t0 = time.perf_counter()
        success, steps = planner.run_episode(env, run_seed)
        elapsed = time.perf_counter() - t0
        records.append(RunRecord(env=env_name, planner=planner_name, run=i,
                                 seed=run_seed, success=success, steps=steps,
                                 time_s=elapsed))
    wins = [r.steps for r in records if r.success]
    steps_mean, steps_std = _mean_std([float(w) for w in wins]) if wins else (None, None)
    time_mean, time_std = _mean_std([r.time_s * 1000.0 for r in records])
    return ResultRow(
        env=env_name,
        planner=planner_name,
        params=getattr(planner, "params", ""),
        success_rate=100.0 * len(wins) / num_runs,
        steps_mean=steps_mean,
        steps_std=steps_std,
        n_runs=num_runs,
        seed=base_seed,
        note=getattr(planner, "note", ""),
        time_mean_ms=time_mean,
        time_std_ms=time_std,
        runs=records,
    )


# ---------------------------------------------------------------------------
# Experiment configuration


@dataclass(frozen=True)
class EnvSpec:
    name: str
    kind: str  # chain | random | file
    params: tuple[tuple[str, object], ...]

    def build(self, base_seed: int) -> Environment:
        params = dict(self.params)
        params.pop("generator", None)
        seed = params.pop("seed", None)
        if seed is None:
            seed = derive_seed(base_seed, "envgen", self.name)
        if self.kind == "chain":
            env = generate_chain_env(
                int(params.pop("nodes")),
                seed,
                flip_prob=float(params.pop("noise", 0.0)),
                episode_length=_opt_int(params.pop("episode_length", None)),
            )
        elif self.kind == "random":
            env = generate_random_env(
                int(params.pop("nodes")),
                float(params.pop("avg_edges")),
                bool(params.pop("consuming", False)),
                seed,
                flip_prob=float(params.pop("noise", 0.05)),
                episode_length=_opt_int(params.pop("episode_length", None)),
            )
        elif self.kind == "file":
            env = load_env(params.pop("path"))
        else:
            raise ConfigError(f"unknown environment kind {self.kind!r}")
        if params:
            raise ConfigError(
                f"environment {self.name!r}: unknown parameters "
                f"{sorted(params)}")
        return env


def _opt_int(value):
    return None if value is None else int(value)


@dataclass(frozen=True)
class PlannerSpec:
    name: str
    kind: str  # mep | q | mcts | rrt
    params: tuple[tuple[str, object], ...]

    def build(self):
        params = dict(self.params)
        if self.kind == "mep":
            cfg_fields = {}
            for key in ("epsilon", "delta", "gamma", "reg_c"):
                if key in params:
                    cfg_fields[key] = float(params.pop(key))
            for key in ("max_window", "max_depth", "windows_per_episode"):
                if key in params:
                    cfg_fields[key] = int(params.pop(key))
            planner = MepPlanner(
                training_steps=int(params.pop("training_steps",
                                              DEFAULT_MEP_STEPS)),
                config=LearnerConfig(**cfg_fields),
            )
        elif self.kind == "q":
            planner = QPlanner(
                episodes=int(params.pop("episodes", DEFAULT_Q_EPISODES)),
                lr=float(params.pop("lr", DEFAULT_Q_LR)),
                discount=float(params.pop("discount", DEFAULT_Q_DISCOUNT)),
                eps_greedy=float(params.pop("eps_greedy", DEFAULT_Q_EPS)),
                max_table_bytes=int(params.pop("max_table_bytes",
                                               DEFAULT_Q_TABLE_BYTES)),
            )
        elif self.kind == "mcts":
            planner = MctsPlanner(
                budget=int(params.pop("budget")),
                exploration_c=float(params.pop("exploration_c",
                                               DEFAULT_MCTS_C)),
            )
        elif self.kind == "rrt":
            planner = RrtPlanner(
                max_nodes=int(params.pop("max_nodes")),
                goal_bias=float(params.pop("goal_bias",
                                           DEFAULT_RRT_GOAL_BIAS)),
            )
        else:
            raise ConfigError(f"unknown planner kind {self.kind!r}")
        if params:
            raise ConfigError(
                f"planner {self.name!r}: unknown parameters {sorted(params)}")
        planner.name = self.name
        return planner


@dataclass
class ExperimentConfig:
    envs: list[EnvSpec]
    planners: list[PlannerSpec]
    num_runs: int = 10
    base_seed: int = 0
    out_dir: str = "results"

    def validate(self) -> None:
        if self.num_runs < 1:
            raise ConfigError("num_runs must be at least 1")
        if not self.envs or not self.planners:
            raise ConfigError("need at least one environment and one planner")
        names = [e.name for e in self.envs]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate environment names")
        names = [p.name for p in self.planners]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate planner names")
        for planner in self.planners:
            planner.build()  # fails fast on bad parameters
        for env in self.envs:
            if env.kind not in ("chain", "random", "file"):
                raise ConfigError(f"unknown environment kind {env.kind!r}")


def _coerce(value: str):
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        pass
    return value.strip()


def parse_config(path) -> ExperimentConfig:
    """Read the sectioned config format (see README for an example)."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    num_runs = 10
    base_seed = 0
    out_dir = "results"
    if parser.has_section("run"):
        section = parser["run"]
        num_runs = section.getint("runs", num_runs)
        base_seed = section.getint("seed", base_seed)
        out_dir = section.get("out", out_dir)
    envs = []
    planners = []
    for section_name in parser.sections():
        if section_name == "run":
            continue
        section = dict(parser[section_name])
        if section_name.startswith("env:"):
            kind = section.pop("generator", None)
            if kind is None:
                kind = "file" if "path" in section else None
            if kind is None:
                raise ConfigError(
                    f"[{section_name}] needs a generator or a path")
            envs.append(EnvSpec(
                name=section_name[4:],
                kind=kind,
                params=tuple(sorted(
                    (k, _coerce(v)) for k, v in section.items())),
            ))
        elif section_name.startswith("planner:"):
            kind = section.pop("type", None)
            if kind is None:
                raise ConfigError(f"[{section_name}] needs a type")
            planners.append(PlannerSpec(
                name=section_name[8:],
                kind=kind,
                params=tuple(sorted(
                    (k, _coerce(v)) for k, v in section.items())),
            ))
        else:
            raise ConfigError(f"unknown config section [{section_name}]")
    config = ExperimentConfig(envs=envs, planners=planners, num_runs=num_runs,
                              base_seed=base_seed, out_dir=out_dir)
    config.validate()
    return config


def default_config(num_runs: int = 10, base_seed: int = 0,
                   out_dir: str = "results") -> ExperimentConfig:
    """The full benchmark grid: four worlds, seven planner rows."""
    def env(name, nodes, avg_edges, consuming, ep_len):
        return EnvSpec(name=name, kind="random", params=(
            ("avg_edges", avg_edges), ("consuming", consuming),
            ("episode_length", ep_len), ("nodes", nodes), ("noise", 0.05)))

    envs = [
        env("mining", 22, 2.27, False, 40),
        env("miningv2", 22, 3.18, True, 80),
        env("baking", 30, 2.00, False, 60),
        env("random", 100, 1.32, False, 100),
    ]
    planners = [
        PlannerSpec("mep", "mep", ()),
        PlannerSpec("q", "q", ()),
        PlannerSpec("mcts-100", "mcts", (("budget", 100),)),
        PlannerSpec("mcts-1000", "mcts", (("budget", 1000),)),
        PlannerSpec("mcts-5000", "mcts", (("budget", 5000),)),
        PlannerSpec("rrt-1000", "rrt", (("max_nodes", 1000),)),
        PlannerSpec("rrt-10000", "rrt", (("max_nodes", 10000),)),
    ]
    return ExperimentConfig(envs=envs, planners=planners, num_runs=num_runs,
                            base_seed=base_seed, out_dir=out_dir)


# ---------------------------------------------------------------------------
# Benchmark execution and persistence


def _run_cell(args) -> ResultRow:
    env_spec, planner_spec, num_runs, base_seed = args
    env = env_spec.build(base_seed)
    planner = planner_spec.build()
    t0 = time.perf_counter()
    planner.prepare(env, derive_seed(base_seed, "train", env_spec.name,
                                     planner_spec.name))
    prepare_s = time.perf_counter() - t0
    row = evaluate(env, planner, num_runs, base_seed, env_name=env_spec.name)
    row.note = (row.note + f" prepare={prepare_s:.1f}s").strip()
    return row


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(round(value, 9))
    return str(value)


def write_results(rows: list[ResultRow], out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    results = out / "results.csv"
    with open(results, "w") as fh:
        fh.write("env,planner,params,success_rate,steps_mean,steps_std,"
                 "n_runs,seed\n")
        for row in rows:
            fh.write(",".join([
                row.env, row.planner, row.params.replace(",", ";"),
                _fmt(row.success_rate), _fmt(row.steps_mean),
                _fmt(row.steps_std), str(row.n_runs), str(row.seed),
            ]) + "\n")

    with open(out / "runs.jsonl", "w") as fh:
        for row in rows:
            for record in row.runs:
                fh.write(json.dumps({
                    "env": record.env, "planner": record.planner,
                    "run": record.run, "seed": record.seed,
                    "success": record.success, "steps": record.steps,
                }, sort_keys=True) + "\n")

    with open(out / "timing.csv", "w") as fh:
        fh.write("env,planner,time_mean_ms,time_std_ms,note\n")
        for row in rows:
            fh.write(",".join([
                row.env, row.planner, f"{row.time_mean_ms:.3f}",
                f"{row.time_std_ms:.3f}", row.note.replace(",", ";"),
            ]) + "\n")

    with open(out / "report.txt", "w") as fh:
        fh.write(format_report(rows) + "\n")
    return results


def format_report(rows: list[ResultRow]) -> str:
    """Human-readable grid: planners down, environments across."""
    env_names = []
    planner_names = []
    for row in rows:
        if row.env not in env_names:
            env_names.append(row.env)
        if row.planner not in planner_names:
            planner_names.append(row.planner)
    by_cell = {(r.env, r.planner): r for r in rows}

    def cell(row: ResultRow | None) -> str:
        if row is None:
            return f"{'':>8}  {'':>16}"
        if row.steps_mean is None:
            steps = "--"
        else:
            steps = f"{row.steps_mean:.2f} ± {row.steps_std:.2f}"
        return f"{row.success_rate:>7.1f}%  {steps:>16}"

    width = max(len(n) for n in planner_names) + 2
    header1 = " " * width + "".join(f"{name:^27}" for name in env_names)
    header2 = " " * width + "".join(
        f"{'success':>8}  {'steps':>16} " for _ in env_names)
    lines = [header1, header2, "-" * len(header2)]
    for planner in planner_names:
        parts = [f"{planner:<{width}}"]
        for env in env_names:
            parts.append(cell(by_cell.get((env, planner))) + " ")
        lines.append("".join(parts))
    return "\n".join(lines)


def run_benchmark(config: ExperimentConfig, workers: int = 1) -> Path:
    """Execute the grid and persist results; returns the results.csv path.

    Byte-reproducible given the base seed: cell seeds derive from names,
    rows are written in config order, and timing lives in sidecar files.
    """
    config.validate()
    cells = [(env, planner, config.num_runs, config.base_seed)
             for env in config.envs for planner in config.planners]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, cells))
    else:
        rows = [_run_cell(cell) for cell in cells]
    return write_results(rows, config.out_dir)
