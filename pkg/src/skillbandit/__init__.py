"""Skill learning on binary dependency-graph worlds.

An agent that turns windows of its own behaviour into reusable action
sequences ("arms"), organizes them into per-effect skills, and picks
among them with a state-conditional UCB rule backed by a calibrated
kernel success model.  Ships with a noisy simulator for worlds with
hidden action preconditions, Q-learning / MCTS / RRT baselines, and a
seeded, reproducible benchmark harness.

Hot loops run in a compiled extension when available; a pure-Python
twin with identical stream semantics is selected automatically
otherwise (or when SKILLBANDIT_PURE=1).
"""
from .bandit import ArmScore, select_arm, ucb_score
from .baselines import QTable, mcts_plan, q_act, q_train, rrt_plan
from .environment import (
    Condition,
    DependencyGraph,
    Effect,
    EnvFormatError,
    EnvGenerationError,
    Environment,
    Episode,
    GenerativeModel,
    NoiseModel,
    Predicate,
    PrimitiveAction,
    Transform,
    UnitCondition,
    UnitEffect,
    apply_effect,
    apply_noise,
    dependency_graph,
    env_step,
    evaluate_condition,
    generate_chain_env,
    generate_random_env,
    goal_reached,
    load_env,
    make_state,
    save_env,
)
from .harness import (
    ExperimentConfig,
    MctsPlanner,
    MepPlanner,
    QPlanner,
    ResultRow,
    RrtPlanner,
    default_config,
    evaluate,
    parse_config,
    run_benchmark,
    train_mep,
)
from .kernels import backend_name, has_compiled
from .library_io import load_library, save_library
from .rng import Pcg32, derive_seed, spawn
from .skills import (
    Arm,
    Admission,
    LearnerConfig,
    Outcome,
    PrimitiveStep,
    Skill,
    SkillLibrary,
    SkillStep,
    TrajectoryEntry,
    TrajectoryRecord,
    admit_arm,
    execute_skill,
    harvest_arms,
    infer_success,
    mutate_arm,
    observed_unit_effects,
    run_goal_episode,
    run_training,
)
from .success_model import (
    PlattFit,
    SingleClassError,
    SuccessModel,
    decision_value,
    fit_platt,
    fit_success_model,
    marginal_success,
    median_bandwidth,
    predict_success,
    rbf_kernel,
    train,
)

__version__ = "0.1.0"
