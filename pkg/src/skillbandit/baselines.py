"""Comparison planners run against the same environment interface.

Three families: model-free tabular Q-learning, budgeted UCT tree search
re-run every time step, and a goal-biased random tree over the discrete
state space with replanning on deviation.  The tree planners receive a
generative simulator handle (sampled transitions and a noiseless effect
model); none of them reads hidden conditions through a side channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .environment import Environment, Episode, GenerativeModel, State
from .kernels import backend, pure
from .rng import Pcg32

DEFAULT_Q_EPISODES = 20_000
DEFAULT_Q_LR = 0.1
DEFAULT_Q_DISCOUNT = 0.99
DEFAULT_Q_EPS = 0.1
DEFAULT_Q_TABLE_BYTES = 512 << 20
DEFAULT_MCTS_C = 1.0 / math.sqrt(2.0)
DEFAULT_RRT_GOAL_BIAS = 0.05


# ---------------------------------------------------------------------------
# Tabular Q-learning


@dataclass
class QTable:
    """Sparse state-action values; rows exist only for visited states."""

    dim: int
    action_ids: tuple[int, ...]
    index: dict[int, int]
    values: np.ndarray
    oom: bool

    def row(self, state: State) -> np.ndarray:
        key = pure._pack_state(state)
        row_i = self.index.get(key)
        if row_i is None:
            return np.zeros(len(self.action_ids))
        return self.values[row_i]

    @property
    def n_states(self) -> int:
        return len(self.index)


def q_train(env: Environment, rng: Pcg32, episodes: int = DEFAULT_Q_EPISODES,
            lr: float = DEFAULT_Q_LR, discount: float = DEFAULT_Q_DISCOUNT,
            eps_greedy: float = DEFAULT_Q_EPS,
            max_table_bytes: int = DEFAULT_Q_TABLE_BYTES) -> QTable:
    """One-step Q-learning with reward 0 at the goal and -1 per step.

    The table grows one row per newly visited state under a byte budget;
    exceeding it aborts training and marks the table out-of-memory,
    which the harness records as a planner failure.
    """
    tables = env.tables
    n_actions = tables.n_actions
    max_rows = max(1, max_table_bytes // (8 * n_actions))
    impl = backend if env.dim <= 64 else pure
    keys, values, _, oom, rng.state = impl.q_train(
        n_actions, *tables.step_args(), env.noise.flip_prob, env.goal_dim,
        env.initial_state, env.episode_length, episodes, lr, discount,
        eps_greedy, max_rows, rng.state, rng.inc,
    )
    return QTable(
        dim=env.dim,
        action_ids=tables.action_ids,
        index={key: i for i, key in enumerate(keys)},
        values=np.asarray(values),
        oom=bool(oom),
    )


def q_act(table: QTable, state: State, rng: Pcg32) -> int:
    """Greedy action id for a state, uniform among ties."""
    row = table.row(state)
    best = row.max()
    ties = np.nonzero(row == best)[0]
    pick = ties[rng.randint(len(ties))] if len(ties) > 1 else ties[0]
    return table.action_ids[int(pick)]


def q_execute(table: QTable, episode: Episode, rng: Pcg32) -> None:
    """Run the greedy policy until the episode ends."""
    while not episode.done:
        episode.step_action(q_act(table, episode.state, rng))


# ---------------------------------------------------------------------------
# Monte-Carlo tree search (UCT)


class _Node:
    __slots__ = ("state", "n", "w", "visits")

    def __init__(self, state: State, n_actions: int):
        self.state = state
        self.n = np.zeros(n_actions, dtype=np.int64)
        self.w = np.zeros(n_actions, dtype=np.float64)
        self.visits = 0


def mcts_plan(env: Environment, state: State, budget: int, rng: Pcg32,
              exploration_c: float = DEFAULT_MCTS_C,
              horizon: int | None = None) -> int:
    """One UCT search from ``state``; returns the most visited root action.

    The tree samples noisy transitions from the generative model; leaf
    values come from uniform-random rollouts to the horizon.  Returns
    are normalized to [0, 1] (1 = immediate goal, 0 = horizon without
    goal) so the exploration constant works on a known scale.
    """
    if budget < 1:
        raise ValueError("budget must be positive")
    model = GenerativeModel(env)
    n_actions = model.n_actions
    if horizon is None:
        horizon = env.episode_length
    horizon = max(1, horizon)

    nodes: dict[bytes, _Node] = {}
    root = _Node(state.copy(), n_actions)
    nodes[state.tobytes()] = root

    for _ in range(budget):
        node = root
        path: list[tuple[_Node, int]] = []
        depth = 0
        value = 0.0
        while True:
            untried = np.nonzero(node.n == 0)[0]
            if len(untried):
                action = int(untried[rng.randint(len(untried))])
            else:
                log_n = math.log(node.visits)
                best_score = -math.inf
                action = 0
                for a in range(n_actions):
                    score = node.w[a] / node.n[a] + exploration_c * math.sqrt(
                        log_n / node.n[a])
                    if score > best_score:
                        best_score = score
                        action = a
            path.append((node, action))
            depth += 1
            nxt = model.sample_step(node.state, action, rng)
            if nxt[env.goal_dim] == 1:
                value = 1.0 - depth / horizon
                break
            if depth >= horizon:
                value = 0.0
                break
            key = nxt.tobytes()
            child = nodes.get(key)
            if child is None:
                child = _Node(nxt, n_actions)
                nodes[key] = child
                steps = model.rollout(nxt, horizon - depth, rng)
                if steps >= 0:
                    value = 1.0 - (depth + steps) / horizon
                else:
                    value = 0.0
                break
            node = child
        for visited, action in path:
            visited.visits += 1
            visited.n[action] += 1
            visited.w[action] += value

    best = root.n.max()
    ties = np.nonzero(root.n == best)[0]
    pick = ties[rng.randint(len(ties))] if len(ties) > 1 else ties[0]
    return env.tables.action_ids[int(pick)]


def mcts_execute(env: Environment, episode: Episode, budget: int, rng: Pcg32,
                 exploration_c: float = DEFAULT_MCTS_C) -> None:
    """Re-plan with a fresh search before every executed action."""
    while not episode.done:
        action = mcts_plan(env, episode.state, budget, rng,
                           exploration_c=exploration_c,
                           horizon=episode.budget - episode.steps_used)
        episode.step_action(action)


# ---------------------------------------------------------------------------
# Random tree planner


class ActionMatrices:
    """Vectorized noiseless dynamics for all actions at once."""

    def __init__(self, env: Environment):
        self.env = env
        n, d = len(env.actions), env.dim
        self.cond_mask = np.zeros((n, d), dtype=bool)
        self.cond_val = np.zeros((n, d), dtype=np.uint8)
        self.eff_mask = np.zeros((n, d), dtype=bool)
        self.eff_val = np.zeros((n, d), dtype=np.uint8)
        for i, act in enumerate(env.actions):
            for unit in act.condition.units:
                self.cond_mask[i, unit.dim] = True
                self.cond_val[i, unit.dim] = int(unit.predicate)
            for unit in act.effect.units:
                self.eff_mask[i, unit.dim] = True
                self.eff_val[i, unit.dim] = int(unit.transform)

    def successors(self, state: State) -> np.ndarray:
        """Noiseless next state for every action (unchanged when gated)."""
        violated = (self.cond_mask & (state[None, :] != self.cond_val)).any(axis=1)
        out = np.where(self.eff_mask, self.eff_val, state[None, :])
        out[violated] = state
        return out.astype(np.uint8)


def rrt_plan(env: Environment, state: State, max_nodes: int, rng: Pcg32,
             goal_bias: float = DEFAULT_RRT_GOAL_BIAS,
             ) -> list[tuple[int, State]] | None:
    """Grow a random tree toward the goal over the noiseless model.

    Each expansion samples a target bit-vector (goal-biased with small
    probability), walks to the Hamming-nearest unexhausted node and adds
    one new state reached by an applicable action.  Returns the planned
    path as (action id, predicted state) pairs, or None after
    ``max_nodes`` expansions without reaching the goal.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be positive")
    dims = env.dim
    mats = ActionMatrices(env)
    n_actions = len(env.actions)
    states = np.zeros((max_nodes, dims), dtype=np.uint8)
    states[0] = state
    parents = [-1]
    acts = [-1]
    alive = np.zeros(max_nodes, dtype=bool)
    alive[0] = True
    seen = {state.tobytes(): 0}
    size = 1

    def path_to(idx: int) -> list[tuple[int, State]]:
        chain = []
        while parents[idx] >= 0:
            chain.append((env.tables.action_ids[acts[idx]],
                          states[idx].copy()))
            idx = parents[idx]
        chain.reverse()
        return chain

    if state[env.goal_dim] == 1:
        return []

    for _ in range(max_nodes):
        if not alive[:size].any():
            return None
        target = np.empty(dims, dtype=np.uint8)
        for d in range(dims):
            target[d] = rng.randint(2)
        if rng.random() < goal_bias:
            target[env.goal_dim] = 1
        dist = (states[:size] != target[None, :]).sum(axis=1)
        dist[~alive[:size]] = dims + 1
        nearest = int(np.argmin(dist))

        succ = mats.successors(states[nearest])
        order = list(range(n_actions))
        rng.shuffle(order)
        added = False
        for a in order:
            nxt = succ[a]
            key = nxt.tobytes()
            if key in seen:
                continue
            if size >= max_nodes:
                return None
            states[size] = nxt
            parents.append(nearest)
            acts.append(a)
            alive[size] = True
            seen[key] = size
            size += 1
            added = True
            if nxt[env.goal_dim] == 1:
                return path_to(size - 1)
            break
        if not added:
            alive[nearest] = False
    return None


def rrt_execute(env: Environment, episode: Episode, max_nodes: int,
                rng: Pcg32,
                goal_bias: float = DEFAULT_RRT_GOAL_BIAS) -> None:
    """Execute planned paths in the noisy world, replanning on deviation."""
    while not episode.done:
        plan = rrt_plan(env, episode.state, max_nodes, rng,
                        goal_bias=goal_bias)
        if plan is None:
            return
        for action_id, predicted in plan:
            episode.step_action(action_id)
            if episode.done:
                return
            if not np.array_equal(episode.state, predicted):
                break
