"""Binary-feature worlds with hidden action preconditions.

A world is a fixed-length vector of 0/1 features.  Each primitive action
carries a public effect (which bits it writes) and a hidden conjunction
of unit conditions that gates whether the effect fires.  After every
action the world applies exogenous noise: with a small probability one
uniformly chosen bit inverts.  Agents see states and effects, never the
conditions.

This module also provides episode mechanics, dependency-graph
generators and a line-oriented text format for environments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .kernels import backend
from .rng import Pcg32

State = np.ndarray  # uint8 vector of 0/1 values


class Transform(IntEnum):
    """Unit-effect write: clear a bit or set it."""

    SET_ZERO = 0
    SET_ONE = 1


class Predicate(IntEnum):
    """Unit-condition test on one bit."""

    MUST_BE_ZERO = 0
    MUST_BE_ONE = 1


@dataclass(frozen=True, order=True)
class UnitCondition:
    dim: int
    predicate: Predicate


@dataclass(frozen=True, order=True)
class UnitEffect:
    dim: int
    transform: Transform

    def holds_in(self, state: State) -> bool:
        return state[self.dim] == int(self.transform)


def _unique_dims(units, what: str) -> None:
    dims = [u.dim for u in units]
    if len(set(dims)) != len(dims):
        raise ValueError(f"duplicate dimension in {what}: {sorted(dims)}")


@dataclass(frozen=True)
class Condition:
    """Conjunction of unit conditions; empty means always fulfilled."""

    units: tuple[UnitCondition, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(sorted(self.units)))
        _unique_dims(self.units, "condition")


@dataclass(frozen=True)
class Effect:
    units: tuple[UnitEffect, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(sorted(self.units)))
        _unique_dims(self.units, "effect")


@dataclass(frozen=True)
class PrimitiveAction:
    id: int
    effect: Effect
    condition: Condition

    def __post_init__(self):
        if not self.effect.units:
            raise ValueError(f"action {self.id} has an empty effect")


@dataclass(frozen=True)
class NoiseModel:
    flip_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError(f"flip_prob out of range: {self.flip_prob}")


@dataclass(eq=False)
class Environment:
    """Immutable world description; safe to share across workers."""

    dim: int
    actions: tuple[PrimitiveAction, ...]
    noise: NoiseModel
    episode_length: int
    goal_dim: int
    initial_state: State

    def __post_init__(self):
        self.actions = tuple(self.actions)
        self.initial_state = np.asarray(self.initial_state, dtype=np.uint8)
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        if self.episode_length < 1:
            raise ValueError("episode_length must be positive")
        if not 0 <= self.goal_dim < self.dim:
            raise ValueError("goal_dim out of range")
        if self.initial_state.shape != (self.dim,):
            raise ValueError("initial_state length differs from dim")
        if self.initial_state[self.goal_dim] != 0:
            raise ValueError("initial state already satisfies the goal")
        ids = [a.id for a in self.actions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate action ids")
        for act in self.actions:
            for unit in act.effect.units + act.condition.units:
                if not 0 <= unit.dim < self.dim:
                    raise ValueError(
                        f"action {act.id} references dimension {unit.dim} "
                        f"outside [0, {self.dim})"
                    )

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.actions == other.actions
            and self.noise == other.noise
            and self.episode_length == other.episode_length
            and self.goal_dim == other.goal_dim
            and np.array_equal(self.initial_state, other.initial_state)
        )

    @cached_property
    def action_by_id(self) -> dict[int, PrimitiveAction]:
        return {a.id: a for a in self.actions}

    @cached_property
    def state_space_size(self) -> int:
        return 2**self.dim

    @cached_property
    def tables(self) -> "EnvTables":
        return EnvTables.from_environment(self)


@dataclass(frozen=True)
class EnvTables:
    """Flattened action tables consumed by the kernel backends."""

    n_actions: int
    action_ids: tuple[int, ...]
    eff_off: np.ndarray
    eff_dim: np.ndarray
    eff_val: np.ndarray
    cond_off: np.ndarray
    cond_dim: np.ndarray
    cond_val: np.ndarray

    @classmethod
    def from_environment(cls, env: Environment) -> "EnvTables":
        eff_off = [0]
        eff_dim: list[int] = []
        eff_val: list[int] = []
        cond_off = [0]
        cond_dim: list[int] = []
        cond_val: list[int] = []
        for act in env.actions:
            for unit in act.effect.units:
                eff_dim.append(unit.dim)
                eff_val.append(int(unit.transform))
            eff_off.append(len(eff_dim))
            for unit in act.condition.units:
                cond_dim.append(unit.dim)
                cond_val.append(int(unit.predicate))
            cond_off.append(len(cond_dim))
        return cls(
            n_actions=len(env.actions),
            action_ids=tuple(a.id for a in env.actions),
            eff_off=np.asarray(eff_off, dtype=np.int32),
            eff_dim=np.asarray(eff_dim, dtype=np.int32),
            eff_val=np.asarray(eff_val, dtype=np.uint8),
            cond_off=np.asarray(cond_off, dtype=np.int32),
            cond_dim=np.asarray(cond_dim, dtype=np.int32),
            cond_val=np.asarray(cond_val, dtype=np.uint8),
        )

    @cached_property
    def index_of_id(self) -> dict[int, int]:
        return {aid: i for i, aid in enumerate(self.action_ids)}

    def step_args(self):
        return (
            self.eff_off, self.eff_dim, self.eff_val,
            self.cond_off, self.cond_dim, self.cond_val,
        )


# ---------------------------------------------------------------------------
# Core transition operations


def make_state(bits: Iterable[int]) -> State:
    state = np.asarray(list(bits), dtype=np.uint8)
    if state.ndim != 1 or not np.all((state == 0) | (state == 1)):
        raise ValueError("state must be a flat vector of 0/1 values")
    return state


def evaluate_condition(state: State, condition: Condition) -> bool:
    """True iff every unit condition holds (vacuously true when empty)."""
    for unit in condition.units:
        if unit.dim >= len(state):
            raise IndexError(f"condition dimension {unit.dim} out of range")
        if state[unit.dim] != int(unit.predicate):
            return False
    return True


def apply_effect(state: State, effect: Effect) -> State:
    """New state with each unit effect written; input is not mutated."""
    out = state.copy()
    for unit in effect.units:
        if unit.dim >= len(state):
            raise IndexError(f"effect dimension {unit.dim} out of range")
        out[unit.dim] = int(unit.transform)
    return out


def apply_noise(state: State, noise: NoiseModel, rng: Pcg32) -> State:
    """With probability flip_prob invert one uniformly chosen bit.

    Always consumes one uniform draw, and a second (the dimension) only
    when a flip happens; the kernels follow the same stream contract.
    """
    out = state.copy()
    if rng.random() < noise.flip_prob:
        d = rng.randint(len(state))
        out[d] ^= 1
    return out


def env_step(env: Environment, state: State, action: PrimitiveAction,
             rng: Pcg32) -> State:
    """One world transition: gated effect, then exactly one noise draw."""
    if evaluate_condition(state, action.condition):
        out = apply_effect(state, action.effect)
    else:
        out = state.copy()
    return apply_noise(out, env.noise, rng)


def goal_reached(env: Environment, state: State) -> bool:
    return state[env.goal_dim] == 1


# ---------------------------------------------------------------------------
# Episode mechanics


class Episode:
    """Mutable episode against one environment.

    Owns the current state, the primitive-step budget and the noise
    stream.  ``stop_at_goal`` distinguishes evaluation episodes (stop as
    soon as the goal bit turns on) from open-ended training runs.
    """

    def __init__(self, env: Environment, rng: Pcg32, budget: int | None = None,
                 stop_at_goal: bool = True):
        self.env = env
        self.rng = rng
        self.state = env.initial_state.copy()
        self.budget = env.episode_length if budget is None else budget
        self.stop_at_goal = stop_at_goal
        self.steps_used = 0
        self.first_goal_step: int | None = None
        self._tables = env.tables
        self._flip = env.noise.flip_prob

    @property
    def done(self) -> bool:
        if self.steps_used >= self.budget:
            return True
        return self.stop_at_goal and self.first_goal_step is not None

    @property
    def succeeded(self) -> bool:
        return self.first_goal_step is not None

    def step_action(self, action_id: int) -> State:
        """Execute one primitive action; returns the new state view."""
        if self.done:
            raise RuntimeError("episode is over")
        idx = self._tables.index_of_id[action_id]
        self.rng.state = backend.step_state(
            self.state, idx, *self._tables.step_args(),
            self._flip, self.rng.state, self.rng.inc,
        )
        self.steps_used += 1
        if self.first_goal_step is None and self.state[self.env.goal_dim] == 1:
            self.first_goal_step = self.steps_used
        return self.state


class GenerativeModel:
    """Simulator handle for planners that search over futures.

    Exposes sampled noisy transitions and random rollouts (the same
    dynamics the world uses) plus a noiseless effect model; planners get
    transition outcomes, never the hidden conditions themselves.
    """

    def __init__(self, env: Environment):
        self.env = env
        self._tables = env.tables

    @property
    def n_actions(self) -> int:
        return self._tables.n_actions

    def sample_step(self, state: State, action_index: int, rng: Pcg32) -> State:
        out = state.copy()
        rng.state = backend.step_state(
            out, action_index, *self._tables.step_args(),
            self.env.noise.flip_prob, rng.state, rng.inc,
        )
        return out

    def rollout(self, state: State, max_steps: int, rng: Pcg32) -> int:
        """Random-policy steps to goal from ``state``; -1 when not reached."""
        scratch = state.copy()
        steps, rng.state = backend.rollout(
            scratch, self._tables.n_actions, *self._tables.step_args(),
            self.env.noise.flip_prob, self.env.goal_dim, max_steps,
            rng.state, rng.inc,
        )
        return steps

    def model_step(self, state: State, action_index: int) -> State:
        """Noiseless planning model: gated effect only."""
        action = self.env.actions[action_index]
        if evaluate_condition(state, action.condition):
            return apply_effect(state, action.effect)
        return state.copy()


# ---------------------------------------------------------------------------
# Dependency graphs and generators


class EnvGenerationError(ValueError):
    """Requested environment statistics are unsatisfiable."""


@dataclass(frozen=True)
class DependencyGraph:
    """Feature nodes plus (source feature, action id) requirement edges."""

    nodes: int
    edges: tuple[tuple[int, int], ...]

    def parents_of_action(self, action_id: int) -> list[int]:
        return [src for src, aid in self.edges if aid == action_id]

    def topological_order(self) -> list[int]:
        """Order over features; raises ValueError when the graph cycles."""
        children: dict[int, list[int]] = {i: [] for i in range(self.nodes)}
        indeg = [0] * self.nodes
        for src, aid in self.edges:
            children[src].append(aid)
            indeg[aid] += 1
        ready = [i for i in range(self.nodes) if indeg[i] == 0]
        order: list[int] = []
        while ready:
            node = ready.pop()
            order.append(node)
            for child in children[node]:
                indeg[child] -= 1
                if indeg[child] == 0:
                    ready.append(child)
        if len(order) != self.nodes:
            raise ValueError("dependency graph contains a cycle")
        return order


def dependency_graph(env: Environment) -> DependencyGraph:
    """Requirement edges of an environment with one action per feature."""
    edges = []
    for act in env.actions:
        for unit in act.condition.units:
            if unit.predicate is Predicate.MUST_BE_ONE:
                edges.append((unit.dim, act.id))
    return DependencyGraph(nodes=env.dim, edges=tuple(edges))


def generate_chain_env(n: int, seed: int = 0, *, flip_prob: float = 0.0,
                       episode_length: int | None = None) -> Environment:
    """Linear dependency chain: action i sets bit i and needs bit i-1.

    The unique noiseless plan from all-zeros is 0,1,...,n-1, so the
    shortest plan length is exactly n.
    """
    if n < 2:
        raise ValueError("chain needs at least 2 features")
    del seed  # construction is deterministic; kept for a uniform signature
    actions = []
    for i in range(n):
        cond = Condition() if i == 0 else Condition(
            (UnitCondition(i - 1, Predicate.MUST_BE_ONE),))
        actions.append(PrimitiveAction(
            id=i,
            effect=Effect((UnitEffect(i, Transform.SET_ONE),)),
            condition=cond,
        ))
    return Environment(
        dim=n,
        actions=tuple(actions),
        noise=NoiseModel(flip_prob),
        episode_length=episode_length if episode_length is not None else 4 * n,
        goal_dim=n - 1,
        initial_state=np.zeros(n, dtype=np.uint8),
    )


def _poisson(lam: float, rng: Pcg32) -> int:
    threshold = math.exp(-lam)
    k = 0
    p = 1.0
    while True:
        p *= rng.random()
        if p <= threshold:
            return k
        k += 1


def _normal(rng: Pcg32) -> float:
    u1 = (rng.next_u32() + 1.0) * 2.0**-32  # (0, 1]
    u2 = rng.random()
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def generate_random_env(
    n: int,
    avg_edges: float,
    consuming: bool,
    seed: int,
    *,
    std_edges: float | None = None,
    flip_prob: float = 0.05,
    episode_length: int | None = None,
    consume_prob: float = 0.5,
) -> Environment:
    """Random DAG world with one bit-setting action per feature.

    Features are ordered 0..n-1; action i sets bit i and requires a
    random subset of earlier bits to be 1.  In-degrees are drawn to
    match the requested mean and spread (a clamped discretized normal;
    ``std_edges`` defaults to sqrt(avg_edges)), capped by position,
    then nudged until the realized mean lands within 0.45 of
    ``avg_edges``.  With ``consuming``, roughly half the gated actions
    also clear one of their required parents.  The goal is a feature of
    maximal dependency depth.
    """
    if n < 2:
        raise ValueError("need at least 2 features")
    if avg_edges < 0:
        raise ValueError("avg_edges must be non-negative")
    max_mean = sum(min(i, n - 1) for i in range(n)) / n
    if avg_edges - 0.45 > max_mean:
        raise EnvGenerationError(
            f"avg_edges={avg_edges} unreachable with {n} features "
            f"(max attainable mean {max_mean:.2f})"
        )
    if std_edges is None:
        std_edges = math.sqrt(avg_edges)

    rng = Pcg32(seed, stream=n)
    indeg = [
        min(i, max(0, round(avg_edges + std_edges * _normal(rng))))
        for i in range(n)
    ]

    def mean() -> float:
        return sum(indeg) / n

    while mean() < avg_edges - 0.45:
        candidates = [i for i in range(n) if indeg[i] < i]
        indeg[rng.choice(candidates)] += 1
    while mean() > avg_edges + 0.45:
        candidates = [i for i in range(n) if indeg[i] > 0]
        indeg[rng.choice(candidates)] -= 1

    # Parents come from nodes that keep dependency depth within a
    # crafting-style bound; unbounded uniform DAGs grow chains far
    # deeper than the worlds these graphs model, and deeper than any
    # bounded plan nesting can traverse.
    max_depth_cap = 7
    parents: list[list[int]] = []
    node_depth: list[int] = []
    for i in range(n):
        pool = [p for p in range(i) if node_depth[p] < max_depth_cap]
        if len(pool) < indeg[i]:
            pool = list(range(i))
        rng.shuffle(pool)
        chosen = sorted(pool[: indeg[i]])
        parents.append(chosen)
        node_depth.append(
            1 + max((node_depth[p] for p in chosen), default=-1))

    actions = []
    for i in range(n):
        effect_units = [UnitEffect(i, Transform.SET_ONE)]
        if consuming and parents[i] and rng.random() < consume_prob:
            victim = rng.choice(parents[i])
            effect_units.append(UnitEffect(victim, Transform.SET_ZERO))
        cond_units = tuple(
            UnitCondition(p, Predicate.MUST_BE_ONE) for p in parents[i])
        actions.append(PrimitiveAction(
            id=i, effect=Effect(tuple(effect_units)),
            condition=Condition(cond_units),
        ))

    depth = [0] * n
    for i in range(n):
        if parents[i]:
            depth[i] = 1 + max(depth[p] for p in parents[i])
    deepest = max(depth)
    goal = rng.choice([i for i in range(n) if depth[i] == deepest])

    return Environment(
        dim=n,
        actions=tuple(actions),
        noise=NoiseModel(flip_prob),
        episode_length=episode_length if episode_length is not None else 4 * n,
        goal_dim=goal,
        initial_state=np.zeros(n, dtype=np.uint8),
    )


# ---------------------------------------------------------------------------
# On-disk environment format


class EnvFormatError(ValueError):
    """Malformed environment file; message names the offending line."""


def _format_units(units: Sequence) -> str:
    out = []
    for unit in units:
        value = unit.transform if isinstance(unit, UnitEffect) else unit.predicate
        out.append(f"{unit.dim}={int(value)}")
    return " ".join(out)


def save_env(env: Environment, path) -> None:
    lines = ["# skillbandit environment format 1"]
    lines.append(f"DIM {env.dim}")
    lines.append(f"NOISE {env.noise.flip_prob!r}")
    lines.append(f"EPISODE_LEN {env.episode_length}")
    lines.append(f"GOAL {env.goal_dim}")
    lines.append("INIT " + "".join(str(int(b)) for b in env.initial_state))
    for act in env.actions:
        lines.append(f"ACTION {act.id}")
        lines.append(("EFFECT " + _format_units(act.effect.units)).rstrip())
        lines.append(("CONDITION " + _format_units(act.condition.units)).rstrip())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_units(body: str, line_no: int, kind: str):
    units = []
    for token in body.split():
        try:
            dim_s, val_s = token.split("=")
            dim, val = int(dim_s), int(val_s)
            if val not in (0, 1):
                raise ValueError
        except ValueError:
            raise EnvFormatError(
                f"line {line_no}: bad {kind} token {token!r} "
                f"(expected dim=0 or dim=1)"
            ) from None
        units.append((dim, val))
    return units


def load_env(path) -> Environment:
    with open(path) as fh:
        raw_lines = fh.read().splitlines()

    header: dict[str, tuple[str, int]] = {}
    actions: list[PrimitiveAction] = []
    pending_id: int | None = None
    pending_effect: Effect | None = None
    pending_line = 0

    def close_action(line_no: int) -> None:
        nonlocal pending_id, pending_effect
        if pending_id is not None:
            raise EnvFormatError(
                f"line {line_no}: ACTION {pending_id} (line {pending_line}) "
                f"is missing its "
                + ("EFFECT" if pending_effect is None else "CONDITION")
            )

    for line_no, raw in enumerate(raw_lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, body = line.partition(" ")
        body = body.strip()
        if keyword in ("DIM", "NOISE", "EPISODE_LEN", "GOAL", "INIT"):
            close_action(line_no)
            if keyword in header:
                raise EnvFormatError(f"line {line_no}: duplicate {keyword}")
            header[keyword] = (body, line_no)
        elif keyword == "ACTION":
            close_action(line_no)
            try:
                pending_id = int(body)
            except ValueError:
                raise EnvFormatError(
                    f"line {line_no}: ACTION id must be an integer, "
                    f"got {body!r}") from None
            pending_effect = None
            pending_line = line_no
        elif keyword == "EFFECT":
            if pending_id is None or pending_effect is not None:
                raise EnvFormatError(f"line {line_no}: EFFECT outside ACTION")
            units = _parse_units(body, line_no, "effect")
            pending_effect = Effect(tuple(
                UnitEffect(d, Transform(v)) for d, v in units))
        elif keyword == "CONDITION":
            if pending_id is None or pending_effect is None:
                raise EnvFormatError(
                    f"line {line_no}: CONDITION must follow an EFFECT")
            units = _parse_units(body, line_no, "condition")
            try:
                actions.append(PrimitiveAction(
                    id=pending_id,
                    effect=pending_effect,
                    condition=Condition(tuple(
                        UnitCondition(d, Predicate(v)) for d, v in units)),
                ))
            except ValueError as exc:
                raise EnvFormatError(f"line {line_no}: {exc}") from None
            pending_id = None
            pending_effect = None
        else:
            raise EnvFormatError(f"line {line_no}: unknown keyword {keyword!r}")

    close_action(len(raw_lines) + 1)

    def require(key: str) -> tuple[str, int]:
        if key not in header:
            raise EnvFormatError(f"missing required {key} line")
        return header[key]

    def parse_header(key: str, conv):
        body, line_no = require(key)
        try:
            return conv(body)
        except ValueError:
            raise EnvFormatError(
                f"line {line_no}: bad {key} value {body!r}") from None

    dim = parse_header("DIM", int)
    noise = parse_header("NOISE", float)
    episode_len = parse_header("EPISODE_LEN", int)
    goal = parse_header("GOAL", int)
    if "INIT" in header:
        body, line_no = header["INIT"]
        if len(body) != dim or set(body) - {"0", "1"}:
            raise EnvFormatError(
                f"line {line_no}: INIT must be {dim} characters of 0/1")
        initial = make_state(int(c) for c in body)
    else:
        initial = np.zeros(dim, dtype=np.uint8)

    try:
        return Environment(
            dim=dim,
            actions=tuple(actions),
            noise=NoiseModel(noise),
            episode_length=episode_len,
            goal_dim=goal,
            initial_state=initial,
        )
    except ValueError as exc:
        raise EnvFormatError(str(exc)) from None
