"""Skills as bandits over harvested action sequences.

A skill is indexed by one intended unit effect and owns a set of arms.
An arm is a stored sequence of primitive actions and/or references to
other skills, remembered from a window of observed behaviour together
with success statistics and an optional state-conditional success
model.  Skills start from the primitive actions that advertise their
effect and grow by harvesting windows of executed trajectories; arms
are deduplicated on their step sequence, optionally pruned by a
marginal-success threshold, and refined by random pruning mutations.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np

from . import success_model as sm
from .bandit import select_arm
from .environment import (
    Effect,
    Environment,
    Episode,
    State,
    Transform,
    UnitEffect,
)
from .rng import Pcg32


@dataclass(frozen=True)
class PrimitiveStep:
    action_id: int

    def key(self):
        return ("act", self.action_id)


@dataclass(frozen=True)
class SkillStep:
    effect: UnitEffect

    def key(self):
        return ("skill", self.effect.dim, int(self.effect.transform))


Step = Union[PrimitiveStep, SkillStep]


class Outcome(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    INCONCLUSIVE = "inconclusive"


class Admission(enum.Enum):
    ACCEPTED = "accepted"
    MERGED = "merged"
    REJECTED = "rejected"


@dataclass(frozen=True)
class LearnerConfig:
    """Knobs of the skill learner; defaults are the benchmark settings."""

    epsilon: float = 0.2
    delta: float = 0.1
    gamma: float = 0.2
    max_window: int = 8
    max_depth: int = 8
    windows_per_episode: int = 32
    reg_c: float = 1.0
    model_min_samples: int = 4
    model_refit_every: int = 4
    model_max_fit: int = 256
    probe_size: int = 64
    # Evidence needed before an arm can be dropped for a hopeless
    # marginal success estimate.  Early failures are expected while the
    # skills an arm invokes are still being learned, so pruning on the
    # first fitted model would delete compositional arms right before
    # they start working.
    prune_min_samples: int = 24
    # Training runs restart from the initial state every this-many
    # environment episode lengths: short enough to keep the start
    # distribution covered, long enough to practise effects whose
    # context takes most of an episode to assemble.
    train_episode_factor: int = 4
    # Exploration weight used by measurement clones.
    eval_gamma: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("delta must lie in [0, 1)")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.max_window < 1 or self.windows_per_episode < 0:
            raise ValueError("bad harvest window settings")
        if self.max_depth < 1:
            raise ValueError("max_depth must be positive")


class Arm:
    """One stored step sequence with its success record."""

    __slots__ = ("steps", "n_success", "n_tries", "samples", "model",
                 "fitted_at", "seeded", "_key")

    def __init__(self, steps: tuple[Step, ...], seeded: bool = False):
        if len(steps) == 0:
            raise ValueError("arm needs at least one step")
        self.steps = tuple(steps)
        self.n_success = 0
        self.n_tries = 0
        self.samples: list[tuple[State, int]] = []
        self.model: Optional[sm.SuccessModel] = None
        self.fitted_at = 0
        self.seeded = seeded
        self._key = tuple(s.key() for s in self.steps)

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def key(self) -> tuple:
        return self._key

    def success_probability(self, state: State) -> float:
        """Model prediction when one is fitted, else the smoothed
        empirical ratio, else the optimistic default for untouched
        arms (which the selection rule force-tries anyway)."""
        if self.model is not None and self.model.calibrated:
            return sm.predict_success(self.model, state)
        if self.n_tries > 0:
            return (self.n_success + 1.0) / (self.n_tries + 2.0)
        return 1.0

    def record(self, state: State, success: bool) -> None:
        self.n_tries += 1
        if success:
            self.n_success += 1
        self.samples.append((state, 1 if success else -1))

    def absorb(self, other: "Arm") -> None:
        """Fold a duplicate candidate's statistics into this arm."""
        self.n_tries += other.n_tries
        self.n_success += other.n_success
        self.samples.extend(other.samples)

    def clone(self) -> "Arm":
        twin = Arm(self.steps, seeded=self.seeded)
        twin.n_success = self.n_success
        twin.n_tries = self.n_tries
        twin.samples = list(self.samples)
        twin.model = self.model  # replaced wholesale on refit, never mutated
        twin.fitted_at = self.fitted_at
        return twin

    def __repr__(self):
        return (f"Arm({'/'.join(str(k) for k in self._key)}, "
                f"{self.n_success}/{self.n_tries})")


class Skill:
    """Bandit over arms for one intended unit effect."""

    __slots__ = ("intended_effect", "arms", "_index")

    def __init__(self, intended_effect: UnitEffect, arms=()):
        self.intended_effect = intended_effect
        self.arms: list[Arm] = []
        self._index: dict[tuple, Arm] = {}
        for arm in arms:
            self.add(arm)

    def add(self, arm: Arm) -> None:
        if arm.key in self._index:
            raise ValueError("semantically identical arm already present")
        self.arms.append(arm)
        self._index[arm.key] = arm

    def find(self, key: tuple) -> Optional[Arm]:
        return self._index.get(key)

    def remove(self, arm: Arm) -> None:
        del self._index[arm.key]
        self.arms.remove(arm)

    def clone(self) -> "Skill":
        return Skill(self.intended_effect, (a.clone() for a in self.arms))


class SkillLibrary:
    """All skills of one agent, keyed by intended unit effect."""

    def __init__(self, dim: int, config: LearnerConfig | None = None):
        self.dim = dim
        self.config = config or LearnerConfig()
        self.skills: dict[UnitEffect, Skill] = {}

    @classmethod
    def from_environment(cls, env: Environment,
                         config: LearnerConfig | None = None) -> "SkillLibrary":
        """One skill per unit effect advertised by any action, seeded
        with length-1 arms for the actions that produce it."""
        lib = cls(env.dim, config)
        for act in env.actions:
            for unit in act.effect.units:
                if unit not in lib.skills:
                    lib.skills[unit] = Skill(unit)
        for act in env.actions:
            for unit in act.effect.units:
                lib.skills[unit].add(
                    Arm((PrimitiveStep(act.id),), seeded=True))
        return lib

    def clone(self) -> "SkillLibrary":
        twin = SkillLibrary(self.dim, self.config)
        twin.skills = {eff: s.clone() for eff, s in self.skills.items()}
        return twin

    def evaluation_clone(self) -> "SkillLibrary":
        """Per-run copy tuned for measurement: no mutation and a small
        exploration bonus (enough to move off an arm that keeps failing
        this episode without drowning the learned ordering).  Arms that
        were never tried and never observed (untested mutants) are left
        out; untried arms holding a harvested observation stay, since
        they replay behaviour that was actually seen to work."""
        twin = self.clone()
        twin.config = replace(twin.config, epsilon=0.0,
                              gamma=self.config.eval_gamma)
        for skill in twin.skills.values():
            keep = [a for a in skill.arms
                    if a.n_tries > 0 or a.samples or a.seeded]
            if keep and len(keep) < len(skill.arms):
                skill.arms = keep
                skill._index = {a.key: a for a in keep}
        return twin

    def total_arms(self) -> int:
        return sum(len(s.arms) for s in self.skills.values())


@dataclass
class TrajectoryEntry:
    state_before: State
    step: Step
    state_after: State
    succeeded: bool
    # For skill steps: the step sequence of the arm the invocation
    # resolved to, so harvesting can inline it where a window would
    # otherwise reference its own skill.
    resolved_steps: tuple[Step, ...] | None = None


@dataclass
class TrajectoryRecord:
    entries: list[TrajectoryEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def validate(self) -> None:
        for prev, cur in zip(self.entries, self.entries[1:]):
            if not np.array_equal(prev.state_after, cur.state_before):
                raise ValueError("trajectory entries do not chain")


# ---------------------------------------------------------------------------
# Observation reasoning


def infer_success(s_before: State, s_after: State, effect: Effect) -> Outcome:
    """Judge one execution from its endpoint states.

    An effect that already held beforehand yields no evidence either
    way; otherwise the effect must fully hold afterwards, with at least
    one unit newly established, to count as a success.
    """
    if len(s_before) != len(s_after):
        raise ValueError("states differ in dimension")
    held_before = all(u.holds_in(s_before) for u in effect.units)
    if held_before:
        return Outcome.INCONCLUSIVE
    holds_after = all(u.holds_in(s_after) for u in effect.units)
    return Outcome.SUCCESS if holds_after else Outcome.FAILURE


def observed_unit_effects(s_start: State, s_end: State) -> set[UnitEffect]:
    """Unit effects realized between two states (0->1 and 1->0 bits)."""
    if len(s_start) != len(s_end):
        raise ValueError("states differ in dimension")
    rising = np.nonzero((s_start == 0) & (s_end == 1))[0]
    falling = np.nonzero((s_start == 1) & (s_end == 0))[0]
    out = {UnitEffect(int(d), Transform.SET_ONE) for d in rising}
    out |= {UnitEffect(int(d), Transform.SET_ZERO) for d in falling}
    return out


# ---------------------------------------------------------------------------
# Harvesting trajectories into candidate arms


def window_candidates(traj: TrajectoryRecord, i: int, j: int,
                      lib: SkillLibrary) -> list[tuple[UnitEffect, Arm]]:
    """Candidate arms for one window [i, j], paired with every unit
    effect the window realized (skipping effects no skill owns).

    A window that invoked the very skill it is being attached to would
    be a direct self-reference; those invocations are inlined with the
    arm they actually resolved to, keeping the candidate admissible
    while describing the same behaviour.
    """
    entries = traj.entries
    effects = observed_unit_effects(entries[i].state_before,
                                    entries[j].state_after)
    out = []
    for eff in sorted(effects):
        if eff not in lib.skills:
            continue
        steps: list[Step] = []
        buildable = True
        for entry in entries[i:j + 1]:
            if isinstance(entry.step, SkillStep) and entry.step.effect == eff:
                if entry.resolved_steps is None:
                    buildable = False
                    break
                steps.extend(entry.resolved_steps)
            else:
                steps.append(entry.step)
        if not buildable:
            continue
        arm = Arm(tuple(steps))
        arm.samples.append((entries[i].state_before, 1))
        out.append((eff, arm))
    return out


def harvest_arms(traj: TrajectoryRecord, lib: SkillLibrary, rng: Pcg32,
                 limit: int | None = None) -> list[tuple[UnitEffect, Arm]]:
    """Sample windows of a trajectory into candidate arms.

    Draws up to ``limit`` (default: the configured per-episode budget)
    distinct contiguous windows no longer than the window cap, uniformly
    without replacement.  Windows that realized no unit effect consume
    budget but produce nothing.  Each candidate starts with one
    success-labelled sample at the window's starting state.
    """
    n = len(traj.entries)
    if n == 0:
        raise ValueError("cannot harvest an empty trajectory")
    if limit is None:
        limit = lib.config.windows_per_episode
    windows = [
        (i, j)
        for i in range(n)
        for j in range(i, min(i + lib.config.max_window, n))
    ]
    rng.shuffle(windows)
    out: list[tuple[UnitEffect, Arm]] = []
    for i, j in windows[:limit]:
        out.extend(window_candidates(traj, i, j, lib))
    return out


def mutate_arm(arm: Arm, rng: Pcg32) -> Arm:
    """Strict non-empty random subsequence of a multi-step arm.

    Each step is dropped with probability 1/length, redrawing until the
    result is strictly shorter and non-empty.  Statistics start empty.
    Length-1 arms are returned unchanged.
    """
    n = arm.length
    if n < 2:
        return arm
    drop_p = 1.0 / n
    for _ in range(64):
        keep = [rng.random() >= drop_p for _ in range(n)]
        kept = sum(keep)
        if 1 <= kept < n:
            return Arm(tuple(s for s, k in zip(arm.steps, keep) if k))
    drop = rng.randint(n)  # redraw cap hit; drop one step deterministically
    return Arm(tuple(s for i, s in enumerate(arm.steps) if i != drop))


def admit_arm(skill: Skill, arm: Arm, probe_states, cfg: LearnerConfig) -> Admission:
    """Gate one candidate arm into a skill.

    Duplicates of an existing step sequence are merged (the existing arm
    absorbs the candidate's statistics), candidates that directly invoke
    their own skill are rejected, and candidates arriving with a
    calibrated model are rejected when their mean predicted success over
    the probe states falls below the admission threshold.
    """
    for step in arm.steps:
        if isinstance(step, SkillStep) and step.effect == skill.intended_effect:
            return Admission.REJECTED
    existing = skill.find(arm.key)
    if existing is not None:
        existing.absorb(arm)
        return Admission.MERGED
    if (arm.model is not None and arm.model.calibrated and len(probe_states)
            and sm.marginal_success(arm.model, probe_states) < cfg.delta):
        return Admission.REJECTED
    skill.add(arm)
    return Admission.ACCEPTED


# ---------------------------------------------------------------------------
# Execution


@dataclass
class SkillExecution:
    trajectory: TrajectoryRecord
    final_state: State
    succeeded: bool
    arm: Optional[Arm] = None


FrameHook = Callable[[TrajectoryRecord], None]


def execute_skill(lib: SkillLibrary, effect: UnitEffect, episode: Episode,
                  rng: Pcg32, depth: int = 0,
                  on_frame: FrameHook | None = None) -> SkillExecution:
    """Draw an arm for a skill and run it against the episode.

    Primitive steps hit the environment; skill references recurse with
    the nested transitions opaque to this frame (one trajectory entry
    per step either way).  The arm's outcome is judged from its overall
    start and end states; a pre-satisfied effect yields no statistics.
    Execution aborts with whatever was achieved when the episode budget
    runs out mid-arm, and a recursion past the depth cap fails without
    touching the environment.
    """
    skill = lib.skills.get(effect)
    if skill is None:
        raise KeyError(f"no skill for effect {effect}")
    start = episode.state.copy()
    if episode.done:
        return SkillExecution(TrajectoryRecord([]), start, False)

    arm = select_arm(skill, start, lib.config, rng)
    entries: list[TrajectoryEntry] = []
    for step in arm.steps:
        if episode.done:
            break
        before = episode.state.copy()
        resolved = None
        if isinstance(step, PrimitiveStep):
            action = episode.env.action_by_id[step.action_id]
            episode.step_action(step.action_id)
            ok = infer_success(before, episode.state, action.effect) is Outcome.SUCCESS
        else:
            if depth + 1 > lib.config.max_depth:
                ok = False
            else:
                sub = execute_skill(lib, step.effect, episode, rng,
                                    depth + 1, on_frame)
                ok = sub.succeeded
                resolved = sub.arm.steps if sub.arm is not None else None
        entries.append(TrajectoryEntry(before, step, episode.state.copy(),
                                       ok, resolved_steps=resolved))

    end = episode.state.copy()
    outcome = infer_success(start, end, Effect((effect,)))
    succeeded = outcome is Outcome.SUCCESS
    if outcome is not Outcome.INCONCLUSIVE:
        arm.record(start, succeeded)
        if (arm.n_success == 0 and arm.n_tries >= 3 and not arm.seeded
                and skill.find(arm.key) is arm
                and any(a.n_success >= 2 for a in skill.arms if a is not arm)):
            # a harvest coincidence that never reproduces while some
            # other arm does work is junk; while nothing works yet,
            # failing arms stay, because their nested skills may simply
            # not have matured
            skill.remove(arm)
        else:
            _maybe_refit(skill, arm, lib.config, rng)
    traj = TrajectoryRecord(entries)
    if on_frame is not None and len(entries) >= 2:
        on_frame(traj)
    return SkillExecution(traj, end, succeeded, arm=arm)


def _maybe_refit(skill: Skill, arm: Arm, cfg: LearnerConfig, rng: Pcg32) -> None:
    """Refit the arm's success model on the configured cadence, then
    drop the arm when its marginal predicted success is hopeless."""
    n = len(arm.samples)
    if n < cfg.model_min_samples:
        return
    if arm.model is not None and n - arm.fitted_at < cfg.model_refit_every:
        return
    window = arm.samples[-cfg.model_max_fit:]
    labels = [lab for _, lab in window]
    if not (any(l > 0 for l in labels) and any(l < 0 for l in labels)):
        return
    states = np.asarray([s for s, _ in window], dtype=np.float64)
    arm.model = sm.fit_success_model(states, labels, reg_c=cfg.reg_c)
    arm.fitted_at = n
    if arm.seeded or len(skill.arms) <= 1 or n < cfg.prune_min_samples:
        return
    # re-entrant executions may have pruned this arm already
    if skill.find(arm.key) is not arm:
        return
    probe = [arm.samples[rng.randint(n)][0] for _ in range(cfg.probe_size)]
    if sm.marginal_success(arm.model, probe) < cfg.delta:
        skill.remove(arm)


# ---------------------------------------------------------------------------
# Training and evaluation drivers


def _resolve_for(entry: TrajectoryEntry, eff: UnitEffect
                 ) -> tuple[Step, ...] | None:
    """Steps contributed by one entry to a candidate for skill ``eff``:
    the step itself, or its realized decomposition when the step would
    directly reference that same skill."""
    if isinstance(entry.step, SkillStep) and entry.step.effect == eff:
        return entry.resolved_steps
    return (entry.step,)


def _window_arm(entries: list[TrajectoryEntry], eff: UnitEffect,
                lib: SkillLibrary) -> tuple[UnitEffect, Arm] | None:
    """Candidate arm replaying the given contributing entries."""
    steps: list[Step] = []
    for entry in entries:
        part = _resolve_for(entry, eff)
        if part is None:
            return None
        steps.extend(part)
    if not steps or len(steps) > lib.config.max_window:
        return None
    arm = Arm(tuple(steps))
    arm.samples.append((entries[0].state_before, 1))
    return eff, arm


def _completion_windows(traj: TrajectoryRecord, last_failure: dict,
                        lib: SkillLibrary) -> list[tuple[UnitEffect, Arm]]:
    """Candidates closing at the newest completion.

    Two flavours, both attached only to effects the final completion
    itself realized, so candidates carry no dead tail:

    - continuation: the nearest earlier successful completion plus the
      final one (failed completions change nothing but noise, so they
      are skipped rather than recorded as steps);
    - failure-to-success: if the same effect failed earlier in this
      episode, every successful completion since then plus the final
      one.  Whatever enabled the retry to work is in that span, which
      is how plans pick up their precondition-establishing steps.
    """
    entries = traj.entries
    final_i = len(entries) - 1
    final = entries[final_i]
    effects = observed_unit_effects(final.state_before, final.state_after)
    out = []
    for eff in sorted(effects):
        if eff not in lib.skills:
            continue
        prev_succ = None
        for j in range(final_i - 1, -1, -1):
            if entries[j].succeeded:
                prev_succ = j
                break
        cand = _window_arm(
            [entries[prev_succ], final] if prev_succ is not None else [final],
            eff, lib)
        if cand:
            out.append(cand)
        anchor = last_failure.get(eff)
        if final.succeeded and anchor is not None and anchor < final_i:
            gap = [e for e in entries[anchor + 1:final_i] if e.succeeded]
            cand = _window_arm(gap + [final], eff, lib)
            if cand:
                out.append(cand)
            cand = _diff_arm(entries, anchor, final_i, eff, lib)
            if cand:
                out.append(cand)
    return out


def _diff_arm(entries: list[TrajectoryEntry], anchor: int, final_i: int,
              eff: UnitEffect, lib: SkillLibrary
              ) -> tuple[UnitEffect, Arm] | None:
    """Plan synthesized from a failure-to-success state diff.

    The bits that changed between the state where the skill failed and
    the state where it later worked are exactly what the retry had that
    the failure lacked.  Referencing those bits' skills (in the order
    the bits last reached their final value) followed by the skill's
    own realized steps yields a candidate that re-establishes the
    enabling context wherever it is missing, even when the enablers
    were set far apart in time.
    """
    fail_state = entries[anchor].state_before
    final = entries[final_i]
    diffs = observed_unit_effects(fail_state, final.state_before)
    picked = []
    for d_eff in diffs:
        if d_eff.dim != eff.dim and d_eff in lib.skills:
            picked.append(d_eff)
    if not picked:
        return None
    last_flip = {}
    for idx in range(anchor, final_i):
        entry = entries[idx]
        for d_eff in observed_unit_effects(entry.state_before,
                                           entry.state_after):
            last_flip[d_eff] = idx
    picked.sort(key=lambda d_eff: (last_flip.get(d_eff, -1), d_eff))
    tail = _resolve_for(final, eff)
    if tail is None:
        return None
    steps = tuple(SkillStep(d_eff) for d_eff in picked) + tail
    if len(steps) > lib.config.max_window:
        return None
    arm = Arm(steps)
    arm.samples.append((fail_state, 1))
    return eff, arm


def _frame_window(frame: TrajectoryRecord, lib: SkillLibrary,
                  rng: Pcg32) -> list[tuple[UnitEffect, Arm]]:
    """One uniform window inside a completed execution frame."""
    n = len(frame.entries)
    i = rng.randint(n)
    width = rng.randint(min(lib.config.max_window, n - i)) + 1
    return window_candidates(frame, i, i + width - 1, lib)


def _skill_confidence(skill: Skill, state: State, min_tries: int = 2) -> float:
    """Best success estimate among arms with real evidence at a state."""
    best = 0.0
    for arm in skill.arms:
        if arm.n_tries >= min_tries:
            p = arm.success_probability(state)
            if p > best:
                best = p
    return best


def _admit_all(candidates, lib: SkillLibrary) -> None:
    """Admit harvested candidates, gating brand-new arms on novelty.

    Duplicates always merge (their statistics are evidence).  A new arm
    is only worth storing where the skill is currently weak: when some
    established arm already predicts success at the candidate's start
    state, the candidate is coincidence, not coverage, and storing it
    would dilute the trial budget.
    """
    for eff, cand in candidates:
        skill = lib.skills[eff]
        if skill.find(cand.key) is None:
            start_state = cand.samples[0][0]
            if _skill_confidence(skill, start_state) >= 0.6:
                continue
        probe = [s for s, _ in cand.samples]
        admit_arm(skill, cand, probe, lib.config)


def _memoized_confidence(lib: SkillLibrary, conf_memo: dict):
    def confidence(effect: UnitEffect, episode: Episode) -> float:
        memo_key = (effect, episode.state.tobytes())
        conf = conf_memo.get(memo_key)
        if conf is None:
            conf = _skill_confidence(lib.skills[effect], episode.state)
            conf_memo[memo_key] = conf
        return conf

    return confidence


def _drive_episode(lib: SkillLibrary, episode: Episode, agent_rng: Pcg32,
                   pick) -> None:
    """One learning episode: execute picked skills, harvest windows."""
    skill_keys = list(lib.skills)
    traj = TrajectoryRecord([])
    harvested = 0
    stalls = 0
    last_failure: dict[UnitEffect, int] = {}
    while not episode.done:
        # executing a skill whose effect already holds can only yield
        # inconclusive evidence, so draw among unsatisfied effects
        pending = [e for e in skill_keys
                   if episode.state[e.dim] != int(e.transform)]
        if not pending:
            break  # saturated: every further outcome is inconclusive
        effect = pick(episode, pending)
        before = episode.state.copy()
        used_before = episode.steps_used
        result = execute_skill(lib, effect, episode, agent_rng)
        if episode.steps_used == used_before:
            # depth-capped reference chains consume no budget; bail out
            # of a pathological episode rather than spin
            stalls += 1
            if stalls > 1000:
                break
            continue
        stalls = 0
        traj.entries.append(TrajectoryEntry(
            before, SkillStep(effect), episode.state.copy(),
            result.succeeded,
            resolved_steps=result.arm.steps if result.arm else None))
        here = len(traj.entries) - 1
        if harvested < lib.config.windows_per_episode:
            candidates = _completion_windows(traj, last_failure, lib)
            if candidates:
                _admit_all(candidates, lib)
                harvested += 1
        if not result.succeeded:
            last_failure[effect] = here
        else:
            last_failure.pop(effect, None)


def run_training(env: Environment, lib: SkillLibrary, steps: int,
                 agent_rng: Pcg32, noise_rng: Pcg32) -> SkillLibrary:
    """Drive skill learning for a budget of primitive steps.

    Two phases, both harvesting windows after every completion that
    achieved something.  Exploration episodes (three quarters of the
    budget) restart from the initial state every few episode lengths
    and split picks between draining never-tried arms, re-establishing
    context the library already masters, and exercising under-practised
    effects.  The remaining budget rehearses goal episodes with the
    same decision rule measurement uses, so the statistics the
    evaluation relies on are gathered under the evaluation policy.
    """
    if steps < 1:
        raise ValueError("training budget must be positive")
    skill_keys = list(lib.skills)
    if not skill_keys:
        return lib

    goal_effect = UnitEffect(env.goal_dim, Transform.SET_ONE)
    rehearse = goal_effect in lib.skills
    explore_budget = (steps * 3) // 4 if rehearse else steps
    spent = 0

    def goal_ready() -> bool:
        # rehearsing before any goal arm has ever worked just replays
        # the cold-start failure; keep exploring instead
        return rehearse and any(
            a.n_success > 0 for a in lib.skills[goal_effect].arms)

    while spent < explore_budget or (spent < steps and not goal_ready()):
        conf_memo: dict = {}
        confidence = _memoized_confidence(lib, conf_memo)

        def pick_explore(episode: Episode, pending):
            draw = agent_rng.random()
            if draw < 0.25:
                # drain freshly harvested arms so nothing reaches
                # evaluation without at least one recorded trial
                holding = [e for e in pending if any(
                    a.n_tries == 0 and not a.seeded
                    for a in lib.skills[e].arms)]
                if holding:
                    return agent_rng.choice(holding)
            elif draw < 0.75:
                # re-establish context the library already masters, so
                # episodes spend their budget at the learning frontier
                best_conf = 0.5
                best = None
                for cand in pending:
                    conf = confidence(cand, episode)
                    if conf > best_conf:
                        best_conf = conf
                        best = cand
                if best is not None:
                    return best
            weak = [e for e in pending
                    if sum(a.n_success for a in lib.skills[e].arms) < 5]
            return agent_rng.choice(weak or pending)

        budget = min(env.episode_length * lib.config.train_episode_factor,
                     steps - spent)
        episode = Episode(env, noise_rng, budget=budget, stop_at_goal=False)
        _drive_episode(lib, episode, agent_rng, pick_explore)
        spent += max(1, episode.steps_used)

    while spent < steps:
        conf_memo = {}
        confidence = _memoized_confidence(lib, conf_memo)

        def pick_rehearsal(episode: Episode, pending):
            if (goal_effect in pending
                    and confidence(goal_effect, episode) > 0.5):
                return goal_effect
            best_conf = 0.5
            best = None
            for cand in pending:
                if cand == goal_effect:
                    continue
                conf = confidence(cand, episode)
                if conf > best_conf:
                    best_conf = conf
                    best = cand
            return best if best is not None else goal_effect

        budget = min(env.episode_length, steps - spent)
        episode = Episode(env, noise_rng, budget=budget, stop_at_goal=True)
        _drive_episode(lib, episode, agent_rng, pick_rehearsal)
        spent += max(1, episode.steps_used)
    return lib


def run_goal_episode(env: Environment, lib: SkillLibrary, agent_rng: Pcg32,
                     noise_rng: Pcg32, budget: int | None = None,
                     reuse_library: bool = False) -> tuple[bool, int]:
    """One measured episode driving the world toward the goal bit.

    The episode forward-chains with learned skills: while some
    unsatisfied effect can be achieved with confidence it is executed
    (building the goal's context bottom-up exactly as the library
    learned it), and whenever nothing is confidently executable the
    goal skill itself takes an attempt.  Mutation is off and bandit
    counters keep updating, so arms failing in this episode lose
    standing immediately.

    Pass ``reuse_library=True`` to drive an evaluation clone that
    persists across episodes (the planner keeps adapting from run to
    run); by default the library is cloned per episode.
    Returns (reached, primitive steps).
    """
    run_lib = lib if reuse_library else lib.evaluation_clone()
    goal_effect = UnitEffect(env.goal_dim, Transform.SET_ONE)
    if goal_effect not in run_lib.skills:
        return False, 0
    episode = Episode(env, noise_rng, budget=budget, stop_at_goal=True)
    skill_keys = list(run_lib.skills)
    conf_memo: dict = {}
    stalls = 0
    while not episode.done:
        state_key = episode.state.tobytes()

        def confidence(cand_eff):
            memo_key = (cand_eff, state_key)
            conf = conf_memo.get(memo_key)
            if conf is None:
                conf = _skill_confidence(run_lib.skills[cand_eff],
                                         episode.state)
                conf_memo[memo_key] = conf
            return conf

        # go for the goal the moment some goal arm claims this state;
        # otherwise improve context the library knows how to improve
        effect = goal_effect
        if confidence(goal_effect) <= 0.5:
            pending = [e for e in skill_keys
                       if episode.state[e.dim] != int(e.transform)]
            best_conf = 0.5
            for cand_eff in pending:
                if cand_eff == goal_effect:
                    continue
                conf = confidence(cand_eff)
                if conf > best_conf:
                    best_conf = conf
                    effect = cand_eff
        used_before = episode.steps_used
        execute_skill(run_lib, effect, episode, agent_rng)
        if episode.steps_used == used_before:
            stalls += 1
            if stalls > 200:
                break
        else:
            stalls = 0
    if episode.succeeded:
        return True, int(episode.first_goal_step)
    return False, episode.steps_used
