"""State-conditional UCB selection over a skill's arm set.

Each arm is scored as

    predicted_success * successes / (length * tries)
      + gamma * sqrt(log(total tries) / tries)

so shorter sequences with the same record score higher, and rarely
tried arms keep a growing exploration bonus.  Arms that were never
tried score +inf, which forces one trial each before any comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .rng import Pcg32


@dataclass(frozen=True)
class ArmScore:
    exploit: float
    explore: float
    total: float


def ucb_score(arm, state, total_tries: int, gamma: float) -> ArmScore:
    """Score one arm at a state given the sibling-wide trial count."""
    if arm.n_tries == 0:
        return ArmScore(exploit=math.inf, explore=0.0, total=math.inf)
    p_hat = arm.success_probability(state)
    exploit = p_hat * arm.n_success / (arm.length * arm.n_tries)
    explore = gamma * math.sqrt(math.log(max(total_tries, 1)) / arm.n_tries)
    return ArmScore(exploit=exploit, explore=explore, total=exploit + explore)


def select_arm(skill, state, cfg, rng: Pcg32, allow_mutation: bool = True):
    """Pick the best-scoring arm, optionally proposing a pruned mutant.

    With probability epsilon a uniformly chosen multi-step arm is pruned
    and offered through admission first; a freshly accepted mutant is
    untried, so it wins the argmax and gets executed this round.  Ties
    break uniformly at random.
    """
    from . import skills as _skills  # local import; skills builds on bandit

    if not skill.arms:
        raise ValueError(f"skill {skill.intended_effect} has no arms")

    if allow_mutation and cfg.epsilon > 0 and rng.random() < cfg.epsilon:
        # refine arms with some standing; pruning an arm that was never
        # deliberately re-used would only multiply junk variants
        multi = [a for a in skill.arms if a.length >= 2 and a.n_tries >= 4]
        if multi:
            mutant = _skills.mutate_arm(rng.choice(multi), rng)
            probe = [s for s, _ in mutant.samples]
            _skills.admit_arm(skill, mutant, probe, cfg)

    total_tries = sum(a.n_tries for a in skill.arms)
    best: list = []
    best_total = -math.inf
    for arm in skill.arms:
        score = ucb_score(arm, state, total_tries, cfg.gamma)
        if score.total > best_total:
            best_total = score.total
            best = [arm]
        elif score.total == best_total:
            best.append(arm)
    return rng.choice(best)
