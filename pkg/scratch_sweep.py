"""Scratch: sweep learner knobs on small envs. Not part of the package."""
import itertools
import sys
import time

import skillbandit as sb
from skillbandit.rng import spawn


def trial(env, cfg, train_seed, eval_seeds, steps=5000):
    lib = sb.SkillLibrary.from_environment(env, cfg)
    t0 = time.time()
    sb.run_training(env, lib, steps, spawn(train_seed, "agent"),
                    spawn(train_seed, "noise"))
    t_train = time.time() - t0
    wins, steps_list = 0, []
    for s in eval_seeds:
        ok, n = sb.run_goal_episode(env, lib, spawn(s, "agent"),
                                    spawn(s, "noise"))
        wins += ok
        if ok:
            steps_list.append(n)
    mean = sum(steps_list) / len(steps_list) if steps_list else float("nan")
    return wins, mean, t_train, lib.total_arms()


def main():
    which = sys.argv[1] if len(sys.argv) > 1 else "chain"
    if which == "chain":
        env = sb.generate_chain_env(6)
    elif which == "mining":
        env = sb.generate_random_env(22, 2.27, False, seed=11,
                                     flip_prob=0.05, episode_length=40)
    elif which == "miningv2":
        env = sb.generate_random_env(22, 3.18, True, seed=11,
                                     flip_prob=0.05, episode_length=80)
    elif which == "baking":
        env = sb.generate_random_env(30, 2.00, False, seed=11,
                                     flip_prob=0.05, episode_length=60)
    eval_seeds = list(range(1000, 1010))
    print(f"env {which}: dim={env.dim} ep_len={env.episode_length} "
          f"goal={env.goal_dim}")
    for gamma, wpe in itertools.product((1.0, 0.5, 0.25), (32, 8, 4)):
        cfg = sb.LearnerConfig(gamma=gamma, windows_per_episode=wpe)
        wins, mean, t, arms = trial(env, cfg, 1, eval_seeds)
        print(f"gamma={gamma:<4} wpe={wpe:<3} -> {wins}/10  "
              f"mean_steps={mean:6.1f}  train={t:5.1f}s  arms={arms}")


if __name__ == "__main__":
    main()
