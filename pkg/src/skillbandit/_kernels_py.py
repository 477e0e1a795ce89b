"""Pure-Python backend for the hot kernels.

Reference implementation of the loops that dominate runtime: environment
stepping, random rollouts, tabular Q-learning, RBF Gram matrices and the
dual coordinate-ascent SVM solver.  The compiled backend in
``_kernels_c.pyx`` mirrors these functions operation for operation
(same PCG32 stream consumption, same tie-breaking, same floating-point
expression shapes), so either backend can be used interchangeably.

Environments are passed as flattened action tables:

    eff_off  : int32[n_actions + 1]  per-action offsets into eff_dim/eff_val
    eff_dim  : int32[...]            target dimension of each unit effect
    eff_val  : uint8[...]            value written (1 = set, 0 = clear)
    cond_*   : same layout for the hidden unit conditions

States are uint8 vectors of 0/1 and are mutated in place.
"""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "pure"

_MASK64 = (1 << 64) - 1
_PCG_MULT = 6364136223846793005
_INV_2_32 = 2.0**-32


def pcg_next(state: int, inc: int) -> tuple[int, int]:
    """One PCG-XSH-RR draw; returns (u32, new_state)."""
    old = state
    state = (old * _PCG_MULT + inc) & _MASK64
    xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
    rot = old >> 59
    out = ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & 0xFFFFFFFF
    return out, state


def step_state(
    state,
    action,
    eff_off,
    eff_dim,
    eff_val,
    cond_off,
    cond_dim,
    cond_val,
    flip_prob,
    rng_state,
    rng_inc,
):
    """Apply one primitive action to ``state`` in place, then noise.

    The effect fires only when every hidden unit condition holds.  Noise
    consumes one uniform draw always, and a second draw (dimension
    choice) only when a flip happens.  Returns the advanced rng state.
    """
    ok = True
    for k in range(cond_off[action], cond_off[action + 1]):
        if state[cond_dim[k]] != cond_val[k]:
            ok = False
            break
    if ok:
        for k in range(eff_off[action], eff_off[action + 1]):
            state[eff_dim[k]] = eff_val[k]
    u32, rng_state = pcg_next(rng_state, rng_inc)
    if u32 * _INV_2_32 < flip_prob:
        u32, rng_state = pcg_next(rng_state, rng_inc)
        d = (u32 * len(state)) >> 32
        state[d] ^= 1
    return rng_state


def rollout(
    state,
    n_actions,
    eff_off,
    eff_dim,
    eff_val,
    cond_off,
    cond_dim,
    cond_val,
    flip_prob,
    goal_dim,
    max_steps,
    rng_state,
    rng_inc,
):
    """Uniform-random action rollout until the goal bit or step cap.

    Mutates ``state``.  Returns (steps_to_goal or -1, new rng state).
    """
    for t in range(1, max_steps + 1):
        u32, rng_state = pcg_next(rng_state, rng_inc)
        action = (u32 * n_actions) >> 32
        rng_state = step_state(
            state, action, eff_off, eff_dim, eff_val,
            cond_off, cond_dim, cond_val, flip_prob, rng_state, rng_inc,
        )
        if state[goal_dim] == 1:
            return t, rng_state
    return -1, rng_state


def _pack_state(state) -> int:
    """Bit-pack a 0/1 state vector: bit i of the key is state[i]."""
    key = 0
    for i in range(len(state) - 1, -1, -1):
        key = (key << 1) | int(state[i])
    return key


def q_train(
    n_actions,
    eff_off,
    eff_dim,
    eff_val,
    cond_off,
    cond_dim,
    cond_val,
    flip_prob,
    goal_dim,
    init_state,
    episode_len,
    episodes,
    lr,
    discount,
    eps_greedy,
    max_rows,
    rng_state,
    rng_inc,
):
    """One-step tabular Q-learning with an epsilon-greedy behaviour policy.

    Reward is 0 on transitions that reach the goal (terminal) and -1
    otherwise.  The table is sparse: a row of zeros is created the first
    time a state is visited.  Training stops immediately with oom=1 when
    creating a row would exceed ``max_rows``.

    Returns (keys, q_values, n_rows, oom, rng_state) where ``keys`` is a
    list of bit-packed states aligned with the rows of ``q_values``.
    """
    index: dict[int, int] = {}
    keys: list[int] = []
    rows: list[np.ndarray] = []
    oom = 0

    def lookup(key):
        row = index.get(key, -1)
        if row >= 0:
            return row
        if len(rows) >= max_rows:
            return -1
        index[key] = len(rows)
        keys.append(key)
        rows.append(np.zeros(n_actions, dtype=np.float64))
        return len(rows) - 1

    state = init_state.copy()
    for _ in range(episodes):
        if oom:
            break
        state[:] = init_state
        if state[goal_dim] == 1:
            continue
        for _ in range(episode_len):
            key = _pack_state(state)
            row_i = lookup(key)
            if row_i < 0:
                oom = 1
                break
            u32, rng_state = pcg_next(rng_state, rng_inc)
            if u32 * _INV_2_32 < eps_greedy:
                u32, rng_state = pcg_next(rng_state, rng_inc)
                action = (u32 * n_actions) >> 32
            else:
                q_row = rows[row_i]
                best = q_row[0]
                ties = 1
                for a in range(1, n_actions):
                    v = q_row[a]
                    if v > best:
                        best = v
                        ties = 1
                    elif v == best:
                        ties += 1
                if ties > 1:
                    u32, rng_state = pcg_next(rng_state, rng_inc)
                    pick = (u32 * ties) >> 32
                    action = 0
                    seen = -1
                    for a in range(n_actions):
                        if q_row[a] == best:
                            seen += 1
                            if seen == pick:
                                action = a
                                break
                else:
                    action = 0
                    for a in range(n_actions):
                        if q_row[a] == best:
                            action = a
                            break
            rng_state = step_state(
                state, action, eff_off, eff_dim, eff_val,
                cond_off, cond_dim, cond_val, flip_prob, rng_state, rng_inc,
            )
            reached = state[goal_dim] == 1
            if reached:
                target = 0.0
            else:
                next_i = lookup(_pack_state(state))
                if next_i < 0:
                    oom = 1
                    break
                next_row = rows[next_i]
                best_next = next_row[0]
                for a in range(1, n_actions):
                    if next_row[a] > best_next:
                        best_next = next_row[a]
                target = -1.0 + discount * best_next
            q_row = rows[row_i]
            q_row[action] = q_row[action] + lr * (target - q_row[action])
            if reached:
                break

    q_values = np.vstack(rows) if rows else np.zeros((0, n_actions))
    return keys, q_values, len(rows), oom, rng_state


def rbf_gram(x: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gram matrix exp(-|xi - xj|^2 / (2 bw^2)) for 0/1 row vectors.

    Squared distances of binary vectors are small integers, so the dot
    trick below is exact and matches the compiled backend's direct sums.
    """
    norms = (x * x).sum(axis=1)
    d2 = norms[:, None] + norms[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def rbf_vec(x: np.ndarray, query: np.ndarray, bandwidth: float) -> np.ndarray:
    """Kernel values between each row of ``x`` and one query vector."""
    diff = x - query[None, :]
    d2 = (diff * diff).sum(axis=1)
    return np.exp(-d2 / (2.0 * bandwidth * bandwidth))


def smo_solve(kernel, y, reg_c, tol, max_iter):
    """Dual coordinate ascent for the soft-margin kernel classifier.

    Pairwise updates on the most-violating pair (first-order working-set
    selection); stops when the maximal KKT violation drops below ``tol``
    or after ``max_iter`` pair updates.

    Returns (alpha, bias, iterations, converged).
    """
    n = len(y)
    alpha = np.zeros(n)
    grad = np.full(n, -1.0)
    neg_inf = -np.inf
    pos_inf = np.inf
    iterations = 0
    converged = False
    gmax = gmin = 0.0

    for iterations in range(1, max_iter + 1):
        score = -(y * grad)
        up = ((y > 0) & (alpha < reg_c)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < reg_c))
        if not up.any() or not low.any():
            converged = True
            iterations -= 1
            break
        i = int(np.argmax(np.where(up, score, neg_inf)))
        j = int(np.argmin(np.where(low, score, pos_inf)))
        gmax = score[i]
        gmin = score[j]
        if gmax - gmin < tol:
            converged = True
            iterations -= 1
            break

        eta = kernel[i, i] + kernel[j, j] - 2.0 * kernel[i, j]
        if eta < 1e-12:
            eta = 1e-12
        aj_new = alpha[j] - y[j] * (gmax - gmin) / eta
        if y[i] != y[j]:
            lo_bound = max(0.0, alpha[j] - alpha[i])
            hi_bound = min(reg_c, reg_c + alpha[j] - alpha[i])
        else:
            lo_bound = max(0.0, alpha[i] + alpha[j] - reg_c)
            hi_bound = min(reg_c, alpha[i] + alpha[j])
        if aj_new > hi_bound:
            aj_new = hi_bound
        elif aj_new < lo_bound:
            aj_new = lo_bound
        ai_new = alpha[i] + y[i] * y[j] * (alpha[j] - aj_new)
        d_i = ai_new - alpha[i]
        d_j = aj_new - alpha[j]
        alpha[i] = ai_new
        alpha[j] = aj_new
        ci = y[i] * d_i
        cj = y[j] * d_j
        grad += y * (ci * kernel[i, :] + cj * kernel[j, :])

    free = (alpha > 0.0) & (alpha < reg_c)
    if free.any():
        bias = float(np.mean(-(y[free] * grad[free])))
    else:
        bias = 0.5 * (gmax + gmin)
    return alpha, float(bias), iterations, converged
