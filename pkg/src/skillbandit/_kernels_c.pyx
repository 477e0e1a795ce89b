# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend for the hot kernels.

Mirrors ``_kernels_py`` operation for operation: identical PCG32 stream
consumption, identical tie-breaking scans and identical floating-point
expression shapes, so results are interchangeable with the pure backend
(bit-identical for the integer-state loops, within rounding of the
platform exp() for the kernel matrices).
"""
import numpy as np

from cython.operator cimport dereference as deref
from libc.math cimport exp
from libc.stdint cimport int32_t, uint8_t, uint32_t, uint64_t
from libcpp.unordered_map cimport unordered_map
from libcpp.vector cimport vector

BACKEND_NAME = "compiled"

cdef double _INV_2_32 = 2.0 ** -32
cdef uint64_t _PCG_MULT = 6364136223846793005u


cdef inline uint32_t _next(uint64_t* state, uint64_t inc) noexcept nogil:
    cdef uint64_t old = state[0]
    state[0] = old * _PCG_MULT + inc
    cdef uint32_t xorshifted = <uint32_t>(((old >> 18) ^ old) >> 27)
    cdef uint32_t rot = <uint32_t>(old >> 59)
    return (xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))


def pcg_next(rng_state, rng_inc):
    """One PCG-XSH-RR draw; returns (u32, new_state)."""
    cdef uint64_t s = rng_state
    cdef uint32_t out = _next(&s, <uint64_t>rng_inc)
    return out, s


cdef inline uint64_t _step(
    uint8_t[::1] state,
    int action,
    int32_t[::1] eff_off, int32_t[::1] eff_dim, uint8_t[::1] eff_val,
    int32_t[::1] cond_off, int32_t[::1] cond_dim, uint8_t[::1] cond_val,
    double flip_prob,
    uint64_t rng_state, uint64_t rng_inc,
) noexcept:
    cdef int k
    cdef bint ok = True
    cdef uint32_t u32
    cdef uint64_t d
    for k in range(cond_off[action], cond_off[action + 1]):
        if state[cond_dim[k]] != cond_val[k]:
            ok = False
            break
    if ok:
        for k in range(eff_off[action], eff_off[action + 1]):
            state[eff_dim[k]] = eff_val[k]
    u32 = _next(&rng_state, rng_inc)
    if u32 * _INV_2_32 < flip_prob:
        u32 = _next(&rng_state, rng_inc)
        d = (<uint64_t>u32 * <uint64_t>state.shape[0]) >> 32
        state[d] ^= 1
    return rng_state


def step_state(
    uint8_t[::1] state,
    int action,
    int32_t[::1] eff_off, int32_t[::1] eff_dim, uint8_t[::1] eff_val,
    int32_t[::1] cond_off, int32_t[::1] cond_dim, uint8_t[::1] cond_val,
    double flip_prob,
    rng_state, rng_inc,
):
    """Apply one primitive action in place, then noise; returns rng state."""
    return _step(state, action, eff_off, eff_dim, eff_val,
                 cond_off, cond_dim, cond_val, flip_prob,
                 <uint64_t>rng_state, <uint64_t>rng_inc)


def rollout(
    uint8_t[::1] state,
    int n_actions,
    int32_t[::1] eff_off, int32_t[::1] eff_dim, uint8_t[::1] eff_val,
    int32_t[::1] cond_off, int32_t[::1] cond_dim, uint8_t[::1] cond_val,
    double flip_prob,
    int goal_dim,
    long max_steps,
    rng_state, rng_inc,
):
    """Uniform-random rollout; returns (steps_to_goal or -1, rng state)."""
    cdef uint64_t rs = rng_state
    cdef uint64_t ri = rng_inc
    cdef long t
    cdef int action
    cdef uint32_t u32
    for t in range(1, max_steps + 1):
        u32 = _next(&rs, ri)
        action = <int>((<uint64_t>u32 * <uint64_t>n_actions) >> 32)
        rs = _step(state, action, eff_off, eff_dim, eff_val,
                   cond_off, cond_dim, cond_val, flip_prob, rs, ri)
        if state[goal_dim] == 1:
            return t, rs
    return -1, rs


cdef inline uint64_t _pack(uint8_t[::1] state) noexcept nogil:
    cdef uint64_t key = 0
    cdef Py_ssize_t i
    for i in range(state.shape[0] - 1, -1, -1):
        key = (key << 1) | state[i]
    return key


def q_train(
    int n_actions,
    int32_t[::1] eff_off, int32_t[::1] eff_dim, uint8_t[::1] eff_val,
    int32_t[::1] cond_off, int32_t[::1] cond_dim, uint8_t[::1] cond_val,
    double flip_prob,
    int goal_dim,
    uint8_t[::1] init_state,
    long episode_len,
    long episodes,
    double lr,
    double discount,
    double eps_greedy,
    long max_rows,
    rng_state, rng_inc,
):
    """Tabular Q-learning loop; see the pure backend for the contract.

    States are bit-packed into uint64 keys, so this path requires the
    state dimension to be at most 64 (the dispatcher falls back to the
    pure backend above that).
    """
    if init_state.shape[0] > 64:
        raise ValueError("compiled q_train supports at most 64 dimensions")

    cdef uint64_t rs = rng_state
    cdef uint64_t ri = rng_inc
    cdef unordered_map[uint64_t, long] index
    cdef vector[uint64_t] keys
    cdef vector[double] qflat
    cdef int oom = 0

    cdef uint8_t[::1] state = np.array(init_state, dtype=np.uint8)
    cdef long ep, step_i, row_i, next_i
    cdef int action, a, ties, pick, seen
    cdef uint32_t u32
    cdef uint64_t key
    cdef double best, v, target, best_next, q_old
    cdef bint reached

    for ep in range(episodes):
        if oom:
            break
        state[:] = init_state
        if state[goal_dim] == 1:
            continue
        for step_i in range(episode_len):
            key = _pack(state)
            row_i = _lookup(&index, &keys, &qflat, key, n_actions, max_rows)
            if row_i < 0:
                oom = 1
                break
            u32 = _next(&rs, ri)
            if u32 * _INV_2_32 < eps_greedy:
                u32 = _next(&rs, ri)
                action = <int>((<uint64_t>u32 * <uint64_t>n_actions) >> 32)
            else:
                best = qflat[row_i * n_actions]
                ties = 1
                for a in range(1, n_actions):
                    v = qflat[row_i * n_actions + a]
                    if v > best:
                        best = v
                        ties = 1
                    elif v == best:
                        ties += 1
                if ties > 1:
                    u32 = _next(&rs, ri)
                    pick = <int>((<uint64_t>u32 * <uint64_t>ties) >> 32)
                    action = 0
                    seen = -1
                    for a in range(n_actions):
                        if qflat[row_i * n_actions + a] == best:
                            seen += 1
                            if seen == pick:
                                action = a
                                break
                else:
                    action = 0
                    for a in range(n_actions):
                        if qflat[row_i * n_actions + a] == best:
                            action = a
                            break
            rs = _step(state, action, eff_off, eff_dim, eff_val,
                       cond_off, cond_dim, cond_val, flip_prob, rs, ri)
            reached = state[goal_dim] == 1
            if reached:
                target = 0.0
            else:
                next_i = _lookup(&index, &keys, &qflat, _pack(state),
                                 n_actions, max_rows)
                if next_i < 0:
                    oom = 1
                    break
                best_next = qflat[next_i * n_actions]
                for a in range(1, n_actions):
                    if qflat[next_i * n_actions + a] > best_next:
                        best_next = qflat[next_i * n_actions + a]
                target = -1.0 + discount * best_next
            q_old = qflat[row_i * n_actions + action]
            qflat[row_i * n_actions + action] = q_old + lr * (target - q_old)
            if reached:
                break

    cdef long n_rows = <long>keys.size()
    keys_arr = np.empty(n_rows, dtype=np.uint64)
    q_arr = np.empty((n_rows, n_actions), dtype=np.float64)
    cdef uint64_t[::1] keys_view = keys_arr
    cdef double[:, ::1] q_view = q_arr
    cdef long r
    for r in range(n_rows):
        keys_view[r] = keys[r]
        for a in range(n_actions):
            q_view[r, a] = qflat[r * n_actions + a]
    return [int(k) for k in keys_arr], q_arr, n_rows, oom, rs


cdef long _lookup(
    unordered_map[uint64_t, long]* index,
    vector[uint64_t]* keys,
    vector[double]* qflat,
    uint64_t key,
    int n_actions,
    long max_rows,
) noexcept:
    cdef unordered_map[uint64_t, long].iterator it = index[0].find(key)
    cdef long row
    if it != index[0].end():
        return deref(it).second
    row = <long>keys.size()
    if row >= max_rows:
        return -1
    index[0][key] = row
    keys.push_back(key)
    qflat.resize((row + 1) * n_actions, 0.0)
    return row


def rbf_gram(double[:, ::1] x, double bandwidth):
    """Gram matrix exp(-|xi - xj|^2 / (2 bw^2))."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] k = out
    cdef Py_ssize_t i, j, t
    cdef double s, diff, denom
    denom = 2.0 * bandwidth * bandwidth
    for i in range(n):
        k[i, i] = 1.0
        for j in range(i + 1, n):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - x[j, t]
                s += diff * diff
            s = exp(-s / denom)
            k[i, j] = s
            k[j, i] = s
    return out


def rbf_vec(double[:, ::1] x, double[::1] query, double bandwidth):
    """Kernel values between each row of ``x`` and one query vector."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = x.shape[1]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] k = out
    cdef Py_ssize_t i, t
    cdef double s, diff, denom
    denom = 2.0 * bandwidth * bandwidth
    for i in range(n):
        s = 0.0
        for t in range(d):
            diff = x[i, t] - query[t]
            s += diff * diff
        k[i] = exp(-s / denom)
    return out


def smo_solve(double[:, ::1] kernel, double[::1] y, double reg_c,
              double tol, long max_iter):
    """Most-violating-pair dual coordinate ascent; see the pure backend."""
    cdef Py_ssize_t n = y.shape[0]
    alpha_arr = np.zeros(n, dtype=np.float64)
    grad_arr = np.full(n, -1.0, dtype=np.float64)
    cdef double[::1] alpha = alpha_arr
    cdef double[::1] grad = grad_arr
    cdef long iterations = 0
    cdef bint converged = False
    cdef double gmax = 0.0, gmin = 0.0
    cdef Py_ssize_t i, j, t
    cdef bint any_up, any_low
    cdef double score, eta, aj_new, ai_new, lo_bound, hi_bound
    cdef double d_i, d_j, ci, cj
    cdef long it

    for it in range(1, max_iter + 1):
        iterations = it
        any_up = False
        any_low = False
        i = 0
        j = 0
        for t in range(n):
            score = -(y[t] * grad[t])
            if ((y[t] > 0 and alpha[t] < reg_c)
                    or (y[t] < 0 and alpha[t] > 0)):
                if not any_up or score > gmax:
                    gmax = score
                    i = t
                    any_up = True
            if ((y[t] > 0 and alpha[t] > 0)
                    or (y[t] < 0 and alpha[t] < reg_c)):
                if not any_low or score < gmin:
                    gmin = score
                    j = t
                    any_low = True
        if not any_up or not any_low:
            converged = True
            iterations = it - 1
            break
        if gmax - gmin < tol:
            converged = True
            iterations = it - 1
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
        for t in range(n):
            grad[t] = grad[t] + y[t] * (ci * kernel[i, t] + cj * kernel[j, t])

    cdef double bias_sum = 0.0
    cdef long n_free = 0
    for t in range(n):
        if alpha[t] > 0.0 and alpha[t] < reg_c:
            bias_sum += -(y[t] * grad[t])
            n_free += 1
    cdef double bias
    if n_free > 0:
        bias = bias_sum / n_free
    else:
        bias = 0.5 * (gmax + gmin)
    return alpha_arr, bias, iterations, converged
