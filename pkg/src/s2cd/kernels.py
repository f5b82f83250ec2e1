"""Jitted inner loops for the semi-stochastic coordinate solvers.

One epoch of stochastic coordinate steps runs entirely inside
:func:`epoch_kernel` over flat CSC arrays. The kernel serves both the
finite-sum method (sample a coordinate, then a component conditioned on it)
and its single-component specialization used by plain coordinate descent
(``cd_mode``): the two share every line of update arithmetic, so on a
one-component problem their float sequences coincide exactly.

Uniform draws are consumed positionally from a per-epoch buffer: step t reads
``buf[2t]`` for the coordinate and ``buf[2t + 1]`` for the component (unused
in ``cd_mode``). This keeps the random stream independent of which branches
consume draws.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_EMPTY_F = np.empty(0, dtype=np.float64)
_EMPTY_I = np.empty(0, dtype=np.int64)
_EMPTY_F2 = np.empty((0, 0), dtype=np.float64)


@njit(cache=True, nogil=True)
def phi_prime(loss_code, t, b):
    if loss_code == 0:  # squared
        return t - b
    z = b * t  # logistic; keep the exp argument <= 0
    if z >= 0.0:
        ez = np.exp(-z)
        return -b * ez / (1.0 + ez)
    return -b / (1.0 + np.exp(z))


@njit(cache=True, nogil=True)
def phi_value(loss_code, t, b):
    if loss_code == 0:
        diff = t - b
        return 0.5 * diff * diff
    z = -b * t
    if z > 0.0:
        return z + np.log1p(np.exp(-z))
    return np.log1p(np.exp(z))


@njit(cache=True, nogil=True)
def alias_pick(prob, alias, lo, hi, u):
    """Draw a local position in [0, hi-lo) from the alias slice [lo, hi)."""
    k = hi - lo
    scaled = u * k
    idx = np.int64(scaled)
    if idx >= k:
        idx = k - 1
    frac = scaled - idx
    if frac < prob[lo + idx]:
        return idx
    return alias[lo + idx]


@njit(cache=True, nogil=True)
def recompute_residual(c_ptr, c_rows, c_vals, y, r):
    r[:] = 0.0
    for j in range(c_ptr.shape[0] - 1):
        yj = y[j]
        if yj != 0.0:
            for k in range(c_ptr[j], c_ptr[j + 1]):
                r[c_rows[k]] += c_vals[k] * yj


@njit(cache=True, nogil=True)
def epoch_kernel(
    c_ptr, c_rows, c_vals, labels, loss_code,
    p_prob, p_alias,
    q_ptr, q_rows, q_avals, q_prob, q_alias, q_invnq,
    reg_c, mu, inv_n,
    step_over_p,
    y, r_y, x_snap, r_snap, grad,
    buf,
    refresh_every, steps_since_refresh,
    cd_mode,
    rec_j, rec_i, rec_g, rec_y,
    st_f, st_dist, x_star, phi_sum, y_sq, dist_sq,
):
    """Run ``buf.size // 2`` stochastic coordinate steps in place.

    Mutates ``y`` and ``r_y``. Optional outputs: when ``rec_j`` is nonempty,
    records per-step coordinate, component (-1 in cd_mode), combined direction
    scalar, and the iterate after the step; when ``st_f`` is nonempty, records
    f(y) and ||y - x_star||^2 after each step by incremental tracking
    (``phi_sum``/``y_sq``/``dist_sq`` carry the running sums in and out).

    Returns ``(steps_done, steps_since_refresh, touches, phi_sum, y_sq,
    dist_sq, ok)``; ``ok`` is False when a non-finite direction was hit.
    """
    big_t = buf.shape[0] // 2
    touches = np.int64(0)
    record = rec_j.shape[0] > 0
    stats = st_f.shape[0] > 0
    for t in range(big_t):
        j = alias_pick(p_prob, p_alias, np.int64(0), np.int64(p_prob.shape[0]), buf[2 * t])
        lo = c_ptr[j]
        hi = c_ptr[j + 1]
        if cd_mode:
            # single pseudo-component: f itself; two column scans per step
            acc_y = 0.0
            acc_x = 0.0
            for k in range(lo, hi):
                i_row = c_rows[k]
                a = c_vals[k]
                acc_y += phi_prime(loss_code, r_y[i_row], labels[i_row]) * a
                acc_x += phi_prime(loss_code, r_snap[i_row], labels[i_row]) * a
            part_y = acc_y * inv_n + mu * y[j]
            part_x = acc_x * inv_n + mu * x_snap[j]
            gcorr = part_y - part_x
            i_used = np.int64(-1)
            touches += 2 * (hi - lo)
        else:
            qlo = q_ptr[j]
            qhi = q_ptr[j + 1]
            pos = alias_pick(q_prob, q_alias, qlo, qhi, buf[2 * t + 1])
            entry = qlo + pos
            i_used = q_rows[entry]
            a = q_avals[entry]
            part_y = phi_prime(loss_code, r_y[i_used], labels[i_used]) * a + reg_c[j] * y[j]
            part_x = phi_prime(loss_code, r_snap[i_used], labels[i_used]) * a + reg_c[j] * x_snap[j]
            gcorr = q_invnq[entry] * (part_y - part_x)
        combined = grad[j] + gcorr
        if not np.isfinite(combined):
            return t, steps_since_refresh, touches, phi_sum, y_sq, dist_sq, False
        delta = -step_over_p[j] * combined
        if record:
            rec_j[t] = j
            rec_i[t] = i_used
            rec_g[t] = combined
        if stats:
            y_sq += delta * (2.0 * y[j] + delta)
            dist_sq += delta * (2.0 * (y[j] - x_star[j]) + delta)
        y[j] += delta
        if stats:
            for k in range(lo, hi):
                i_row = c_rows[k]
                old = r_y[i_row]
                phi_sum -= phi_value(loss_code, old, labels[i_row])
                new = old + c_vals[k] * delta
                r_y[i_row] = new
                phi_sum += phi_value(loss_code, new, labels[i_row])
        else:
            for k in range(lo, hi):
                r_y[c_rows[k]] += c_vals[k] * delta
        touches += hi - lo
        steps_since_refresh += 1
        if steps_since_refresh >= refresh_every:
            recompute_residual(c_ptr, c_rows, c_vals, y, r_y)
            steps_since_refresh = np.int64(0)
            if stats:
                phi_sum = 0.0
                for i_row in range(r_y.shape[0]):
                    phi_sum += phi_value(loss_code, r_y[i_row], labels[i_row])
                y_sq = 0.0
                dist_sq = 0.0
                for jj in range(y.shape[0]):
                    y_sq += y[jj] * y[jj]
                    dv = y[jj] - x_star[jj]
                    dist_sq += dv * dv
        if stats:
            st_f[t + 1] = phi_sum * inv_n + 0.5 * mu * y_sq
            st_dist[t + 1] = dist_sq
        if record:
            for jj in range(y.shape[0]):
                rec_y[t, jj] = y[jj]
    return big_t, steps_since_refresh, touches, phi_sum, y_sq, dist_sq, True


def empty_record_buffers():
    return _EMPTY_I, _EMPTY_I, _EMPTY_F, _EMPTY_F2


def empty_stat_buffers():
    return _EMPTY_F, _EMPTY_F
