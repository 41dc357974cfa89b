"""Compiled two-loop simulation.

The whole algorithm (outer steering loop and inner actor-critic steps) runs
inside one kernel per environment type.  Kernels are resumable state
machines: every piece of loop state lives in the arrays passed in, so the
Python driver can refill the uniform buffer or grow the episode record
arrays and simply call again.

Integer loop state ``ic``:

    CLOCK   global step counter for the step-size schedule
    COUNT   number of rewards folded into the running average
    UPOS    read position in the uniform buffer
    LOGPOS  next row of the optional per-step log
    N       index of the current (or next) outer iteration
    TAU     steps taken in the current excursion
    IN_EP   1 while an excursion is open
    TOTAL   total steps taken
    NREC    episode records written

Float loop state ``ep`` of length ``3k + 2``: steering vector, projection,
summed reward vector, scalarization offset and distance at excursion start.
"""
from __future__ import annotations

import numpy as np

from ._jit import kernel
from .game import inverse_cdf, worst_candidate
from .geometry import dykstra_halfspaces
from .learner import softmax

CLOCK, COUNT, UPOS, LOGPOS, N, TAU, IN_EP, TOTAL, NREC = range(9)
N_INT_STATE = 9

# kernel exit codes
DONE = 0
NEED_UNIFORMS = 1
RECORDS_FULL = 2
NONFINITE = 3
PROJECTION_FAILED = 4

# limits = [max_total_steps, max_outer, episode_step_cap]
MAX_TOTAL, MAX_OUTER, EP_CAP = range(3)


@kernel
def step_sizes(sched, t):
    # sched = [alpha0, beta0, gain_ratio, t0, alpha_power, beta_power]
    base = 1.0 + t / sched[3]
    alpha = sched[0] / base ** sched[4]
    beta = sched[1] / base ** sched[5]
    return alpha, beta, sched[2] * beta


@kernel
def project_into(s, normals, offsets, lower, upper, is_box, out):
    """Write the projection of ``s`` into ``out``; False if Dykstra stalled."""
    if is_box:
        for j in range(s.shape[0]):
            out[j] = min(max(s[j], lower[j]), upper[j])
        return True
    x, cycles, _ = dykstra_halfspaces(s, normals, offsets, 10_000, 1e-10)
    for j in range(s.shape[0]):
        out[j] = x[j]
    return cycles <= 10_000


@kernel
def _norm_gap(a, b):
    acc = 0.0
    for j in range(a.shape[0]):
        acc += (a[j] - b[j]) ** 2
    return np.sqrt(acc)


@kernel
def begin_episode(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, eps_proj, centered, ep, ic):
    """Fix steering vector and projection for the next excursion."""
    k = mean.shape[0]
    lam = ep[0:k]
    proj = ep[k:2 * k]
    gsum = ep[2 * k:3 * k]
    for j in range(k):
        gsum[j] = 0.0
    if ic[COUNT] == 0:
        # nothing observed yet: no direction to steer in
        for j in range(k):
            lam[j] = 0.0
            proj[j] = 0.0
        ep[3 * k] = 0.0
        ep[3 * k + 1] = np.nan
    else:
        if not project_into(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, proj):
            return False
        d = _norm_gap(proj, mean)
        off = 0.0
        for j in range(k):
            lam[j] = 0.0 if d <= eps_proj else (proj[j] - mean[j]) / d
            off += proj[j] * lam[j]
        ep[3 * k] = off if centered else 0.0
        ep[3 * k + 1] = d
    ic[TAU] = 0
    ic[IN_EP] = 1
    return True


@kernel
def end_episode(
    mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, ep, ic, capped,
    rec_i, rec_f, rec_eta, rec_lam, rec_proj, rec_rbar,
):
    k = mean.shape[0]
    r = ic[NREC]
    tau = ic[TAU]
    inner = 0.0
    for j in range(k):
        eta = ep[2 * k + j] / tau
        rec_eta[r, j] = eta
        rec_lam[r, j] = ep[j]
        rec_proj[r, j] = ep[k + j]
        rec_rbar[r, j] = mean[j]
        inner += (eta - ep[k + j]) * ep[j]
    if not project_into(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, ep[k:2 * k]):
        return False
    rec_f[r, 0] = _norm_gap(ep[k:2 * k], mean)
    rec_f[r, 1] = ep[3 * k + 1]
    rec_f[r, 2] = inner
    rec_i[r, 0] = ic[N]
    rec_i[r, 1] = tau
    rec_i[r, 2] = ic[TOTAL]
    rec_i[r, 3] = capped
    ic[NREC] += 1
    ic[N] += 1
    ic[IN_EP] = 0
    return True


@kernel
def _outer_gate(ic, limits, rec_i):
    """Exit code if no new excursion may start, else -1."""
    if ic[TOTAL] >= limits[MAX_TOTAL] or ic[N] > limits[MAX_OUTER]:
        return DONE
    if ic[NREC] >= rec_i.shape[0]:
        return RECORDS_FULL
    return -1


@kernel
def tabular_step(
    x, P, R, phi, psi, eta, lam, proj, offset, learn,
    theta, rho, gain, sched, mean, gsum, ic, u_act, u_env,
    scores, mscore,
    log_on, log_x, log_u1, log_u2, log_r, log_delta, log_g,
):
    """One joint move, reward bookkeeping and actor-critic update.

    Returns the next state, or -1 if the TD error is not finite.
    """
    n1 = phi.shape[1]
    n_pol = phi.shape[2]
    n_val = psi.shape[1]
    k = R.shape[3]
    for a in range(n1):
        s = 0.0
        for i in range(n_pol):
            s += theta[i] * phi[x, a, i]
        scores[a] = s
    probs = softmax(scores)
    u1 = inverse_cdf(probs, u_act)
    u2 = worst_candidate(eta[u1], proj, lam)
    x_next = inverse_cdf(P[x, u1, u2], u_env)

    ic[COUNT] += 1
    r = -offset
    for j in range(k):
        rv = R[x, u1, u2, j]
        mean[j] += (rv - mean[j]) / ic[COUNT]
        gsum[j] += rv
        r += rv * lam[j]

    delta = 0.0
    if learn:
        alpha, beta, beta_g = step_sizes(sched, ic[CLOCK])
        v_next = 0.0
        v_now = 0.0
        for i in range(n_val):
            v_next += rho[i] * psi[x_next, i]
            v_now += rho[i] * psi[x, i]
        delta = r - gain[0] + v_next - v_now
        if not np.isfinite(delta):
            return -1
        for i in range(n_val):
            rho[i] += beta * delta * psi[x, i]
        gain[0] += beta_g * delta
        for i in range(n_pol):
            acc = 0.0
            for a in range(n1):
                acc += probs[a] * phi[x, a, i]
            mscore[i] = acc
        for i in range(n_pol):
            theta[i] += alpha * delta * (phi[x, u1, i] - mscore[i])
    ic[CLOCK] += 1

    if log_on:
        p = ic[LOGPOS]
        log_x[p, 0] = x
        log_u1[p] = u1
        log_u2[p] = u2
        for j in range(k):
            log_r[p, j] = R[x, u1, u2, j]
        log_delta[p] = delta
        log_g[p] = gain[0]
        ic[LOGPOS] += 1
    return x_next


@kernel
def tabular_run(
    x, P, R, phi, psi, eta, anchor,
    tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, eps_proj, centered,
    sched, limits, theta, rho, gain, mean, ep, ic, uniforms,
    rec_i, rec_f, rec_eta, rec_lam, rec_proj, rec_rbar, rec_x,
    log_on, log_x, log_u1, log_u2, log_r, log_delta, log_g,
):
    """Advance a tabular run; returns ``(state, exit_code)``."""
    k = mean.shape[0]
    scores = np.empty(phi.shape[1])
    mscore = np.empty(phi.shape[2])
    while True:
        if ic[IN_EP] == 0:
            gate = _outer_gate(ic, limits, rec_i)
            if gate >= 0:
                return x, gate
            if not begin_episode(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box,
                                 eps_proj, centered, ep, ic):
                return x, PROJECTION_FAILED
        if ic[UPOS] + 2 > uniforms.shape[0]:
            return x, NEED_UNIFORMS
        u_act = uniforms[ic[UPOS]]
        u_env = uniforms[ic[UPOS] + 1]
        ic[UPOS] += 2
        learn = ep[0] != 0.0 or np.any(ep[1:k] != 0.0)
        x_next = tabular_step(
            x, P, R, phi, psi, eta, ep[0:k], ep[k:2 * k], ep[3 * k], learn,
            theta, rho, gain, sched, mean, ep[2 * k:3 * k], ic, u_act, u_env,
            scores, mscore,
            log_on, log_x, log_u1, log_u2, log_r, log_delta, log_g,
        )
        if x_next < 0:
            return x, NONFINITE
        x = x_next
        ic[TAU] += 1
        ic[TOTAL] += 1
        hit = x == anchor
        if hit or ic[TAU] >= limits[EP_CAP]:
            rec_x[ic[NREC], 0] = x
            if not end_episode(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, ep, ic,
                               0 if hit else 1, rec_i, rec_f, rec_eta, rec_lam, rec_proj, rec_rbar):
                return x, PROJECTION_FAILED
        elif ic[TOTAL] >= limits[MAX_TOTAL]:
            return x, DONE


@kernel
def climate_step(
    x, x_next, segments, mix, noise, lower, upper,
    lam, proj, offset, learn,
    theta, rho, gain, sched, mean, gsum, ic, u_act, w0, w1,
    scores,
    log_on, log_x, log_u1, log_u2, log_r, log_delta, log_g,
):
    """One climate step writing the new state into ``x_next``; False on a non-finite TD error."""
    n1 = segments.shape[0]
    mid0 = 0.5 * (lower[0] + upper[0])
    mid1 = 0.5 * (lower[1] + upper[1])
    half0 = 0.5 * (upper[0] - lower[0])
    half1 = 0.5 * (upper[1] - lower[1])
    z0 = (x[0] - mid0) / half0
    z1 = (x[1] - mid1) / half1
    for a in range(n1):
        scores[a] = theta[3 * a] + theta[3 * a + 1] * z0 + theta[3 * a + 2] * z1
    probs = softmax(scores)
    u1 = inverse_cdf(probs, u_act)
    u2 = worst_candidate(segments[u1], proj, lam)
    x_next[0] = (1.0 - mix) * x[0] + mix * segments[u1, u2, 0] + noise * (2.0 * w0 - 1.0)
    x_next[1] = (1.0 - mix) * x[1] + mix * segments[u1, u2, 1] + noise * (2.0 * w1 - 1.0)
    for j in range(2):
        x_next[j] = min(max(x_next[j], lower[j]), upper[j])

    ic[COUNT] += 1
    r = -offset
    for j in range(2):
        mean[j] += (x_next[j] - mean[j]) / ic[COUNT]
        gsum[j] += x_next[j]
        r += x_next[j] * lam[j]

    delta = 0.0
    if learn:
        alpha, beta, beta_g = step_sizes(sched, ic[CLOCK])
        zn0 = (x_next[0] - mid0) / half0
        zn1 = (x_next[1] - mid1) / half1
        delta = r - gain[0] + rho[0] * zn0 + rho[1] * zn1 - rho[0] * z0 - rho[1] * z1
        if not np.isfinite(delta):
            return False
        rho[0] += beta * delta * z0
        rho[1] += beta * delta * z1
        gain[0] += beta_g * delta
        # score block for action a is (1[a == u1] - p_a) * (1, z0, z1)
        for a in range(n1):
            c = alpha * delta * ((1.0 if a == u1 else 0.0) - probs[a])
            theta[3 * a] += c
            theta[3 * a + 1] += c * z0
            theta[3 * a + 2] += c * z1
    ic[CLOCK] += 1

    if log_on:
        p = ic[LOGPOS]
        log_x[p, 0] = x[0]
        log_x[p, 1] = x[1]
        log_u1[p] = u1
        log_u2[p] = u2
        log_r[p, 0] = x_next[0]
        log_r[p, 1] = x_next[1]
        log_delta[p] = delta
        log_g[p] = gain[0]
        ic[LOGPOS] += 1
    return True


@kernel
def climate_run(
    x, segments, mix, noise, lower, upper, center, radius,
    tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, eps_proj, centered,
    sched, limits, theta, rho, gain, mean, ep, ic, uniforms,
    rec_i, rec_f, rec_eta, rec_lam, rec_proj, rec_rbar, rec_x,
    log_on, log_x, log_u1, log_u2, log_r, log_delta, log_g,
):
    """Advance a climate run in place on ``x``; returns the exit code."""
    k = mean.shape[0]
    scores = np.empty(segments.shape[0])
    x_next = np.empty(2)
    while True:
        if ic[IN_EP] == 0:
            gate = _outer_gate(ic, limits, rec_i)
            if gate >= 0:
                return gate
            if not begin_episode(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box,
                                 eps_proj, centered, ep, ic):
                return PROJECTION_FAILED
        if ic[UPOS] + 3 > uniforms.shape[0]:
            return NEED_UNIFORMS
        u_act = uniforms[ic[UPOS]]
        w0 = uniforms[ic[UPOS] + 1]
        w1 = uniforms[ic[UPOS] + 2]
        ic[UPOS] += 3
        learn = ep[0] != 0.0 or np.any(ep[1:k] != 0.0)
        ok = climate_step(
            x, x_next, segments, mix, noise, lower, upper,
            ep[0:k], ep[k:2 * k], ep[3 * k], learn,
            theta, rho, gain, sched, mean, ep[2 * k:3 * k], ic, u_act, w0, w1,
            scores,
            log_on, log_x, log_u1, log_u2, log_r, log_delta, log_g,
        )
        if not ok:
            return NONFINITE
        x[0] = x_next[0]
        x[1] = x_next[1]
        ic[TAU] += 1
        ic[TOTAL] += 1
        hit = np.sqrt((x[0] - center[0]) ** 2 + (x[1] - center[1]) ** 2) <= radius
        if hit or ic[TAU] >= limits[EP_CAP]:
            rec_x[ic[NREC], 0] = x[0]
            rec_x[ic[NREC], 1] = x[1]
            if not end_episode(mean, tgt_normals, tgt_offsets, tgt_lower, tgt_upper, tgt_box, ep, ic,
                               0 if hit else 1, rec_i, rec_f, rec_eta, rec_lam, rec_proj, rec_rbar):
                return PROJECTION_FAILED
        elif ic[TOTAL] >= limits[MAX_TOTAL]:
            return DONE
