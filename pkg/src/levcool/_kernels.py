"""Compiled scalar kernels for the emulator, tracker, controllers and loop.

States are passed as 5-tuples (z, p, Vz, Vp, C); parameters as a flat float
array laid out by the ``I_*`` indices below. Everything here is shared by the
public wrappers in :mod:`emulate`, :mod:`track`, :mod:`control` and
:mod:`experiment`.
"""
import math

import numpy as np
from numba import njit

I_M, I_W, I_ETA, I_ALPHA, I_GC, I_GAMMA, I_BETA, I_DELTA, I_HBAR = range(9)
I_POSDIFF = 9  # gamma_c^2 / Gamma, written without the 0/0 at gamma_c = 0
I_GAS_SIGN = 10
I_Y5_DAMP = 11
N_PARAMS = 12

# largest h * lambda accepted by one RK4 stage before sub-dividing
LAM_MAX = 2.5
MAX_SUBSTEPS = 100000

OFF, DOUBLE_PHASE, COLD_DAMPING, OPT_QUAD, OPT_LIN, OPT_COMB = range(6)

OK, PARTICLE_LOST, TRACKING_LOST, CONTROL_INFEASIBLE = range(4)


# --------------------------------------------------------------------------
# emulation model


@njit(cache=True)
def emu_drift(y, u, v, P):
    m, w, gc, G = P[I_M], P[I_W], P[I_GC], P[I_GAMMA]
    k = P[I_ALPHA] * (1.0 + P[I_BETA] * u)
    mw2 = m * w * w * (1.0 + P[I_BETA] * u)
    c = 8.0 * k + 4.0 * G
    y1, y2, y3, y4, y5 = y
    d1 = y2 / m - gc * y1
    d2 = -mw2 * y1 - gc * y2 + P[I_DELTA] * v
    d3 = 2.0 * y5 / m - P[I_GAS_SIGN] * 2.0 * gc * y3 - c * y3 * y3
    d4 = -2.0 * mw2 * y5 - 2.0 * gc * y4 + P[I_HBAR] ** 2 * (2.0 * k + G) - c * y5 * y5
    d5 = y4 / m - mw2 * y3 - c * y3 * y5 - P[I_Y5_DAMP] * 2.0 * gc * y5
    return (d1, d2, d3, d4, d5)


@njit(cache=True)
def emu_diffusion(y, u, P):
    """Noise coefficients of (z, p) against (dW, dV, dZ); variances carry none."""
    eta, G, gc = P[I_ETA], P[I_GAMMA], P[I_GC]
    k = P[I_ALPHA] * (1.0 + P[I_BETA] * u)
    y3, y5 = y[2], y[4]
    sw = math.sqrt(8.0 * eta * k)
    sv = math.sqrt(8.0 * (1.0 - eta) * k)
    if G > 0.0:
        sg = math.sqrt(G)
        z_gas = 2.0 * sg * y3 - gc / sg
    else:
        sg = 0.0
        z_gas = 0.0
    return (sw * y3, sv * y3, z_gas, sw * y5, sv * y5, 2.0 * sg * y5)


@njit(cache=True)
def emu_stiffness(y, u, P):
    m, w = P[I_M], P[I_W]
    k = P[I_ALPHA] * (1.0 + P[I_BETA] * u)
    c = 8.0 * k + 4.0 * P[I_GAMMA]
    return max(2.0 * c * abs(y[2]), 2.0 * math.sqrt(2.0 * c * abs(y[4]) / m)) + 2.0 * w + 2.0 * P[I_GC]


@njit(cache=True)
def _axpy(y, a, d):
    return (y[0] + a * d[0], y[1] + a * d[1], y[2] + a * d[2], y[3] + a * d[3], y[4] + a * d[4])


@njit(cache=True)
def emu_srk4_substep(y, u, v, P, h, dW, dV, dZ):
    k1 = emu_drift(y, u, v, P)
    k2 = emu_drift(_axpy(y, 0.5 * h, k1), u, v, P)
    mid = _axpy(y, 0.5 * h, k2)
    k3 = emu_drift(mid, u, v, P)
    k4 = emu_drift(_axpy(y, h, k3), u, v, P)
    g = emu_diffusion(mid, u, P)
    h6 = h / 6.0
    return (
        y[0] + h6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]) + g[0] * dW + g[1] * dV + g[2] * dZ,
        y[1] + h6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]) + g[3] * dW + g[4] * dV + g[5] * dZ,
        y[2] + h6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        y[3] + h6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
        y[4] + h6 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4]),
    )


@njit(cache=True)
def emu_step_srk4(y, u, v, P, dt, dW, dV, dZ, gen):
    """One emulation step; stiff variance transients are sub-divided.

    When the step is stiff the Wiener increments are split along a Brownian
    bridge so the sub-increments still sum to (dW, dV, dZ). ``gen`` supplies
    the bridge normals and is untouched on non-stiff steps.
    """
    lam = emu_stiffness(y, u, P)
    if lam * dt <= LAM_MAX:
        return emu_srk4_substep(y, u, v, P, dt, dW, dV, dZ)
    tau = dt
    rw, rv, rz = dW, dV, dZ
    for _ in range(MAX_SUBSTEPS):
        lam = emu_stiffness(y, u, P)
        h = LAM_MAX / lam
        if not h < tau * (1.0 - 1e-12):
            return emu_srk4_substep(y, u, v, P, tau, rw, rv, rz)
        s = math.sqrt(h * (tau - h) / tau)
        f = h / tau
        w1 = rw * f + s * gen.standard_normal()
        w2 = rv * f + s * gen.standard_normal()
        w3 = rz * f + s * gen.standard_normal()
        rw -= w1
        rv -= w2
        rz -= w3
        tau -= h
        y = emu_srk4_substep(y, u, v, P, h, w1, w2, w3)
        if not math.isfinite(y[2]):
            return y
    return (np.nan, np.nan, np.nan, np.nan, np.nan)


@njit(cache=True)
def emu_step_em(y, u, v, P, dt, dW, dV, dZ):
    d = emu_drift(y, u, v, P)
    g = emu_diffusion(y, u, P)
    return (
        y[0] + d[0] * dt + g[0] * dW + g[1] * dV + g[2] * dZ,
        y[1] + d[1] * dt + g[3] * dW + g[4] * dV + g[5] * dZ,
        y[2] + d[2] * dt,
        y[3] + d[3] * dt,
        y[4] + d[4] * dt,
    )


@njit(cache=True)
def emu_propagate(y, u, v, P, dt, n):
    """Noise-free RK4 propagation over n steps, sub-dividing stiff steps."""
    for _ in range(n):
        tau = dt
        while tau > 0.0:
            h = min(tau, LAM_MAX / emu_stiffness(y, u, P))
            y = emu_srk4_substep(y, u, v, P, h, 0.0, 0.0, 0.0)
            tau -= h
            if not math.isfinite(y[2]):
                return y
    return y


# --------------------------------------------------------------------------
# tracking model


@njit(cache=True)
def track_rhs(x, u, v, J, P, beta, innovate):
    m, w, gc = P[I_M], P[I_W], P[I_GC]
    hb2 = P[I_HBAR] ** 2
    k = P[I_ALPHA] * (1.0 + beta * u)
    mw2 = m * w * w * (1.0 + beta * u)
    g = 8.0 * P[I_ETA] * k
    x1, x2, x3, x4, x5 = x
    r = (x1 - J) if innovate else 0.0
    d1 = x2 / m - gc * x1 - g * r * x3
    d2 = -mw2 * x1 - gc * x2 - g * r * x5 + P[I_DELTA] * v
    d3 = 2.0 * x5 / m - 2.0 * gc * x3 + P[I_POSDIFF] - g * x3 * x3
    d4 = -2.0 * mw2 * x5 - 2.0 * gc * x4 + hb2 * P[I_GAMMA] - g * x5 * x5 + 2.0 * hb2 * k
    d5 = x4 / m - mw2 * x3 - 2.0 * gc * x5 - g * x3 * x5
    return (d1, d2, d3, d4, d5)


@njit(cache=True)
def track_stiffness(x, u, P, beta):
    m, w = P[I_M], P[I_W]
    g = 8.0 * P[I_ETA] * P[I_ALPHA] * (1.0 + beta * u)
    return max(2.0 * g * abs(x[2]), 2.0 * math.sqrt(2.0 * g * abs(x[4]) / m)) + 2.0 * w + 2.0 * P[I_GC]


@njit(cache=True)
def track_rk4(x, u, v, J, P, beta, innovate, h):
    k1 = track_rhs(x, u, v, J, P, beta, innovate)
    k2 = track_rhs(_axpy(x, 0.5 * h, k1), u, v, J, P, beta, innovate)
    k3 = track_rhs(_axpy(x, 0.5 * h, k2), u, v, J, P, beta, innovate)
    k4 = track_rhs(_axpy(x, h, k3), u, v, J, P, beta, innovate)
    h6 = h / 6.0
    return (
        x[0] + h6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        x[1] + h6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        x[2] + h6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        x[3] + h6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
        x[4] + h6 * (k1[4] + 2 * k2[4] + 2 * k3[4] + k4[4]),
    )


@njit(cache=True)
def track_step(x, u, v, J, P, beta, innovate, dt):
    """Advance the tracker ODEs by ``dt`` with RK4, sub-dividing stiff steps."""
    if track_stiffness(x, u, P, beta) * dt <= LAM_MAX:
        return track_rk4(x, u, v, J, P, beta, innovate, dt)
    tau = dt
    for _ in range(MAX_SUBSTEPS):
        h = LAM_MAX / track_stiffness(x, u, P, beta)
        if not h < tau * (1.0 - 1e-12):
            return track_rk4(x, u, v, J, P, beta, innovate, tau)
        x = track_rk4(x, u, v, J, P, beta, innovate, h)
        tau -= h
        if not math.isfinite(x[2]):
            return x
    return (np.nan, np.nan, np.nan, np.nan, np.nan)


@njit(cache=True)
def track_propagate(x, u, v, J, P, beta, innovate, dt, n):
    for _ in range(n):
        x = track_step(x, u, v, J, P, beta, innovate, dt)
    return x


# --------------------------------------------------------------------------
# controllers


@njit(cache=True)
def energy(x, m, w):
    return (x[1] * x[1] + x[3]) / (2.0 * m) + 0.5 * m * w * w * (x[0] * x[0] + x[2])


@njit(cache=True)
def double_phase_u(x1, x2, m, w, e_floor):
    # omega x1 x2 / E written as 2ab / (a^2 + b^2) so that |u| = 1 exactly at a = |b|
    a = m * w * x1
    s = a * a + x2 * x2
    if not s > 2.0 * m * e_floor:
        return 0.0
    u = 2.0 * a * x2 / s
    return min(1.0, max(-1.0, u))


@njit(cache=True)
def cold_damping_v(x2, m, v_scale):
    return min(1.0, max(-1.0, -x2 / (m * v_scale)))


@njit(cache=True)
def seq_value(b, i, n):
    """Entry i of the sign sequence with index b (+1 for a 0 bit, MSB first)."""
    return 1.0 - 2.0 * ((b >> (n - 1 - i)) & 1)


@njit(cache=True)
def seq_switches(b, n, last):
    s = 0
    prev = last
    for i in range(n):
        c = seq_value(b, i, n)
        if c != prev:
            s += 1
        prev = c
    return s


@njit(cache=True)
def lookahead(x, us, vs, P, beta, dtc):
    """Zero-innovation prediction over the plan; returns final mean energy."""
    for i in range(us.shape[0]):
        x = track_step(x, us[i], vs[i], 0.0, P, beta, False, dtc)
    e = energy(x, P[I_M], P[I_W])
    if not math.isfinite(e):
        return np.inf
    return e


@njit(cache=True)
def enumerate_plans(x, P, beta, kind, n, dtc, last_u, last_v, us, vs, costs):
    """Evaluate every sign plan; fill ``us``/``vs`` with the selected one.

    Returns (cost, number of branches evaluated). Ties within 1e-12 relative
    go to the plan with fewest switches from (last_u, last_v), then to the
    lexicographically first (+1 before -1).
    """
    nb = 1 << n
    nu = nb if (kind == OPT_QUAD or kind == OPT_COMB) else 1
    nv = nb if (kind == OPT_LIN or kind == OPT_COMB) else 1
    total = nu * nv
    bu_arr = np.empty(n)
    bv_arr = np.empty(n)
    best = np.inf
    for bu in range(nu):
        for i in range(n):
            bu_arr[i] = seq_value(bu, i, n) if nu > 1 else 0.0
        for bv in range(nv):
            for i in range(n):
                bv_arr[i] = seq_value(bv, i, n) if nv > 1 else 0.0
            c = lookahead(x, bu_arr, bv_arr, P, beta, dtc)
            costs[bu * nv + bv] = c
            if c < best:
                best = c
    if not math.isfinite(best):
        return np.inf, total
    tol = abs(best) * 1e-12
    pick = -1
    pick_sw = 1 << 30
    for idx in range(total):
        if costs[idx] <= best + tol:
            bu = idx // nv
            bv = idx % nv
            sw = 0
            if nu > 1:
                sw += seq_switches(bu, n, last_u)
            if nv > 1:
                sw += seq_switches(bv, n, last_v)
            if sw < pick_sw:
                pick_sw = sw
                pick = idx
    bu = pick // nv
    bv = pick % nv
    for i in range(n):
        us[i] = seq_value(bu, i, n) if nu > 1 else 0.0
        vs[i] = seq_value(bv, i, n) if nv > 1 else 0.0
    return costs[pick], total


# --------------------------------------------------------------------------
# closed loop

N_COLS = 17


@njit(cache=True)
def run_loop(
    y0, x0, P, beta_track, kind, n_prep, n_total, M, N, dt_e, stride,
    gen_w, gen_v, gen_z, gen_b, e_floor, v_scale, oracle, noise_sub,
):
    """Emulate, measure, track and control for ``n_total`` measurement intervals.

    Each Wiener increment is the sum of ``noise_sub`` finer increments, so a
    coarse run can share its Brownian path with a fine one. Returns
    (records, n_records, status, last_interval). Each record row is
    t, y1..y5, x1..x5, u, v, J, E_true, E_est, n_true.
    """
    m, w, eta, alpha, beta, hbar = P[I_M], P[I_W], P[I_ETA], P[I_ALPHA], P[I_BETA], P[I_HBAR]
    dt = M * dt_e
    dtc = dt / N
    sq = math.sqrt(dt_e / noise_sub)
    n_rec = n_total // stride
    rec = np.empty((n_rec, N_COLS))
    us = np.zeros(N)
    vs = np.zeros(N)
    costs = np.empty(1 << (2 * N)) if kind == OPT_COMB else np.empty(1 << N)
    y = (y0[0], y0[1], y0[2], y0[3], y0[4])
    x = (x0[0], x0[1], x0[2], x0[3], x0[4])
    last_u = 1.0
    last_v = 1.0
    r = 0
    status = OK
    for it in range(n_total):
        if it < n_prep:
            us[:] = 0.0
            vs[:] = 0.0
        jsum = 0.0
        for j in range(M):
            ci = (j * N) // M
            u = us[ci]
            v = vs[ci]
            dW = 0.0
            dV = 0.0
            dZ = 0.0
            for _ in range(noise_sub):
                dW += gen_w.standard_normal()
                dV += gen_v.standard_normal()
                dZ += gen_z.standard_normal()
            dW *= sq
            dV *= sq
            dZ *= sq
            k = alpha * (1.0 + beta * u)
            jsum += y[0] * dt_e + dW / math.sqrt(8.0 * eta * k)
            y = emu_step_srk4(y, u, v, P, dt_e, dW, dV, dZ, gen_b)
        J = jsum / dt
        if not (math.isfinite(y[0]) and math.isfinite(y[1]) and math.isfinite(y[2])
                and math.isfinite(y[3]) and math.isfinite(y[4])):
            return rec, r, PARTICLE_LOST, it
        for i in range(N):
            x = track_step(x, us[i], vs[i], J, P, beta_track, True, dtc)
        if not (math.isfinite(x[0]) and math.isfinite(x[1]) and math.isfinite(x[2])
                and math.isfinite(x[3]) and math.isfinite(x[4])):
            return rec, r, TRACKING_LOST, it
        if (it + 1) % stride == 0 and r < n_rec:
            et = energy(y, m, w)
            rec[r, 0] = (it + 1) * dt
            for q in range(5):
                rec[r, 1 + q] = y[q]
                rec[r, 6 + q] = x[q]
            rec[r, 11] = us[0]
            rec[r, 12] = vs[0]
            rec[r, 13] = J
            rec[r, 14] = et
            rec[r, 15] = energy(x, m, w)
            rec[r, 16] = max(et / (hbar * w) - 0.5, 0.0)
            r += 1
        if it + 1 >= n_prep and kind != OFF:
            src = y if oracle else x
            if kind == DOUBLE_PHASE:
                us[:] = double_phase_u(src[0], src[1], m, w, e_floor)
            elif kind == COLD_DAMPING:
                vs[:] = cold_damping_v(src[1], m, v_scale)
            else:
                c, _ = enumerate_plans(x, P, beta, kind, N, dtc, last_u, last_v, us, vs, costs)
                if not math.isfinite(c):
                    return rec, r, CONTROL_INFEASIBLE, it
                last_u = us[N - 1] if (kind == OPT_QUAD or kind == OPT_COMB) else 1.0
                last_v = vs[N - 1] if (kind == OPT_LIN or kind == OPT_COMB) else 1.0
    return rec, r, status, n_total
