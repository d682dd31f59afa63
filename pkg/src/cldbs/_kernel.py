"""Fixed-step RK4 integration kernel for the four-nucleus network.

Compiled with numba; operates on the flat state vector described in
_layout. All rate functions clamp their exponent arguments and floor the
time constants so extreme forced membrane excursions (large stimulation
amplitudes) degrade gracefully instead of overflowing.

Sign convention per membrane equation: ionic and synaptic currents are
subtracted, bias/stimulus currents added, everything divided by cm.
The stimulation current enters the STN equations only. SMC pulse phase is
tied to absolute simulation time; stimulation pulse phase restarts at the
start of each window (local time zero).
"""

import math

import numpy as np
from numba import njit

from ._layout import *  # noqa: F401,F403 - state offsets and P_* indices
from .stim import pulse_current

_TAU_FLOOR = 0.05  # ms


@njit(inline="always", cache=True)
def _sig(x):
    if x > 60.0:
        return 1.0
    if x < -60.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(-x))


@njit(inline="always", cache=True)
def _exp(x):
    if x > 60.0:
        x = 60.0
    elif x < -60.0:
        x = -60.0
    return math.exp(x)


@njit(inline="always", cache=True)
def _syn_gate_rate(v, s, alpha, beta, theta, h_theta, h_sigma):
    h = _sig(((v - theta) - h_theta) / h_sigma)
    return alpha * h * (1.0 - s) - beta * s


@njit(cache=True)
def _deriv(t_abs, t_loc, y, dy, p,
           c_ge_sn, c_sn_ge, c_ge_ge, c_sn_gi, c_ge_gi, c_gi_th,
           gpe_off, dbs_f, dbs_a):
    cm = p[P_CM]

    u = t_abs - math.floor(t_abs / p[P_SMC_PERIOD]) * p[P_SMC_PERIOD]
    i_smc = p[P_SMC_AMP] if u < p[P_SMC_WIDTH] else 0.0
    i_dbs = pulse_current(t_loc, dbs_f, dbs_a)

    # thalamic relay cells: leak, Na, K, low-threshold Ca, GPi inhibition, SMC drive
    for i in range(N):
        v = y[TH_V + i]
        h = y[TH_H + i]
        r = y[TH_R + i]
        minf = _sig((v + 37.0) / 7.0)
        pinf = _sig((v + 60.0) / 6.2)
        hinf = _sig(-(v + 41.0) / 4.0)
        rinf = _sig(-(v + 84.0) / 4.0)
        ah = 0.128 * _exp(-(v + 46.0) / 18.0)
        bh = 4.0 * _sig((v + 23.0) / 5.0)
        tau_h = 1.0 / (ah + bh)
        if tau_h < _TAU_FLOOR:
            tau_h = _TAU_FLOOR
        tau_r = 0.15 * (28.0 + _exp(-(v + 25.0) / 10.5))

        i_l = p[P_TH_GL] * (v - p[P_TH_EL])
        i_na = p[P_TH_GNA] * minf * minf * minf * h * (v - p[P_TH_ENA])
        kk = 0.75 * (1.0 - h)
        i_k = p[P_TH_GK] * kk * kk * kk * kk * (v - p[P_TH_EK])
        i_t = p[P_TH_GT] * pinf * pinf * r * (v - p[P_TH_ET])
        ssum = 0.0
        for j in range(c_gi_th.shape[1]):
            ssum += y[GPI_S + c_gi_th[i, j]]
        i_gi_th = p[P_G_GI_TH] * (v - p[P_E_GI_TH]) * ssum

        dy[TH_V + i] = (-i_l - i_na - i_k - i_t - i_gi_th + i_smc) / cm
        dy[TH_H + i] = (hinf - h) / tau_h
        dy[TH_R + i] = (rinf - r) / tau_r
        dy[TH_S + i] = _syn_gate_rate(
            v, y[TH_S + i], p[P_SYN_TH_ALPHA], p[P_SYN_TH_BETA],
            p[P_SYN_TH_THETA], p[P_SYN_TH_HTHETA], p[P_SYN_TH_HSIGMA])

    # subthalamic cells: stimulation site
    for i in range(N):
        v = y[STN_V + i]
        n = y[STN_N + i]
        h = y[STN_H + i]
        r = y[STN_R + i]
        c = y[STN_C + i]
        ca = y[STN_CA + i]
        minf = _sig((v + 30.0) / 15.0)
        ninf = _sig((v + 32.0) / 8.0)
        hinf = _sig(-(v + 39.0) / 3.1)
        ainf = _sig((v + 63.0) / 7.8)
        rinf = _sig(-(v + 67.0) / 2.0)
        cinf = _sig((v + 20.0) / 8.0)
        binf = _sig((r - 0.4) / 0.1) - 0.017986209962091559  # 1/(1+exp(4))
        tau_n = 1.0 + 100.0 * _sig(-(v + 80.0) / 26.0)
        tau_h = 1.0 + 500.0 * _sig(-(v + 57.0) / 3.0)
        tau_r = 7.1 + 17.5 * _sig(-(v - 68.0) / 2.2)
        tau_c = 1.0 + 10.0 * _sig(-(v + 80.0) / 26.0)

        i_l = p[P_STN_GL] * (v - p[P_STN_EL])
        i_na = p[P_STN_GNA] * minf * minf * minf * h * (v - p[P_STN_ENA])
        i_k = p[P_STN_GK] * n * n * n * n * (v - p[P_STN_EK])
        i_t = p[P_STN_GT] * ainf * ainf * ainf * binf * binf * (v - p[P_STN_ECA])
        i_ca = p[P_STN_GCA] * c * c * (v - p[P_STN_ECA])
        i_ahp = p[P_STN_GAHP] * (v - p[P_STN_EK]) * ca / (ca + p[P_STN_K1])
        ssum = 0.0
        for j in range(c_ge_sn.shape[1]):
            ssum += y[GPE_S + c_ge_sn[i, j]]
        i_ge_sn = p[P_G_GE_SN] * (v - p[P_E_GE_SN]) * ssum

        dy[STN_V + i] = (-i_l - i_na - i_k - i_t - i_ca - i_ahp - i_ge_sn
                         + p[P_IAPP_STN] + i_dbs) / cm
        dy[STN_N + i] = p[P_STN_PHI_N] * (ninf - n) / tau_n
        dy[STN_H + i] = p[P_STN_PHI_H] * (hinf - h) / tau_h
        dy[STN_R + i] = p[P_STN_PHI_R] * (rinf - r) / tau_r
        dy[STN_C + i] = p[P_STN_PHI_C] * (cinf - c) / tau_c
        dy[STN_CA + i] = p[P_STN_EPS_CA] * (-i_ca - i_t - p[P_STN_KCA] * ca)
        dy[STN_S + i] = _syn_gate_rate(
            v, y[STN_S + i], p[P_SYN_STN_ALPHA], p[P_SYN_STN_BETA],
            p[P_SYN_STN_THETA], p[P_SYN_STN_HTHETA], p[P_SYN_STN_HSIGMA])

    # pallidal kinetics shared by GPe and GPi
    for block in range(2):
        if block == 0:
            v_o, n_o, h_o, r_o, ca_o, s_o = GPE_V, GPE_N, GPE_H, GPE_R, GPE_CA, GPE_S
            gl = p[P_GPE_GL]; el = p[P_GPE_EL]; gna = p[P_GPE_GNA]; ena = p[P_GPE_ENA]
            gk = p[P_GPE_GK]; ek = p[P_GPE_EK]; gt = p[P_GPE_GT]
            gca = p[P_GPE_GCA]; eca = p[P_GPE_ECA]; gahp = p[P_GPE_GAHP]
            k1 = p[P_GPE_K1]; kca = p[P_GPE_KCA]
            phi_n = p[P_GPE_PHI_N]; phi_h = p[P_GPE_PHI_H]; phi_r = p[P_GPE_PHI_R]
            tau_r_c = p[P_GPE_TAU_R]; eps_ca = p[P_GPE_EPS_CA]
            sa = p[P_SYN_GPE_ALPHA]; sb = p[P_SYN_GPE_BETA]; st = p[P_SYN_GPE_THETA]
            sht = p[P_SYN_GPE_HTHETA]; shs = p[P_SYN_GPE_HSIGMA]
        else:
            v_o, n_o, h_o, r_o, ca_o, s_o = GPI_V, GPI_N, GPI_H, GPI_R, GPI_CA, GPI_S
            gl = p[P_GPI_GL]; el = p[P_GPI_EL]; gna = p[P_GPI_GNA]; ena = p[P_GPI_ENA]
            gk = p[P_GPI_GK]; ek = p[P_GPI_EK]; gt = p[P_GPI_GT]
            gca = p[P_GPI_GCA]; eca = p[P_GPI_ECA]; gahp = p[P_GPI_GAHP]
            k1 = p[P_GPI_K1]; kca = p[P_GPI_KCA]
            phi_n = p[P_GPI_PHI_N]; phi_h = p[P_GPI_PHI_H]; phi_r = p[P_GPI_PHI_R]
            tau_r_c = p[P_GPI_TAU_R]; eps_ca = p[P_GPI_EPS_CA]
            sa = p[P_SYN_GPI_ALPHA]; sb = p[P_SYN_GPI_BETA]; st = p[P_SYN_GPI_THETA]
            sht = p[P_SYN_GPI_HTHETA]; shs = p[P_SYN_GPI_HSIGMA]

        for i in range(N):
            v = y[v_o + i]
            n = y[n_o + i]
            h = y[h_o + i]
            r = y[r_o + i]
            ca = y[ca_o + i]
            minf = _sig((v + 37.0) / 10.0)
            ninf = _sig((v + 50.0) / 14.0)
            hinf = _sig(-(v + 58.0) / 12.0)
            ainf = _sig((v + 57.0) / 2.0)
            rinf = _sig(-(v + 70.0) / 2.0)
            sinf = _sig((v + 35.0) / 2.0)
            tau_nh = 0.05 + 0.27 * _sig(-(v + 40.0) / 12.0)

            i_l = gl * (v - el)
            i_na = gna * minf * minf * minf * h * (v - ena)
            i_k = gk * n * n * n * n * (v - ek)
            i_t = gt * ainf * ainf * ainf * r * (v - eca)
            i_ca = gca * sinf * sinf * (v - eca)
            i_ahp = gahp * (v - ek) * ca / (ca + k1)

            if block == 0:
                ssum = 0.0
                for j in range(c_sn_ge.shape[1]):
                    ssum += y[STN_S + c_sn_ge[i, j]]
                i_exc = p[P_G_SN_GE] * (v - p[P_E_SN_GE]) * ssum
                ssum = 0.0
                for j in range(c_ge_ge.shape[1]):
                    ssum += y[GPE_S + c_ge_ge[i, j]]
                i_inh = p[P_G_GE_GE] * (v - p[P_E_GE_GE]) * ssum
                i_app = p[P_IAPP_GPE] + gpe_off[i]
            else:
                ssum = 0.0
                for j in range(c_sn_gi.shape[1]):
                    ssum += y[STN_S + c_sn_gi[i, j]]
                i_exc = p[P_G_SN_GI] * (v - p[P_E_SN_GI]) * ssum
                ssum = 0.0
                for j in range(c_ge_gi.shape[1]):
                    ssum += y[GPE_S + c_ge_gi[i, j]]
                i_inh = p[P_G_GE_GI] * (v - p[P_E_GE_GI]) * ssum
                i_app = p[P_IAPP_GPI]

            dy[v_o + i] = (-i_l - i_na - i_k - i_t - i_ca - i_ahp
                           - i_exc - i_inh + i_app) / cm
            dy[n_o + i] = phi_n * (ninf - n) / tau_nh
            dy[h_o + i] = phi_h * (hinf - h) / tau_nh
            dy[r_o + i] = phi_r * (rinf - r) / tau_r_c
            dy[ca_o + i] = eps_ca * (-i_ca - i_t - kca * ca)
            dy[s_o + i] = _syn_gate_rate(v, y[s_o + i], sa, sb, st, sht, shs)


@njit(cache=True)
def run_window(y, p,
               c_ge_sn, c_sn_ge, c_ge_ge, c_sn_gi, c_ge_gi, c_gi_th,
               gpe_off, t0, n_steps, dt, stride, dbs_f, dbs_a,
               sgi_out, vgi_out, vstn_out, idbs_out):
    """Advance the state vector by n_steps RK4 steps, recording every `stride`.

    Mutates y in place and fills the per-neuron output arrays. Returns -1.0
    on success, or the absolute time (ms) at which a membrane potential left
    the divergence guard band or became non-finite.
    """
    k1 = np.empty(NSTATE)
    k2 = np.empty(NSTATE)
    k3 = np.empty(NSTATE)
    k4 = np.empty(NSTATE)
    yt = np.empty(NSTATE)
    v_min = p[P_V_MIN]
    v_max = p[P_V_MAX]
    half = 0.5 * dt
    sixth = dt / 6.0

    for step in range(n_steps):
        tl = step * dt
        ta = t0 + tl
        _deriv(ta, tl, y, k1, p, c_ge_sn, c_sn_ge, c_ge_ge, c_sn_gi, c_ge_gi,
               c_gi_th, gpe_off, dbs_f, dbs_a)
        for q in range(NSTATE):
            yt[q] = y[q] + half * k1[q]
        _deriv(ta + half, tl + half, yt, k2, p, c_ge_sn, c_sn_ge, c_ge_ge,
               c_sn_gi, c_ge_gi, c_gi_th, gpe_off, dbs_f, dbs_a)
        for q in range(NSTATE):
            yt[q] = y[q] + half * k2[q]
        _deriv(ta + half, tl + half, yt, k3, p, c_ge_sn, c_sn_ge, c_ge_ge,
               c_sn_gi, c_ge_gi, c_gi_th, gpe_off, dbs_f, dbs_a)
        for q in range(NSTATE):
            yt[q] = y[q] + dt * k3[q]
        _deriv(ta + dt, tl + dt, yt, k4, p, c_ge_sn, c_sn_ge, c_ge_ge,
               c_sn_gi, c_ge_gi, c_gi_th, gpe_off, dbs_f, dbs_a)
        for q in range(NSTATE):
            y[q] += sixth * (k1[q] + 2.0 * (k2[q] + k3[q]) + k4[q])

        for off in GATE_BLOCKS:
            for i in range(N):
                g = y[off + i]
                if g < 0.0:
                    y[off + i] = 0.0
                elif g > 1.0:
                    y[off + i] = 1.0
        for off in V_BLOCKS:
            for i in range(N):
                v = y[off + i]
                if not (v_min <= v <= v_max):
                    return ta + dt

        if (step + 1) % stride == 0:
            s_idx = (step + 1) // stride - 1
            t_rec = tl + dt
            for i in range(N):
                sgi_out[i, s_idx] = y[GPI_S + i]
                vgi_out[i, s_idx] = y[GPI_V + i]
                vstn_out[i, s_idx] = y[STN_V + i]
            idbs_out[s_idx] = pulse_current(t_rec, dbs_f, dbs_a)
    return -1.0
