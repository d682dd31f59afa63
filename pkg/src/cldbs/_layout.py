"""Flat state-vector and parameter-vector layout shared by packer and kernel.

The integrator works on one contiguous float64 vector per network. Each

nucleus occupies a block of per-variable sub-slices of length N = 10:

    th:  v, h, r, s
    stn: v, n, h, r, c, ca, s
    gpe: v, n, h, r, ca, s
    gpi: v, n, h, r, ca, s

where s is the outgoing synaptic gating variable. Instantaneous gates
(m, a, p, the calcium-channel activation and the STN b gate) are computed
from v or r inside the derivative and are not state.
"""

N = 10  # neurons per nucleus

_STATE_BLOCKS = (
    "TH_V", "TH_H", "TH_R", "TH_S",
    "STN_V", "STN_N", "STN_H", "STN_R", "STN_C", "STN_CA", "STN_S",
    "GPE_V", "GPE_N", "GPE_H", "GPE_R", "GPE_CA", "GPE_S",
    "GPI_V", "GPI_N", "GPI_H", "GPI_R", "GPI_CA", "GPI_S",
)

for _i, _name in enumerate(_STATE_BLOCKS):
    globals()[_name] = _i * N
NSTATE = len(_STATE_BLOCKS) * N

#: offsets of the blocks clipped to [0, 1] after every step (gates + s_out)
GATE_BLOCKS = (
    TH_H, TH_R, TH_S,  # noqa: F821
    STN_N, STN_H, STN_R, STN_C, STN_S,  # noqa: F821
    GPE_N, GPE_H, GPE_R, GPE_S,  # noqa: F821
    GPI_N, GPI_H, GPI_R, GPI_S,  # noqa: F821
)

#: offsets of the membrane-potential blocks checked by the divergence guard
V_BLOCKS = (TH_V, STN_V, GPE_V, GPI_V)  # noqa: F821

P_FIELDS = (
    "cm",
    # thalamic relay cells
    "th_gl", "th_el", "th_gna", "th_ena", "th_gk", "th_ek", "th_gt", "th_et",
    # subthalamic cells
    "stn_gl", "stn_el", "stn_gna", "stn_ena", "stn_gk", "stn_ek", "stn_gt",
    "stn_gca", "stn_eca", "stn_gahp", "stn_k1", "stn_kca",
    "stn_phi_n", "stn_phi_h", "stn_phi_r", "stn_phi_c", "stn_eps_ca",
    # pallidal cells, externus
    "gpe_gl", "gpe_el", "gpe_gna", "gpe_ena", "gpe_gk", "gpe_ek", "gpe_gt",
    "gpe_gca", "gpe_eca", "gpe_gahp", "gpe_k1", "gpe_kca",
    "gpe_phi_n", "gpe_phi_h", "gpe_phi_r", "gpe_tau_r", "gpe_eps_ca",
    # pallidal cells, internus
    "gpi_gl", "gpi_el", "gpi_gna", "gpi_ena", "gpi_gk", "gpi_ek", "gpi_gt",
    "gpi_gca", "gpi_eca", "gpi_gahp", "gpi_k1", "gpi_kca",
    "gpi_phi_n", "gpi_phi_h", "gpi_phi_r", "gpi_tau_r", "gpi_eps_ca",
    # outgoing synaptic gating kinetics per nucleus
    "syn_th_alpha", "syn_th_beta", "syn_th_theta", "syn_th_htheta", "syn_th_hsigma",
    "syn_stn_alpha", "syn_stn_beta", "syn_stn_theta", "syn_stn_htheta", "syn_stn_hsigma",
    "syn_gpe_alpha", "syn_gpe_beta", "syn_gpe_theta", "syn_gpe_htheta", "syn_gpe_hsigma",
    "syn_gpi_alpha", "syn_gpi_beta", "syn_gpi_theta", "syn_gpi_htheta", "syn_gpi_hsigma",
    # projection conductance / reversal pairs
    "g_ge_sn", "e_ge_sn", "g_sn_ge", "e_sn_ge", "g_ge_ge", "e_ge_ge",
    "g_sn_gi", "e_sn_gi", "g_ge_gi", "e_ge_gi", "g_gi_th", "e_gi_th",
    # condition-resolved bias currents
    "iapp_stn", "iapp_gpe", "iapp_gpi",
    # cortical input pulse train
    "smc_period", "smc_width", "smc_amp",
    # divergence guard band
    "v_min", "v_max",
)

P_INDEX = {name: i for i, name in enumerate(P_FIELDS)}
for _name, _i in P_INDEX.items():
    globals()["P_" + _name.upper()] = _i
NPARAM = len(P_FIELDS)
