"""Network state, initialization and fixed-step advancement.

The dynamical state of all 40 neurons lives in one flat float64 vector
(see _layout); NeuronState views are materialized on demand for inspection
and tests. step_network is value-style: it returns a new state and never
mutates its input, so identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernel, _layout
from .errors import NumericalDivergence
from .params import ModelParams
from .stim import StimulusCommand

_L = _layout

# (block offset, variable name) per nucleus, state variables only
_NUCLEUS_VARS = {
    "th": (("v", _L.TH_V), ("h", _L.TH_H), ("r", _L.TH_R), ("s", _L.TH_S)),
    "stn": (
        ("v", _L.STN_V), ("n", _L.STN_N), ("h", _L.STN_H), ("r", _L.STN_R),
        ("c", _L.STN_C), ("ca", _L.STN_CA), ("s", _L.STN_S),
    ),
    "gpe": (
        ("v", _L.GPE_V), ("n", _L.GPE_N), ("h", _L.GPE_H), ("r", _L.GPE_R),
        ("ca", _L.GPE_CA), ("s", _L.GPE_S),
    ),
    "gpi": (
        ("v", _L.GPI_V), ("n", _L.GPI_N), ("h", _L.GPI_H), ("r", _L.GPI_R),
        ("ca", _L.GPI_CA), ("s", _L.GPI_S),
    ),
}


@dataclass(frozen=True)
class NeuronState:
    """Read-only view of one neuron: potential, gates, calcium, synaptic output."""

    v: float
    gating: dict
    ca: float | None
    s_out: float


@dataclass
class NetworkState:
    """Full dynamical state of the 40-neuron network at time t (ms)."""

    y: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.y.shape != (_L.NSTATE,):
            raise ValueError(f"state vector must have shape ({_L.NSTATE},)")

    def copy(self) -> "NetworkState":
        return NetworkState(self.y.copy(), self.t)

    def _neurons(self, nucleus: str) -> tuple:
        out = []
        blocks = _NUCLEUS_VARS[nucleus]
        for i in range(_L.N):
            vals = {name: float(self.y[off + i]) for name, off in blocks}
            v = vals.pop("v")
            s = vals.pop("s")
            ca = vals.pop("ca", None)
            out.append(NeuronState(v=v, gating=vals, ca=ca, s_out=s))
        return tuple(out)

    @property
    def th(self) -> tuple:
        return self._neurons("th")

    @property
    def stn(self) -> tuple:
        return self._neurons("stn")

    @property
    def gpe(self) -> tuple:
        return self._neurons("gpe")

    @property
    def gpi(self) -> tuple:
        return self._neurons("gpi")


@dataclass(frozen=True, eq=False)
class TraceWindow:
    """Per-sample recording of one advancement window.

    All sequences share the dt_sample grid; sample k corresponds to time
    t_start + (k + 1) * dt_sample. i_dbs is regenerable bit for bit from
    the stimulus command that produced the window.
    """

    dt_sample: float
    t_start: float
    s_gi: np.ndarray    # (N, samples) per-neuron GPi synaptic gating
    v_gi: np.ndarray    # (N, samples) GPi membrane potential (mV)
    v_stn: np.ndarray   # (N, samples) STN membrane potential (mV)
    i_dbs: np.ndarray   # (samples,) applied stimulation current (uA/cm^2)

    @property
    def n_samples(self) -> int:
        return self.i_dbs.shape[0]

    @property
    def duration(self) -> float:
        return self.n_samples * self.dt_sample

    @property
    def s_gi_mean(self) -> np.ndarray:
        return np.mean(self.s_gi, axis=0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))


def init_network(params: ModelParams, seed) -> NetworkState:
    """Fresh network state: jittered resting potentials, gates at steady state.

    Deterministic for a given seed; different seeds differ in every
    membrane potential with probability one.
    """
    rng = np.random.default_rng(seed)
    init = params.initialization
    jitter = float(init["v_jitter"])
    ca0 = float(init["ca_init"])
    y = np.zeros(_L.NSTATE, dtype=np.float64)

    v = {}
    for nucleus in ("th", "stn", "gpe", "gpi"):
        rest = float(init["v_rest"][nucleus])
        v[nucleus] = rest + jitter * rng.uniform(-1.0, 1.0, _L.N)

    y[_L.TH_V:_L.TH_V + _L.N] = v["th"]
    y[_L.TH_H:_L.TH_H + _L.N] = _sigmoid(-(v["th"] + 41.0) / 4.0)
    y[_L.TH_R:_L.TH_R + _L.N] = _sigmoid(-(v["th"] + 84.0) / 4.0)

    y[_L.STN_V:_L.STN_V + _L.N] = v["stn"]
    y[_L.STN_N:_L.STN_N + _L.N] = _sigmoid((v["stn"] + 32.0) / 8.0)
    y[_L.STN_H:_L.STN_H + _L.N] = _sigmoid(-(v["stn"] + 39.0) / 3.1)
    y[_L.STN_R:_L.STN_R + _L.N] = _sigmoid(-(v["stn"] + 67.0) / 2.0)
    y[_L.STN_C:_L.STN_C + _L.N] = _sigmoid((v["stn"] + 20.0) / 8.0)
    y[_L.STN_CA:_L.STN_CA + _L.N] = ca0

    for name, v_o, n_o, h_o, r_o, ca_o in (
        ("gpe", _L.GPE_V, _L.GPE_N, _L.GPE_H, _L.GPE_R, _L.GPE_CA),
        ("gpi", _L.GPI_V, _L.GPI_N, _L.GPI_H, _L.GPI_R, _L.GPI_CA),
    ):
        y[v_o:v_o + _L.N] = v[name]
        y[n_o:n_o + _L.N] = _sigmoid((v[name] + 50.0) / 14.0)
        y[h_o:h_o + _L.N] = _sigmoid(-(v[name] + 58.0) / 12.0)
        y[r_o:r_o + _L.N] = _sigmoid(-(v[name] + 70.0) / 2.0)
        y[ca_o:ca_o + _L.N] = ca0

    # synaptic outputs start closed
    return NetworkState(y=y, t=0.0)


def step_network(
    state: NetworkState,
    params: ModelParams,
    stimulus: StimulusCommand | None = None,
    duration: float = 100.0,
) -> tuple[NetworkState, TraceWindow]:
    """Advance all neurons by `duration` ms under the given stimulus.

    The stimulation pulse train (phase zero at the window start) is added
    to the STN membrane equations only. duration must be a positive
    multiple of both dt and dt_sample.

    Raises NumericalDivergence if any membrane potential leaves the guard
    band or becomes non-finite.
    """
    dt = params.dt
    n_steps = int(round(duration / dt))
    if n_steps < 1 or abs(n_steps * dt - duration) > 1e-9:
        raise ValueError(f"duration {duration} ms is not a positive multiple of dt={dt}")
    stride = params.sample_stride
    if n_steps % stride != 0:
        raise ValueError("duration must be a multiple of dt_sample")
    n_samples = n_steps // stride

    if stimulus is None:
        dbs_f, dbs_a = 0.0, 0.0
    else:
        dbs_f, dbs_a = float(stimulus.frequency), float(stimulus.amplitude)

    packed = params.packed()
    y = state.y.copy()
    s_gi = np.empty((_L.N, n_samples))
    v_gi = np.empty((_L.N, n_samples))
    v_stn = np.empty((_L.N, n_samples))
    i_dbs = np.empty(n_samples)

    t_fail = _kernel.run_window(
        y, packed.p,
        packed.conn_ge_sn, packed.conn_sn_ge, packed.conn_ge_ge,
        packed.conn_sn_gi, packed.conn_ge_gi, packed.conn_gi_th,
        packed.gpe_offsets,
        state.t, n_steps, dt, stride, dbs_f, dbs_a,
        s_gi, v_gi, v_stn, i_dbs,
    )
    if t_fail >= 0.0:
        raise NumericalDivergence(
            f"membrane potential left guard band at t={t_fail:.3f} ms "
            f"(dt too large or unphysical parameters)",
            t_ms=t_fail,
        )
    trace = TraceWindow(
        dt_sample=params.dt_sample, t_start=state.t,
        s_gi=s_gi, v_gi=v_gi, v_stn=v_stn, i_dbs=i_dbs,
    )
    return NetworkState(y=y, t=state.t + duration), trace


def detect_spikes(
    trace: np.ndarray,
    dt_sample: float,
    threshold: float = -20.0,
    refractory: float = 2.0,
    t0: float = 0.0,
) -> np.ndarray:
    """Upward threshold-crossing times (ms) with refractory de-duplication.

    A spike is counted when the voltage rises from below `threshold` to at
    or above it; crossings within `refractory` ms of the previous accepted
    spike are discarded.
    """
    v = np.asarray(trace, dtype=np.float64)
    if v.size == 0:
        raise ValueError("trace must be non-empty")
    crossings = np.nonzero((v[:-1] < threshold) & (v[1:] >= threshold))[0] + 1
    times = []
    last = -math.inf
    for idx in crossings:
        t = t0 + idx * dt_sample
        if t - last >= refractory:
            times.append(t)
            last = t
    return np.array(times, dtype=np.float64)
