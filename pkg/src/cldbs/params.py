"""Model parameter loading, validation and kernel packing.

Parameters live in a human-readable YAML file (see data/bgt_params.yaml for
the shipped set, with units in comments). A ModelParams instance is the
validated, condition-resolved form; pack() flattens it into the arrays the
integration kernel consumes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple

import numpy as np
import yaml

from . import _layout

CONDITIONS = ("healthy", "parkinsonian")

PROJECTIONS = (
    ("gpe_to_stn", "g_ge_sn", "e_ge_sn"),
    ("stn_to_gpe", "g_sn_ge", "e_sn_ge"),
    ("gpe_to_gpe", "g_ge_ge", "e_ge_ge"),
    ("stn_to_gpi", "g_sn_gi", "e_sn_gi"),
    ("gpe_to_gpi", "g_ge_gi", "e_ge_gi"),
    ("gpi_to_th", "g_gi_th", "e_gi_th"),
)

_NUCLEUS_KEYS = {
    "th": ("g_leak", "e_leak", "g_na", "e_na", "g_k", "e_k", "g_t", "e_t"),
    "stn": (
        "g_leak", "e_leak", "g_na", "e_na", "g_k", "e_k", "g_t",
        "g_ca", "e_ca", "g_ahp", "k1", "k_ca",
        "phi_n", "phi_h", "phi_r", "phi_c", "eps_ca",
    ),
    "gpe": (
        "g_leak", "e_leak", "g_na", "e_na", "g_k", "e_k", "g_t",
        "g_ca", "e_ca", "g_ahp", "k1", "k_ca",
        "phi_n", "phi_h", "phi_r", "tau_r", "eps_ca",
    ),
}
_NUCLEUS_KEYS["gpi"] = _NUCLEUS_KEYS["gpe"]


class PackedModel(NamedTuple):
    """Kernel-ready form: flat parameter vector plus wiring arrays."""

    p: np.ndarray            # (_layout.NPARAM,) float64
    conn_ge_sn: np.ndarray   # per-target source indices, int64
    conn_sn_ge: np.ndarray
    conn_ge_ge: np.ndarray
    conn_sn_gi: np.ndarray
    conn_ge_gi: np.ndarray
    conn_gi_th: np.ndarray
    gpe_offsets: np.ndarray  # (N,) float64 per-neuron GPe bias offsets


@dataclass(frozen=True)
class ModelParams:
    """Validated network parameterization for one brain condition."""

    condition: str
    n_neurons: int
    dt: float
    dt_sample: float
    cm: float
    th: dict
    stn: dict
    gpe: dict
    gpi: dict
    synaptic_gating: dict
    projections: dict
    applied_current: dict     # resolved for `condition`: stn/gpe/gpi
    gpe_offsets: tuple
    smc: dict
    initialization: dict
    divergence_guard: dict
    source_version: int = 1

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")
        if self.n_neurons != _layout.N:
            raise ValueError(f"exactly {_layout.N} neurons per nucleus are supported")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        steps = self.dt_sample / self.dt
        if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
            raise ValueError("dt_sample must be a positive integer multiple of dt")
        if self.smc["period"] > 100.0:
            raise ValueError("smc period must be <= 100 ms (one pulse per control step)")
        if not self.smc["period"] > 0.0 or not 0.0 < self.smc["width"] <= self.smc["period"]:
            raise ValueError("smc pulse width must be in (0, period]")
        if not self.divergence_guard["v_max"] > self.divergence_guard["v_min"]:
            raise ValueError("divergence guard band is empty")
        if len(self.gpe_offsets) != self.n_neurons:
            raise ValueError("gpe_offsets must have one entry per GPe neuron")
        for nucleus, keys in _NUCLEUS_KEYS.items():
            block = getattr(self, nucleus)
            missing = [k for k in keys if k not in block]
            if missing:
                raise ValueError(f"{nucleus} missing parameters: {missing}")
        for name, _, _ in PROJECTIONS:
            proj = self.projections.get(name)
            if proj is None:
                raise ValueError(f"projection {name} missing")
            sources = proj["sources"]
            if len(sources) != self.n_neurons:
                raise ValueError(f"{name}: need one source list per target neuron")
            width = len(sources[0])
            for row in sources:
                if len(row) != width:
                    raise ValueError(f"{name}: ragged source lists")
                for idx in row:
                    if not 0 <= idx < self.n_neurons:
                        raise ValueError(f"{name}: source index {idx} out of range")

    @property
    def sample_stride(self) -> int:
        return int(round(self.dt_sample / self.dt))

    def with_condition(self, condition: str) -> "ModelParams":
        """Same parameter set resolved for the other brain condition."""
        raw = dict(self._raw)
        return _from_raw(raw, condition, dt=self.dt, dt_sample=self.dt_sample)

    def with_dt(self, dt: float) -> "ModelParams":
        """Same parameter set at a different integration step."""
        return _from_raw(dict(self._raw), self.condition, dt=dt, dt_sample=self.dt_sample)

    # raw YAML mapping kept for condition/dt rebinds and provenance hashing
    _raw: dict = field(default_factory=dict, repr=False, compare=False)

    def digest(self) -> str:
        """Content hash of the full parameter set including condition."""
        payload = json.dumps(
            {"raw": self._raw, "condition": self.condition, "dt": self.dt,
             "dt_sample": self.dt_sample},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def packed(self) -> PackedModel:
        """Cached kernel-ready form; arrays must be treated as read-only."""
        cached = self.__dict__.get("_packed_cache")
        if cached is None:
            cached = self.pack()
            object.__setattr__(self, "_packed_cache", cached)
        return cached

    def pack(self) -> PackedModel:
        p = np.zeros(_layout.NPARAM, dtype=np.float64)

        def put(name, value):
            p[_layout.P_INDEX[name]] = float(value)

        put("cm", self.cm)
        for nucleus in ("th", "stn", "gpe", "gpi"):
            block = getattr(self, nucleus)
            for key in _NUCLEUS_KEYS[nucleus]:
                put(nucleus + "_" + _FIELD_SUFFIX[key], block[key])
        for nucleus in ("th", "stn", "gpe", "gpi"):
            g = self.synaptic_gating[nucleus]
            put(f"syn_{nucleus}_alpha", g["alpha"])
            put(f"syn_{nucleus}_beta", g["beta"])
            put(f"syn_{nucleus}_theta", g["theta"])
            put(f"syn_{nucleus}_htheta", g["h_theta"])
            put(f"syn_{nucleus}_hsigma", g["h_sigma"])
        for name, g_field, e_field in PROJECTIONS:
            put(g_field, self.projections[name]["g"])
            put(e_field, self.projections[name]["e_rev"])
        put("iapp_stn", self.applied_current["stn"])
        put("iapp_gpe", self.applied_current["gpe"])
        put("iapp_gpi", self.applied_current["gpi"])
        put("smc_period", self.smc["period"])
        put("smc_width", self.smc["width"])
        put("smc_amp", self.smc["amplitude"])
        put("v_min", self.divergence_guard["v_min"])
        put("v_max", self.divergence_guard["v_max"])

        conns = [
            np.array(self.projections[name]["sources"], dtype=np.int64)
            for name, _, _ in PROJECTIONS
        ]
        return PackedModel(p, *conns, np.array(self.gpe_offsets, dtype=np.float64))


# YAML key -> packed-field suffix
_FIELD_SUFFIX = {
    "g_leak": "gl", "e_leak": "el", "g_na": "gna", "e_na": "ena",
    "g_k": "gk", "e_k": "ek", "g_t": "gt", "e_t": "et",
    "g_ca": "gca", "e_ca": "eca", "g_ahp": "gahp",
    "k1": "k1", "k_ca": "kca",
    "phi_n": "phi_n", "phi_h": "phi_h", "phi_r": "phi_r", "phi_c": "phi_c",
    "tau_r": "tau_r", "eps_ca": "eps_ca",
}


def _from_raw(raw: dict, condition: str, dt=None, dt_sample=None) -> ModelParams:
    cond = condition.lower()
    if cond not in CONDITIONS:
        raise ValueError(f"condition must be one of {CONDITIONS}")
    applied = raw["applied_current"][cond]
    integ = raw["integration"]
    return ModelParams(
        condition=cond,
        n_neurons=int(raw["n_neurons"]),
        dt=float(integ["dt"] if dt is None else dt),
        dt_sample=float(integ["dt_sample"] if dt_sample is None else dt_sample),
        cm=float(raw["membrane"]["cm"]),
        th=dict(raw["th"]),
        stn=dict(raw["stn"]),
        gpe=dict(raw["gpe"]),
        gpi=dict(raw["gpi"]),
        synaptic_gating={k: dict(v) for k, v in raw["synaptic_gating"].items()},
        projections={k: dict(v) for k, v in raw["projections"].items()},
        applied_current={k: float(v) for k, v in applied.items()},
        gpe_offsets=tuple(float(v) for v in raw["applied_current"]["gpe_offsets"]),
        smc={k: float(v) for k, v in raw["smc"].items()},
        initialization=dict(raw["initialization"]),
        divergence_guard={k: float(v) for k, v in raw["divergence_guard"].items()},
        source_version=int(raw.get("version", 1)),
        _raw=raw,
    )


def load_params(path, condition: str = "parkinsonian") -> ModelParams:
    """Load and validate a parameter file for the given brain condition."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return _from_raw(raw, condition)


def default_params(condition: str = "parkinsonian") -> ModelParams:
    """The parameter set shipped with the package."""
    ref = resources.files("cldbs.data").joinpath("bgt_params.yaml")
    raw = yaml.safe_load(ref.read_text())
    return _from_raw(raw, condition)
