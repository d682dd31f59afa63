"""Feature extraction from simulated electrophysiology traces.

Implements the in-vivo-measurable biomarker set: banded spectral power of
neuronal signals, Hjorth parameters, sample entropy, plus the min-max
normalization used to build agent observations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import BandOutOfRange, DegenerateRange, DegenerateSignal, WindowTooShort

#: Fixed feature order; part of the persisted-agent contract.
FEATURE_NAMES = (
    "std_sgi",
    "hjorth_activity",
    "hjorth_mobility",
    "hjorth_complexity",
    "psd_vgi_beta",
    "sampen_stn",
)

SGI_BAND_HZ = (1.0, 20.0)
BETA_BAND_HZ = (13.0, 30.0)


def banded_psd(signals: np.ndarray, dt_sample: float, f_low: float, f_high: float) -> float:
    """Banded spectral power of one or more neuronal signals.

    For each signal the magnitude of its discrete Fourier transform is
    integrated (trapezoidal rule) over the frequency bins falling inside
    [f_low, f_high] inclusive, and the result is averaged over signals.
    The DC bin is always excluded.

    Parameters
    ----------
    signals : ndarray, shape (n_signals, n_samples) or (n_samples,)
        Per-neuron sample sequences.
    dt_sample : float
        Sampling interval in ms.
    f_low, f_high : float
        Band edges in Hz, 0 < f_low < f_high < Nyquist.

    Returns
    -------
    float
        Mean banded spectral power (signal units, unnormalized transform).

    Raises
    ------
    BandOutOfRange
        If the band edges are invalid or reach Nyquist.
    WindowTooShort
        If fewer than two DFT bins fall inside the band, which makes the
        trapezoidal integral undefined for this window length.
    """
    x = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    n = x.shape[1]
    if n < 2:
        raise WindowTooShort("need at least 2 samples")
    nyquist = 1000.0 / (2.0 * dt_sample)
    if not (0.0 < f_low < f_high < nyquist):
        raise BandOutOfRange(
            f"band [{f_low}, {f_high}] Hz invalid for Nyquist {nyquist:.1f} Hz"
        )
    freqs = np.fft.rfftfreq(n, d=dt_sample * 1e-3)
    mask = (freqs >= f_low) & (freqs <= f_high) & (freqs > 0.0)
    if np.count_nonzero(mask) < 2:
        raise WindowTooShort(
            f"{n} samples at {dt_sample} ms give {np.count_nonzero(mask)} bins "
            f"in [{f_low}, {f_high}] Hz; need >= 2"
        )
    mag = np.abs(np.fft.rfft(x, axis=1))
    band = np.trapezoid(mag[:, mask], freqs[mask], axis=1)
    return float(np.mean(band))


def hjorth(x: np.ndarray, dt_sample: float) -> tuple[float, float, float]:
    """Hjorth activity, mobility and complexity of a sampled signal.

    Activity is the population variance of the signal. Mobility is
    sqrt(activity of the derivative / activity), in rad/ms when dt_sample
    is in ms; complexity is the mobility of the derivative divided by the
    mobility. Derivatives are first differences scaled by 1/dt_sample.

    Raises DegenerateSignal for constant input (activity zero) or a
    constant derivative; callers substitute 0 at the feature boundary.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3:
        raise ValueError("need at least 3 samples")
    activity = float(np.var(x))
    if activity == 0.0:
        raise DegenerateSignal("constant signal has zero activity")
    dx = np.diff(x) / dt_sample
    act_dx = float(np.var(dx))
    mobility = float(np.sqrt(act_dx / activity))
    if act_dx == 0.0:
        raise DegenerateSignal("constant derivative, complexity undefined")
    ddx = np.diff(dx) / dt_sample
    mobility_dx = float(np.sqrt(np.var(ddx) / act_dx))
    complexity = mobility_dx / mobility
    return activity, mobility, complexity


def sample_entropy(x: np.ndarray, m: int = 2, r_factor: float = 0.2) -> float:
    """Sample entropy ln C(m, r) - ln C(m+1, r) under Chebyshev distance.

    C(a, r) counts ordered template pairs (i != j) whose length-a embedded
    vectors lie strictly within Chebyshev distance r = r_factor * std(x).
    Both counts run over the same N - m template start indices so that a
    perfectly periodic signal scores exactly 0. Degenerate rules: a
    zero-variance signal returns 0; a zero count is floored at one match,
    which caps the value at ln C(m, r).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if m < 1:
        raise ValueError("embedding dimension must be >= 1")
    if n < m + 2:
        raise ValueError(f"need at least m + 2 = {m + 2} samples, got {n}")
    sigma = float(np.std(x))
    if sigma == 0.0:
        return 0.0
    r = r_factor * sigma

    n_templates = n - m  # common index range for both template lengths
    emb = np.lib.stride_tricks.sliding_window_view(x, m + 1)[:n_templates]
    # pairwise Chebyshev distances over the first m and all m+1 components
    diff = np.abs(emb[:, None, :] - emb[None, :, :])
    d_m = diff[:, :, :m].max(axis=2)
    d_m1 = diff.max(axis=2)
    off_diag = ~np.eye(n_templates, dtype=bool)
    c_m = int(np.count_nonzero((d_m < r) & off_diag))
    c_m1 = int(np.count_nonzero((d_m1 < r) & off_diag))
    return float(np.log(max(c_m, 1)) - np.log(max(c_m1, 1)))


@dataclass(frozen=True)
class FeatureVector:
    """The 6-element biomarker vector, fixed order as in FEATURE_NAMES."""

    std_sgi: float
    hjorth_activity: float
    hjorth_mobility: float
    hjorth_complexity: float
    psd_vgi_beta: float
    sampen_stn: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.std_sgi,
                self.hjorth_activity,
                self.hjorth_mobility,
                self.hjorth_complexity,
                self.psd_vgi_beta,
                self.sampen_stn,
            ],
            dtype=np.float64,
        )


def extract_features(
    trace,
    beta_band: tuple[float, float] = BETA_BAND_HZ,
    sampen_decimation: int = 10,
    sampen_m: int = 2,
    sampen_r_factor: float = 0.2,
) -> FeatureVector:
    """Compute the biomarker vector from one control-timestep trace.

    Standard deviation and Hjorth parameters are taken on the
    mean-over-neurons S_Gi sequence, the beta-band spectral power on the
    per-neuron GPi membrane potentials, and sample entropy on the
    mean STN membrane potential decimated to 1 ms sampling (decimation
    factor relative to the 0.1 ms trace grid). Degenerate signals map to
    feature value 0 so the caller always receives a valid vector.
    """
    s = trace.s_gi_mean
    std_sgi = float(np.std(s))
    try:
        activity, mobility, complexity = hjorth(s, trace.dt_sample)
    except DegenerateSignal:
        activity, mobility, complexity = float(np.var(s)), 0.0, 0.0
    beta = banded_psd(trace.v_gi, trace.dt_sample, beta_band[0], beta_band[1])
    v_stn = np.mean(trace.v_stn, axis=0)[::sampen_decimation]
    sampen = sample_entropy(v_stn, m=sampen_m, r_factor=sampen_r_factor)
    return FeatureVector(std_sgi, activity, mobility, complexity, beta, sampen)


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-feature (min, max) ranges plus the calibration run that made them."""

    mins: tuple[float, ...]
    maxs: tuple[float, ...]
    provenance: str
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        if len(self.mins) != len(self.feature_names) or len(self.maxs) != len(self.feature_names):
            raise ValueError("mins/maxs length must match feature_names")
        for name, lo, hi in zip(self.feature_names, self.mins, self.maxs):
            if not hi > lo:
                raise ValueError(f"feature {name}: max {hi} not greater than min {lo}")

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mins": list(self.mins),
            "maxs": list(self.maxs),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationSpec":
        return cls(
            mins=tuple(d["mins"]),
            maxs=tuple(d["maxs"]),
            provenance=d["provenance"],
            feature_names=tuple(d["feature_names"]),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NormalizationSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def calibrate_normalization(
    feature_samples, provenance: str, margin: float = 0.05
) -> NormalizationSpec:
    """Build a NormalizationSpec from calibration feature vectors.

    Takes per-feature min/max over the collection and widens each side by
    `margin` times the observed range. Requires at least 20 vectors;
    raises DegenerateRange if any feature is constant across them.
    """
    arr = np.array([fv.as_array() for fv in feature_samples], dtype=np.float64)
    if arr.shape[0] < 20:
        raise ValueError(f"need >= 20 calibration vectors, got {arr.shape[0]}")
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    span = hi - lo
    for name, s in zip(FEATURE_NAMES, span):
        if s == 0.0:
            raise DegenerateRange(f"feature {name} constant across calibration")
    return NormalizationSpec(
        mins=tuple(lo - margin * span),
        maxs=tuple(hi + margin * span),
        provenance=provenance,
    )


def normalize(v: FeatureVector, spec: NormalizationSpec) -> np.ndarray:
    """Min-max normalize a feature vector to [0, 1]^6, clamping outliers."""
    x = v.as_array()
    lo = np.asarray(spec.mins)
    hi = np.asarray(spec.maxs)
    return np.clip((x - lo) / (hi - lo), 0.0, 1.0)
