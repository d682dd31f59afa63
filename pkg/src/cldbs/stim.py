"""Charge-balanced biphasic stimulation waveforms and power metrics.

A stimulus command is a (frequency, amplitude) pair. The physical waveform
is a train of symmetric biphasic pulses: an anodic phase of +amplitude for
150 us immediately followed by a cathodic phase of -amplitude for 150 us,
zero in between. Pulse phase restarts at t = 0 of every synthesis window,
so a window is fully described by its command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import PulseOverlap

FREQ_MAX_HZ = 185.0
AMP_MAX_UA_CM2 = 5000.0
PHASE_WIDTH_MS = 0.15   # each of the anodic and cathodic phases
PULSE_WIDTH_MS = 0.30
DEFAULT_WAVE_DT_MS = 0.025


@dataclass(frozen=True)
class StimulusCommand:
    """One agent decision in physical and normalized units.

    frequency in Hz, amplitude in uA/cm^2, (a0, a1) the normalized action
    in [-1, 1]^2. `clamped` records whether the raw action had to be
    clamped into range before de-normalization.
    """

    frequency: float
    amplitude: float
    a0: float
    a1: float
    clamped: bool = False

    @property
    def is_off(self) -> bool:
        return self.frequency <= 0.0 or self.amplitude <= 0.0


def denormalize(a0: float, a1: float) -> StimulusCommand:
    """Map a normalized action in [-1, 1]^2 to physical stimulation units.

    Out-of-range inputs are clamped and the clamping is recorded on the
    returned command. (-1, -1) maps to (0 Hz, 0 uA/cm^2) and (1, 1) to
    (185 Hz, 5000 uA/cm^2).
    """
    c0 = min(max(float(a0), -1.0), 1.0)
    c1 = min(max(float(a1), -1.0), 1.0)
    clamped = (c0 != a0) or (c1 != a1)
    frequency = (c0 + 1.0) / 2.0 * FREQ_MAX_HZ
    amplitude = (c1 + 1.0) / 2.0 * AMP_MAX_UA_CM2
    return StimulusCommand(frequency, amplitude, c0, c1, clamped)


def normalize_command(frequency: float, amplitude: float) -> tuple[float, float]:
    """Inverse of :func:`denormalize` for in-range physical values."""
    if not 0.0 <= frequency <= FREQ_MAX_HZ:
        raise ValueError(f"frequency {frequency} outside [0, {FREQ_MAX_HZ}] Hz")
    if not 0.0 <= amplitude <= AMP_MAX_UA_CM2:
        raise ValueError(f"amplitude {amplitude} outside [0, {AMP_MAX_UA_CM2}]")
    return 2.0 * frequency / FREQ_MAX_HZ - 1.0, 2.0 * amplitude / AMP_MAX_UA_CM2 - 1.0


@njit(cache=True)
def pulse_current(t_ms: float, frequency: float, amplitude: float) -> float:
    """Instantaneous pulse-train current at time t_ms (phase zero at t = 0).

    Canonical continuous-time definition shared by the ODE driver and the
    trace recorder, so recorded i_dbs sequences are regenerable bit for bit.
    """
    if frequency <= 0.0 or amplitude == 0.0:
        return 0.0
    period = 1000.0 / frequency
    u = t_ms - math.floor(t_ms / period) * period
    if u < PHASE_WIDTH_MS:
        return amplitude
    if u < PULSE_WIDTH_MS:
        return -amplitude
    return 0.0


@dataclass(frozen=True)
class Waveform:
    """Materialized pulse train: `samples` of current (uA/cm^2) at step `dt` (ms).

    duration = len(samples) * dt. Used for power computation, export and
    tests; the simulator evaluates the pulse train lazily instead.
    """

    dt: float
    samples: np.ndarray
    duration: float


def synthesize(cmd: StimulusCommand, duration: float, dt: float = DEFAULT_WAVE_DT_MS) -> Waveform:
    """Materialize the biphasic pulse train for one window.

    Each pulse is built from an equal integer number of anodic and cathodic
    samples, so the net charge of every pulse is exactly zero. Pulses start
    at t = 0, 1000/f, 2000/f, ... ms; a pulse is emitted only if it fits
    completely inside the window. dt must not exceed 25 us and must divide
    the 150 us phase width evenly.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    if dt <= 0.0 or dt > DEFAULT_WAVE_DT_MS + 1e-12:
        raise ValueError("dt must be in (0, 0.025] ms for >= 6 samples per phase")
    phase_samples = int(round(PHASE_WIDTH_MS / dt))
    if abs(phase_samples * dt - PHASE_WIDTH_MS) > 1e-9:
        raise ValueError(f"dt = {dt} ms does not divide the {PHASE_WIDTH_MS} ms phase")

    n = int(round(duration / dt))
    samples = np.zeros(n, dtype=np.float64)
    if cmd.is_off:
        return Waveform(dt=dt, samples=samples, duration=n * dt)

    period = 1000.0 / cmd.frequency
    if period < PULSE_WIDTH_MS:
        # unreachable from denormalize (f <= 185 Hz) but guard raw commands
        raise PulseOverlap(f"period {period:.4f} ms shorter than pulse width")

    k = 0
    while True:
        t_start = k * period
        if t_start > duration - PULSE_WIDTH_MS:
            break
        i0 = int(round(t_start / dt))
        i1 = i0 + phase_samples
        i2 = i1 + phase_samples
        if i2 > n:
            break
        samples[i0:i1] = cmd.amplitude
        samples[i1:i2] = -cmd.amplitude
        k += 1
    return Waveform(dt=dt, samples=samples, duration=n * dt)


def rms_power(wave: Waveform) -> float:
    """Root-mean-square of the stimulation current over the window.

    Discrete evaluation of [1/T * integral of I^2 dt]^(1/2). For an ideal
    biphasic square train this equals amplitude * sqrt(frequency * 300 us).
    Reported under the u A cm^-2 Hz label used in the run reports even
    though the formula's natural unit is uA/cm^2.
    """
    if wave.duration <= 0.0:
        raise ValueError("waveform duration must be positive")
    return float(np.sqrt(np.mean(np.square(wave.samples))))


def analytic_rms(frequency: float, amplitude: float) -> float:
    """Closed-form RMS of an ideal biphasic train (duty-cycle identity)."""
    return amplitude * math.sqrt(frequency * PULSE_WIDTH_MS * 1e-3)
