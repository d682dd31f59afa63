"""MDP wrapper around the network simulator.

One control timestep: de-normalize the agent action, drive the network for
100 ms under the resulting pulse train, extract and normalize the biomarker
vector, and score the window with the two-factor reward

    reward = -epsilon * r1 - (1 - epsilon) * r2

where r1 is the normalized 1-20 Hz band power of the S_Gi signal produced
by this window and r2 = theta * (a0+1)/2 + (1-theta) * (a1+1)/2 penalizes
stimulation frequency and amplitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .biomarkers import (
    BETA_BAND_HZ,
    SGI_BAND_HZ,
    NormalizationSpec,
    banded_psd,
    extract_features,
    normalize,
)
from .errors import EpisodeFinished, NumericalDivergence
from .network import init_network, step_network
from .params import ModelParams
from .stim import denormalize, rms_power, synthesize


@dataclass(frozen=True)
class EnvConfig:
    """Environment configuration; defaults give 10 x 100 ms episodes."""

    model: ModelParams
    norm_spec: NormalizationSpec
    r1_norm: tuple[float, float]        # (min, max) raw band power anchors
    timestep_ms: float = 100.0
    episode_len: int = 10
    theta: float = 0.85                 # frequency vs amplitude penalty split
    epsilon: float = 0.68               # suppression vs power priority
    settle_ms: float = 200.0            # stimulus-free interval after reset
    sgi_band: tuple[float, float] = SGI_BAND_HZ
    beta_band: tuple[float, float] = BETA_BAND_HZ
    sampen_decimation: int = 10
    wave_dt: float = 0.025              # grid for the window power metric
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0 or not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("theta and epsilon must lie in [0, 1]")
        if self.episode_len < 1 or self.timestep_ms <= 0.0:
            raise ValueError("episode_len and timestep_ms must be positive")
        if self.r1_norm[1] <= self.r1_norm[0]:
            raise ValueError("r1_norm max must exceed min")
        k = self.settle_ms / self.timestep_ms
        if self.settle_ms < self.timestep_ms or abs(k - round(k)) > 1e-9:
            raise ValueError("settle_ms must be a positive multiple of timestep_ms")

    @property
    def condition(self) -> str:
        return self.model.condition


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


def compute_reward(r1_raw: float, a0: float, a1: float, config: EnvConfig):
    """Window reward from raw band power and the (clamped) action.

    Returns (reward, r1, r2) with r1 the min-max normalized band power
    clamped to [0, 1], so reward always lies in [-1, 0].
    """
    if r1_raw < 0.0:
        raise ValueError("band power cannot be negative")
    lo, hi = config.r1_norm
    r1 = min(max((r1_raw - lo) / (hi - lo), 0.0), 1.0)
    a0c = min(max(a0, -1.0), 1.0)
    a1c = min(max(a1, -1.0), 1.0)
    r2 = config.theta * (a0c + 1.0) / 2.0 + (1.0 - config.theta) * (a1c + 1.0) / 2.0
    reward = -config.epsilon * r1 - (1.0 - config.epsilon) * r2
    return reward, r1, r2


class DBSEnv:
    """Closed-loop stimulation environment over one network instance.

    Single-threaded; run several instances for parallel collection.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self._state = None
        self._obs = None
        self._k = 0
        self._done = True

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed=None) -> np.ndarray:
        """Re-initialize the network, settle without stimulus, observe.

        The returned observation is extracted from the final control
        timestep of the settle interval.
        """
        cfg = self.config
        if seed is None:
            seed = cfg.seed
        state = init_network(cfg.model, seed)
        lead = cfg.settle_ms - cfg.timestep_ms
        if lead > 0.0:
            state, _ = step_network(state, cfg.model, None, lead)
        state, trace = step_network(state, cfg.model, None, cfg.timestep_ms)
        self._state = state
        self._k = 0
        self._done = False
        self._obs = self._observe(trace)
        return self._obs

    def _observe(self, trace) -> np.ndarray:
        cfg = self.config
        features = extract_features(
            trace,
            beta_band=cfg.beta_band,
            sampen_decimation=cfg.sampen_decimation,
        )
        return normalize(features, cfg.norm_spec)

    def step(self, a0: float, a1: float) -> StepResult:
        """Apply one stimulation decision for the next control timestep."""
        if self._done:
            raise EpisodeFinished("call reset() before stepping again")
        cfg = self.config
        cmd = denormalize(a0, a1)
        self._k += 1
        try:
            state, trace = step_network(self._state, cfg.model, cmd, cfg.timestep_ms)
        except NumericalDivergence as exc:
            # abort the episode with the documented penalty
            self._done = True
            return StepResult(
                observation=self._obs,
                reward=-1.0,
                done=True,
                info={"diverged": True, "divergence_t_ms": exc.t_ms,
                      "frequency": cmd.frequency, "amplitude": cmd.amplitude,
                      "clamped": cmd.clamped},
            )
        self._state = state
        features = extract_features(
            trace, beta_band=cfg.beta_band, sampen_decimation=cfg.sampen_decimation
        )
        obs = normalize(features, cfg.norm_spec)
        r1_raw = banded_psd(trace.s_gi, trace.dt_sample, *cfg.sgi_band)
        reward, r1, r2 = compute_reward(r1_raw, cmd.a0, cmd.a1, cfg)
        rms = rms_power(synthesize(cmd, cfg.timestep_ms, cfg.wave_dt))
        self._obs = obs
        self._done = self._k >= cfg.episode_len
        info = {
            "r1_raw": r1_raw,
            "r1": r1,
            "r2": r2,
            "features": features,
            "rms": rms,
            "frequency": cmd.frequency,
            "amplitude": cmd.amplitude,
            "clamped": cmd.clamped,
            "diverged": False,
            "trace": trace,
        }
        return StepResult(observation=obs, reward=reward, done=self._done, info=info)
