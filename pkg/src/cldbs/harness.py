"""Calibration, baseline, training and evaluation orchestration.

Baseline conditions: `healthy` and `pd` run stimulus-free on their
respective parameterizations, `odbs` applies the fixed open-loop command
(130 Hz, 2500 uA/cm^2) on the parkinsonian network every timestep. The
trained agent is evaluated with its deterministic policy on the same
episode seed stream so comparisons are paired.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .biomarkers import (
    NormalizationSpec,
    banded_psd,
    calibrate_normalization,
    extract_features,
)
from .env import DBSEnv, EnvConfig
from .errors import VersionMismatch
from .network import init_network, step_network
from .params import ModelParams
from .stim import normalize_command
from .td3 import AgentParams, ReplayBuffer, TD3Agent

ODBS_FREQUENCY_HZ = 130.0
ODBS_AMPLITUDE = 2500.0

BASELINE_CONDITIONS = ("healthy", "pd", "odbs")


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    n: int

    @classmethod
    def of(cls, values) -> "Stat":
        arr = np.asarray([v for v in values if np.isfinite(v)], dtype=np.float64)
        if arr.size == 0:
            return cls(float("nan"), float("nan"), 0)
        return cls(float(arr.mean()), float(arr.std()), int(arr.size))


@dataclass(frozen=True)
class WindowRecord:
    episode: int
    step: int
    r1_raw: float
    rms: float
    frequency: float
    amplitude: float
    reward: float
    r1: float
    r2: float
    diverged: bool


@dataclass(frozen=True)
class EpisodeRecord:
    index: int
    seed: int
    vgi_beta: float
    episode_return: float
    n_steps: int


@dataclass(frozen=True)
class RunReport:
    """Aggregated metrics of one evaluation condition."""

    condition: str
    sgi_power: Stat          # S_Gi 1-20 Hz band power per 100 ms window
    vgi_beta: Stat           # V_Gi 13-30 Hz band power per 1 s episode
    rms: Stat                # stimulation RMS per window
    frequency: Stat          # chosen frequency per window (Hz)
    amplitude: Stat          # chosen amplitude per window (uA/cm^2)
    episode_return: Stat
    seeds: tuple
    config_hash: str
    windows: tuple = field(repr=False)
    episodes: tuple = field(repr=False)

    def summary_row(self) -> dict:
        return {
            "condition": self.condition,
            "sgi_power_mean": self.sgi_power.mean,
            "sgi_power_std": self.sgi_power.std,
            "sgi_power_n": self.sgi_power.n,
            "vgi_beta_mean": self.vgi_beta.mean,
            "vgi_beta_std": self.vgi_beta.std,
            "vgi_beta_n": self.vgi_beta.n,
            "rms_mean": self.rms.mean,
            "rms_std": self.rms.std,
            "rms_n": self.rms.n,
            "frequency_mean": self.frequency.mean,
            "amplitude_mean": self.amplitude.mean,
            "return_mean": self.episode_return.mean,
            "return_std": self.episode_return.std,
            "n_episodes": len(self.episodes),
            "config_hash": self.config_hash,
        }


@dataclass(frozen=True)
class Calibration:
    """Feature normalization plus the r1 reward anchors.

    r1_min / r1_max are the healthy and parkinsonian no-stimulus mean
    band powers, anchoring the normalized suppression reward to the
    clinically meaningful range.
    """

    norm_spec: NormalizationSpec
    r1_min: float
    r1_max: float
    config_hash: str

    @property
    def provenance(self) -> str:
        return self.norm_spec.provenance

    def to_dict(self) -> dict:
        return {
            "norm_spec": self.norm_spec.to_dict(),
            "r1_norm": {"min": self.r1_min, "max": self.r1_max},
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Calibration":
        return cls(
            norm_spec=NormalizationSpec.from_dict(d["norm_spec"]),
            r1_min=float(d["r1_norm"]["min"]),
            r1_max=float(d["r1_norm"]["max"]),
            config_hash=d["config_hash"],
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Calibration":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _episode_seeds(seed: int, episodes: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(episodes)


def converged(moving_avg, patience: int, tol: float) -> bool:
    """True when the last `patience` moving-average values span < tol relative."""
    if len(moving_avg) < patience:
        return False
    seg = moving_avg[-patience:]
    scale = abs(float(np.mean(seg)))
    return scale > 0.0 and (max(seg) - min(seg)) < tol * scale


def calibrate(base_params: ModelParams, episodes_each: int = 3, seed: int = 0,
              settle_ms: float = 200.0, timestep_ms: float = 100.0,
              windows_per_episode: int = 10) -> Calibration:
    """Run stimulus-free healthy and parkinsonian episodes, fit normalization.

    Needs episodes_each * windows_per_episode * 2 >= 20 feature vectors.
    """
    features = []
    r1_by_condition = {}
    for condition in ("healthy", "parkinsonian"):
        model = base_params.with_condition(condition)
        r1s = []
        for ep, ep_seed in enumerate(_episode_seeds(seed, episodes_each)):
            state = init_network(model, ep_seed)
            state, _ = step_network(state, model, None, settle_ms)
            for _ in range(windows_per_episode):
                state, trace = step_network(state, model, None, timestep_ms)
                features.append(extract_features(trace))
                r1s.append(banded_psd(trace.s_gi, trace.dt_sample, 1.0, 20.0))
        r1_by_condition[condition] = float(np.mean(r1s))
    provenance = f"cal-{base_params.digest()}-s{seed}-e{episodes_each}"
    norm_spec = calibrate_normalization(features, provenance=provenance)
    return Calibration(
        norm_spec=norm_spec,
        r1_min=r1_by_condition["healthy"],
        r1_max=r1_by_condition["parkinsonian"],
        config_hash=base_params.digest(),
    )


def make_env_config(base_params: ModelParams, calibration: Calibration,
                    condition: str = "parkinsonian", **overrides) -> EnvConfig:
    kwargs = {
        "model": base_params.with_condition(condition),
        "norm_spec": calibration.norm_spec,
        "r1_norm": (calibration.r1_min, calibration.r1_max),
    }
    kwargs.update(overrides)
    return EnvConfig(**kwargs)


def config_hash(cfg: EnvConfig, agent_params: AgentParams | None = None) -> str:
    payload = {
        "model": cfg.model.digest(),
        "condition": cfg.condition,
        "r1_norm": list(cfg.r1_norm),
        "theta": cfg.theta,
        "epsilon": cfg.epsilon,
        "timestep_ms": cfg.timestep_ms,
        "episode_len": cfg.episode_len,
        "settle_ms": cfg.settle_ms,
        "norm_spec": cfg.norm_spec.to_dict(),
    }
    if agent_params is not None:
        d = dataclasses.asdict(agent_params)
        d["hidden"] = list(d["hidden"])
        payload["agent"] = d
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def run_policy(env: DBSEnv, policy, episodes: int, seed: int,
               trace_sink=None, label: str = "", sgi_sink=None) -> tuple[list, list]:
    """Roll `episodes` episodes of `policy(obs)` and collect per-window records.

    The V_Gi beta power is computed once per full episode on the
    concatenated membrane traces. When given, `sgi_sink` receives
    (episode, mean S_Gi trace) for the first episode, for plotting.
    Returns (window_records, episode_records).
    """
    windows = []
    eps = []
    for ep, ep_seed in enumerate(_episode_seeds(seed, episodes)):
        obs = env.reset(ep_seed)
        v_gi_parts = []
        sgi_parts = []
        ep_return = 0.0
        steps = 0
        while not env.done:
            a = policy(obs)
            result = env.step(float(a[0]), float(a[1]))
            info = result.info
            steps += 1
            ep_return += result.reward
            if info.get("diverged"):
                windows.append(WindowRecord(ep, steps, float("nan"), float("nan"),
                                            info["frequency"], info["amplitude"],
                                            result.reward, float("nan"), float("nan"),
                                            True))
            else:
                v_gi_parts.append(info["trace"].v_gi)
                if sgi_sink is not None and ep == 0:
                    sgi_parts.append(info["trace"].s_gi_mean)
                windows.append(WindowRecord(
                    ep, steps, info["r1_raw"], info["rms"],
                    info["frequency"], info["amplitude"],
                    result.reward, info["r1"], info["r2"], False,
                ))
            if trace_sink is not None:
                rec = {
                    "label": label, "episode": ep, "step": steps,
                    "frequency": info["frequency"], "amplitude": info["amplitude"],
                    "reward": result.reward, "diverged": bool(info.get("diverged")),
                }
                if not info.get("diverged"):
                    rec.update({
                        "r1_raw": info["r1_raw"], "r1": info["r1"], "r2": info["r2"],
                        "rms": info["rms"],
                        "features": info["features"].as_array().tolist(),
                    })
                trace_sink.write(json.dumps(rec) + "\n")
            obs = result.observation
        if steps == env.config.episode_len and v_gi_parts:
            v_gi = np.concatenate(v_gi_parts, axis=1)
            beta = banded_psd(v_gi, env.config.model.dt_sample, *env.config.beta_band)
        else:
            beta = float("nan")  # aborted episode, no full-second trace
        if sgi_sink is not None and ep == 0 and sgi_parts:
            sgi_sink.append((ep, np.concatenate(sgi_parts)))
        eps.append(EpisodeRecord(ep, int(ep_seed), beta, ep_return, steps))
    return windows, eps


def summarize(condition: str, windows, episodes, seed: int, cfg_hash: str) -> RunReport:
    return RunReport(
        condition=condition,
        sgi_power=Stat.of([w.r1_raw for w in windows]),
        vgi_beta=Stat.of([e.vgi_beta for e in episodes]),
        rms=Stat.of([w.rms for w in windows]),
        frequency=Stat.of([w.frequency for w in windows]),
        amplitude=Stat.of([w.amplitude for w in windows]),
        episode_return=Stat.of([e.episode_return for e in episodes]),
        seeds=(seed,),
        config_hash=cfg_hash,
        windows=tuple(windows),
        episodes=tuple(episodes),
    )


def baseline_policy(condition: str):
    if condition == "odbs":
        a0, a1 = normalize_command(ODBS_FREQUENCY_HZ, ODBS_AMPLITUDE)
        fixed = np.array([a0, a1])
    elif condition in ("healthy", "pd"):
        fixed = np.array([-1.0, -1.0])  # zero stimulus
    else:
        raise ValueError(f"unknown baseline condition {condition!r}")
    return lambda obs: fixed


def run_baseline(condition: str, base_params: ModelParams, calibration: Calibration,
                 episodes: int = 30, seed: int = 0, trace_sink=None,
                 sgi_sink=None) -> RunReport:
    """Fixed-policy reference run; see module docstring for the conditions."""
    model_condition = "healthy" if condition == "healthy" else "parkinsonian"
    cfg = make_env_config(base_params, calibration, model_condition)
    env = DBSEnv(cfg)
    windows, eps = run_policy(env, baseline_policy(condition), episodes, seed,
                              trace_sink=trace_sink, label=condition,
                              sgi_sink=sgi_sink)
    return summarize(condition, windows, eps, seed, config_hash(cfg))


@dataclass
class TrainResult:
    agent: TD3Agent
    returns: list
    moving_avg: list
    env_steps: int
    converged_episode: int | None
    seed: int


def train(base_params: ModelParams, calibration: Calibration,
          agent_params: AgentParams | None = None, max_steps: int = 5000,
          seed: int = 0, ma_window: int = 20, convergence_patience: int = 50,
          convergence_tol: float = 0.01, progress=None) -> TrainResult:
    """Train on the parkinsonian network for at most `max_steps` env steps.

    Stops early once the moving average (window `ma_window`) of episode
    return has stayed within `convergence_tol` relative span for
    `convergence_patience` consecutive episodes. One master seed drives
    agent initialization, exploration and the episode reset stream.
    """
    agent_params = agent_params or AgentParams()
    agent_params = dataclasses.replace(agent_params, seed=seed)
    cfg = make_env_config(base_params, calibration, "parkinsonian")
    cfg_hash = config_hash(cfg, agent_params)
    env = DBSEnv(cfg)
    agent = TD3Agent(params=agent_params,
                     norm_spec_id=calibration.provenance,
                     config_hash=cfg_hash)
    buffer = ReplayBuffer(agent_params.buffer_capacity)

    returns: list[float] = []
    moving_avg: list[float] = []
    steps = 0
    converged_at = None
    seeds = _episode_seeds(seed, max(1, (max_steps + cfg.episode_len - 1) // cfg.episode_len))
    episode = 0
    while steps < max_steps:
        obs = env.reset(seeds[episode])
        ep_return = 0.0
        while not env.done:
            a = agent.act(obs, explore=True)
            result = env.step(float(a[0]), float(a[1]))
            buffer.add(obs, a, result.reward, result.observation, result.done)
            steps += 1
            ep_return += result.reward
            obs = result.observation
            if agent.env_steps > agent_params.warmup_steps and buffer.size >= agent_params.batch_size:
                agent.update(buffer)
        returns.append(ep_return)
        if len(returns) >= ma_window:
            moving_avg.append(float(np.mean(returns[-ma_window:])))
        if converged(moving_avg, convergence_patience, convergence_tol):
            converged_at = episode
            if progress:
                progress(f"converged at episode {episode} ({steps} steps)")
            break
        episode += 1
        if progress and episode % 25 == 0:
            ma = moving_avg[-1] if moving_avg else float("nan")
            progress(f"episode {episode}, steps {steps}, moving avg return {ma:.4f}")
    return TrainResult(agent=agent, returns=returns, moving_avg=moving_avg,
                       env_steps=steps, converged_episode=converged_at, seed=seed)


def evaluate(agent: TD3Agent, base_params: ModelParams, calibration: Calibration,
             episodes: int = 30, seed: int = 0, trace_sink=None,
             condition_label: str = "td3", sgi_sink=None) -> RunReport:
    """Deterministic-policy evaluation on the parkinsonian network."""
    if agent.norm_spec_id != calibration.provenance:
        raise VersionMismatch(
            f"checkpoint calibrated against {agent.norm_spec_id!r}, "
            f"got {calibration.provenance!r}"
        )
    cfg = make_env_config(base_params, calibration, "parkinsonian")
    env = DBSEnv(cfg)
    policy = lambda obs: agent.act(obs, explore=False)  # noqa: E731
    windows, eps = run_policy(env, policy, episodes, seed,
                              trace_sink=trace_sink, label=condition_label,
                              sgi_sink=sgi_sink)
    return summarize(condition_label, windows, eps, seed, config_hash(cfg, agent.params))


def train_multi_seed(base_params: ModelParams, calibration: Calibration,
                     agent_params: AgentParams | None = None,
                     seeds=(0, 1, 2), max_steps: int = 5000,
                     validation_episodes: int = 5, validation_seed: int = 990,
                     progress=None) -> tuple[TrainResult, list[TrainResult]]:
    """Train one agent per seed and pick the best by validation return."""
    results = []
    for s in seeds:
        if progress:
            progress(f"training seed {s}")
        results.append(train(base_params, calibration, agent_params,
                             max_steps=max_steps, seed=s, progress=progress))
    best = None
    best_ret = -np.inf
    for res in results:
        rep = evaluate(res.agent, base_params, calibration,
                       episodes=validation_episodes, seed=validation_seed)
        if progress:
            progress(f"seed {res.seed}: validation return {rep.episode_return.mean:.4f}")
        if rep.episode_return.mean > best_ret:
            best_ret = rep.episode_return.mean
            best = res
    return best, results
