"""Twin-delayed deterministic policy gradient agent.

Actor 6 -> 64 -> 64 -> 2 with tanh output, twin critics (6+2) -> 64 -> 64 -> 1.
Both critics regress to y = r + gamma * (1 - done) * min(Q1', Q2') evaluated
at the smoothed target action; the actor and all targets update every
`policy_delay`-th update call.
"""

from __future__ import annotations

import binascii
import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .biomarkers import FEATURE_NAMES
from .errors import CorruptCheckpoint, NanGradient, VersionMismatch
from .nets import Adam, DenseNet, polyak_update

_MAGIC = b"CLDBSAGT"
_VERSION = 1

OBS_DIM = 6
ACT_DIM = 2


@dataclass(frozen=True)
class AgentParams:
    """TD3 hyperparameters; defaults sized for the 5000-step budget."""

    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2
    target_noise_clip: float = 0.5
    exploration_sigma: float = 0.1
    batch_size: int = 64
    buffer_capacity: int = 5000
    warmup_steps: int = 500
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        for name in ("target_noise_sigma", "target_noise_clip", "exploration_sigma"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


class ReplayBuffer:
    """Ring buffer of transitions; oldest entries are overwritten first."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.size = 0
        self._head = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self._head
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, rng, batch_size: int) -> np.ndarray:
        """Uniform draw without replacement within the batch."""
        if batch_size > self.size:
            raise ValueError("batch size exceeds buffer size")
        return rng.choice(self.size, size=batch_size, replace=False)

    def get(self, idx):
        return (self.obs[idx], self.action[idx], self.reward[idx],
                self.next_obs[idx], self.done[idx])

    def transition(self, i: int) -> Transition:
        """Materialize one stored record (storage itself is columnar)."""
        if not 0 <= i < self.size:
            raise IndexError(i)
        return Transition(self.obs[i].copy(), self.action[i].copy(),
                          float(self.reward[i]), self.next_obs[i].copy(),
                          bool(self.done[i]))


class TD3Agent:
    def __init__(self, params: AgentParams | None = None,
                 norm_spec_id: str = "", config_hash: str = "",
                 obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        self.params = params or AgentParams()
        self.norm_spec_id = norm_spec_id
        self.config_hash = config_hash
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.rng = np.random.default_rng(self.params.seed)

        hid = list(self.params.hidden)
        self.actor = DenseNet([obs_dim] + hid + [act_dim], "tanh", self.rng)
        self.critic1 = DenseNet([obs_dim + act_dim] + hid + [1], "linear", self.rng)
        self.critic2 = DenseNet([obs_dim + act_dim] + hid + [1], "linear", self.rng)
        self.target_actor = self.actor.copy()
        self.target_critic1 = self.critic1.copy()
        self.target_critic2 = self.critic2.copy()

        self.actor_opt = Adam(self.actor.params(), self.params.actor_lr)
        self.critic1_opt = Adam(self.critic1.params(), self.params.critic_lr)
        self.critic2_opt = Adam(self.critic2.params(), self.params.critic_lr)

        self.env_steps = 0
        self.update_calls = 0

    # ------------------------------------------------------------------ act

    def act(self, obs, explore: bool = False) -> np.ndarray:
        """Policy action in [-1, 1]^2.

        With explore=True the call counts as one environment step: uniform
        random during warmup, otherwise the deterministic action plus
        clamped Gaussian exploration noise. explore=False is pure and
        leaves the agent's random stream untouched.
        """
        if explore:
            self.env_steps += 1
            if self.env_steps <= self.params.warmup_steps:
                return self.rng.uniform(-1.0, 1.0, self.act_dim)
        a = self.actor.forward(np.asarray(obs, dtype=np.float64)[None, :])[0]
        if explore:
            a = a + self.rng.normal(0.0, self.params.exploration_sigma, self.act_dim)
            a = np.clip(a, -1.0, 1.0)
        return a

    # -------------------------------------------------------------- targets

    def critic_target(self, obs, action, reward, next_obs, done) -> np.ndarray:
        """y = r + gamma * (1 - done) * min(Q1', Q2') at the smoothed action."""
        p = self.params
        next_a = self.target_actor.forward(next_obs)
        noise = self.rng.normal(0.0, p.target_noise_sigma, next_a.shape)
        noise = np.clip(noise, -p.target_noise_clip, p.target_noise_clip)
        next_a = np.clip(next_a + noise, -1.0, 1.0)
        sa = np.concatenate([next_obs, next_a], axis=1)
        q1 = self.target_critic1.forward(sa)[:, 0]
        q2 = self.target_critic2.forward(sa)[:, 0]
        q_min = np.minimum(q1, q2)
        return reward + p.gamma * (1.0 - done) * q_min

    # --------------------------------------------------------------- update

    def update(self, buffer: ReplayBuffer, step_index: int | None = None) -> dict:
        """One gradient update of both critics, with delayed actor/targets.

        Returns loss and gradient-norm diagnostics. Raises NanGradient if a
        non-finite value shows up anywhere in the update.
        """
        p = self.params
        if buffer.size < p.batch_size:
            raise ValueError("buffer smaller than batch size")
        self.update_calls += 1
        if step_index is None:
            step_index = self.update_calls

        idx = buffer.sample_indices(self.rng, p.batch_size)
        obs, action, reward, next_obs, done = buffer.get(idx)
        y = self.critic_target(obs, action, reward, next_obs, done)[:, None]

        sa = np.concatenate([obs, action], axis=1)
        diag = {}
        for name, critic, opt in (
            ("critic1", self.critic1, self.critic1_opt),
            ("critic2", self.critic2, self.critic2_opt),
        ):
            q, cache = critic.forward(sa, want_cache=True)
            err = q - y
            loss = float(np.mean(err ** 2))
            grads, _ = critic.backward(2.0 * err / err.shape[0], cache)
            gnorm = _grad_norm(grads)
            if not np.isfinite(loss) or not np.isfinite(gnorm):
                raise NanGradient(f"{name} produced non-finite update")
            opt.step(grads)
            diag[f"{name}_loss"] = loss
            diag[f"{name}_grad_norm"] = gnorm

        diag["actor_updated"] = False
        if step_index % p.policy_delay == 0:
            a, cache_a = self.actor.forward(obs, want_cache=True)
            sa_pi = np.concatenate([obs, a], axis=1)
            q, cache_q = self.critic1.forward(sa_pi, want_cache=True)
            # maximize mean Q1: loss = -mean(q), gradient through the action input
            gout = np.full_like(q, -1.0 / q.shape[0])
            _, grad_sa = self.critic1.backward(gout, cache_q)
            grad_a = grad_sa[:, self.obs_dim:]
            actor_grads, _ = self.actor.backward(grad_a, cache_a)
            gnorm = _grad_norm(actor_grads)
            actor_loss = float(-np.mean(q))
            if not np.isfinite(actor_loss) or not np.isfinite(gnorm):
                raise NanGradient("actor produced non-finite update")
            self.actor_opt.step(actor_grads)
            polyak_update(self.target_actor, self.actor, p.tau)
            polyak_update(self.target_critic1, self.critic1, p.tau)
            polyak_update(self.target_critic2, self.critic2, p.tau)
            diag["actor_updated"] = True
            diag["actor_loss"] = actor_loss
            diag["actor_grad_norm"] = gnorm
        return diag

    # ----------------------------------------------------------- checkpoint

    def _nets(self):
        return (
            ("actor", self.actor),
            ("critic1", self.critic1),
            ("critic2", self.critic2),
            ("target_actor", self.target_actor),
            ("target_critic1", self.target_critic1),
            ("target_critic2", self.target_critic2),
        )

    def save_bytes(self) -> bytes:
        """Versioned binary checkpoint embedding the norm-spec identity."""
        arrays = []
        index = []
        for net_name, net in self._nets():
            for pi, arr in enumerate(net.params()):
                index.append({"net": net_name, "slot": pi, "shape": list(arr.shape)})
                arrays.append(np.ascontiguousarray(arr, dtype=np.float64))
        header = {
            "norm_spec_id": self.norm_spec_id,
            "config_hash": self.config_hash,
            "feature_names": list(FEATURE_NAMES),
            "agent_params": _params_dict(self.params),
            "obs_dim": self.obs_dim,
            "act_dim": self.act_dim,
            "arrays": index,
        }
        hdr = json.dumps(header, sort_keys=True).encode()
        buf = io.BytesIO()
        buf.write(_MAGIC)
        buf.write(struct.pack("<II", _VERSION, len(hdr)))
        buf.write(hdr)
        payload = b"".join(arr.tobytes() for arr in arrays)
        buf.write(struct.pack("<Q", len(payload)))
        buf.write(payload)
        body = buf.getvalue()
        return body + struct.pack("<I", binascii.crc32(body))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.save_bytes())

    @classmethod
    def load_bytes(cls, blob: bytes) -> "TD3Agent":
        if len(blob) < len(_MAGIC) + 16 or blob[: len(_MAGIC)] != _MAGIC:
            raise CorruptCheckpoint("bad magic")
        crc_stored = struct.unpack("<I", blob[-4:])[0]
        if binascii.crc32(blob[:-4]) != crc_stored:
            raise CorruptCheckpoint("checksum mismatch")
        off = len(_MAGIC)
        version, hdr_len = struct.unpack_from("<II", blob, off)
        off += 8
        if version != _VERSION:
            raise VersionMismatch(f"checkpoint version {version}, expected {_VERSION}")
        try:
            header = json.loads(blob[off:off + hdr_len].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptCheckpoint("unreadable header") from exc
        off += hdr_len
        if not header.get("norm_spec_id"):
            raise VersionMismatch("checkpoint carries no normalization-spec id")
        if tuple(header.get("feature_names", ())) != FEATURE_NAMES:
            raise VersionMismatch("checkpoint feature order differs from this build")

        params = AgentParams(**{**header["agent_params"],
                                "hidden": tuple(header["agent_params"]["hidden"])})
        agent = cls(params=params,
                    norm_spec_id=header["norm_spec_id"],
                    config_hash=header["config_hash"],
                    obs_dim=int(header["obs_dim"]),
                    act_dim=int(header["act_dim"]))
        (payload_len,) = struct.unpack_from("<Q", blob, off)
        off += 8
        payload = blob[off:off + payload_len]
        nets = dict(agent._nets())
        pos = 0
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            nbytes = int(np.prod(shape)) * 8
            arr = np.frombuffer(payload[pos:pos + nbytes], dtype=np.float64).reshape(shape)
            pos += nbytes
            target = nets[entry["net"]].params()[entry["slot"]]
            if target.shape != shape:
                raise CorruptCheckpoint(f"shape mismatch for {entry['net']}[{entry['slot']}]")
            target[...] = arr
        if pos != payload_len:
            raise CorruptCheckpoint("payload length mismatch")
        return agent

    @classmethod
    def load(cls, path) -> "TD3Agent":
        with open(path, "rb") as fh:
            return cls.load_bytes(fh.read())


def _params_dict(params: AgentParams) -> dict:
    d = asdict(params)
    d["hidden"] = list(d["hidden"])
    return d


def _grad_norm(grads) -> float:
    total = 0.0
    for g in grads:
        total += float(np.sum(np.square(g)))
    return float(np.sqrt(total))
