# policy.py
# observation/action encoding, the actor-critic MLP, PPO update and the
# AMTP checkpoint format

import copy
import json
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn
from torch.distributions import Normal

from .dynamics import BodyRateCommand, quat_to_rotation
from .errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    CorruptCheckpointError,
    TrainingDivergedError,
)

logger = logging.getLogger(__name__)

OBS_DIM = 30
ACT_DIM = 4
POSITION_SCALE = 10.0
VELOCITY_SCALE = 20.0
LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0

CHECKPOINT_MAGIC = b"AMTP1\n"
CHECKPOINT_FAMILY = b"AMTP"


class PpoConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    clip: float = Field(0.2, gt=0, lt=1)
    gamma: float = Field(0.99, gt=0, le=1)
    lam: float = Field(0.95, ge=0, le=1)
    lr: float = Field(3e-4, gt=0)
    epochs: int = Field(10, ge=1)
    minibatch_size: int = Field(2048, ge=1)
    entropy_coef: float = Field(0.0, ge=0)
    value_coef: float = Field(0.5, ge=0)
    steps_per_iteration: int = Field(250, ge=1)
    hidden: int = Field(128, ge=1)
    init_log_std: float = Field(-0.5, ge=LOG_STD_MIN, le=LOG_STD_MAX)


def build_observation(state, waypoint, gamma):
    """o = [p, R(q), v, W, gamma - p], normalized; works on agent stacks too."""
    corners = np.asarray(getattr(waypoint, "corners", waypoint), dtype=float)
    p = np.asarray(state.p, dtype=float)
    lead = p.shape[:-1]
    R = quat_to_rotation(np.asarray(state.q, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    obs = np.concatenate(
        [
            p / POSITION_SCALE,
            R.reshape(lead + (9,)),
            np.asarray(state.v, dtype=float) / VELOCITY_SCALE,
            np.broadcast_to(corners, lead + (4, 3)).reshape(lead + (12,))
            / POSITION_SCALE,
            (gamma - p) / POSITION_SCALE,
        ],
        axis=-1,
    )
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite values")
    return obs


def action_decode(a, params):
    a = np.clip(np.asarray(a, dtype=float), -1.0, 1.0)
    f_T = 4 * params.f_min + (a[..., 0] + 1.0) / 2.0 * 4 * (params.f_max - params.f_min)
    return BodyRateCommand(f_T=f_T, w_cmd=a[..., 1:4] * params.w_max)


def _mlp(obs_dim, hidden, out_dim):
    return nn.Sequential(
        nn.Linear(obs_dim, hidden),
        nn.Tanh(),
        nn.Linear(hidden, hidden),
        nn.Tanh(),
        nn.Linear(hidden, out_dim),
    )


class ActorCritic(nn.Module):
    """Two-hidden-layer tanh policy with state-independent log-std and a
    separate value network of the same shape."""

    def __init__(self, obs_dim=OBS_DIM, hidden=128, act_dim=ACT_DIM, init_log_std=-0.5):
        super().__init__()
        self.obs_dim = obs_dim
        self.hidden = hidden
        self.act_dim = act_dim
        self.policy = _mlp(obs_dim, hidden, act_dim)
        self.log_std = nn.Parameter(torch.full((act_dim,), float(init_log_std)))
        self.value = _mlp(obs_dim, hidden, 1)

    @property
    def dtype(self):
        return self.log_std.dtype

    def forward(self, obs):
        mean = torch.tanh(self.policy(obs))
        log_std = torch.clamp(self.log_std, LOG_STD_MIN, LOG_STD_MAX)
        std = torch.exp(log_std).expand_as(mean)
        value = self.value(obs).squeeze(-1)
        return mean, std, value

    def distribution(self, obs):
        mean, std, value = self(obs)
        return Normal(mean, std), value

    @torch.no_grad()
    def act(self, obs, deterministic=False, generator=None):
        """Sample (or take the mean) for a batch of numpy observations.

        Returns numpy (actions, log_probs, values); actions are unclamped.
        """
        obs_t = torch.as_tensor(np.asarray(obs), dtype=self.dtype)
        mean, std, value = self(obs_t)
        if deterministic:
            action = mean
        else:
            action = torch.normal(mean, std, generator=generator)
        log_prob = Normal(mean, std).log_prob(action).sum(-1)
        return (
            action.numpy().astype(float),
            log_prob.numpy().astype(float),
            value.numpy().astype(float),
        )

    @torch.no_grad()
    def predict_value(self, obs):
        obs_t = torch.as_tensor(np.asarray(obs), dtype=self.dtype)
        return self.value(obs_t).squeeze(-1).numpy().astype(float)

    def clamp_log_std(self):
        with torch.no_grad():
            self.log_std.clamp_(LOG_STD_MIN, LOG_STD_MAX)

    def is_finite(self):
        return all(bool(torch.all(torch.isfinite(p))) for p in self.parameters())


# Rollout bookkeeping


def gae_advantages(
    rewards, values, terminated, truncated, final_values, last_values, gamma, lam
):
    """Backward GAE over time-major arrays of shape (T,) or (T, n_agents).

    Terminal steps bootstrap with zero; truncated steps bootstrap with the
    value of the state the episode was cut at and do not chain further.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    terminated = np.asarray(terminated, dtype=bool)
    truncated = np.asarray(truncated, dtype=bool)
    final_values = np.asarray(final_values, dtype=float)
    advantages = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0])
    next_value = np.asarray(last_values, dtype=float) * np.ones_like(rewards[0])
    for t in reversed(range(len(rewards))):
        bootstrap = np.where(
            terminated[t], 0.0, np.where(truncated[t], final_values[t], next_value)
        )
        delta = rewards[t] + gamma * bootstrap - values[t]
        ended = terminated[t] | truncated[t]
        carry = delta + gamma * lam * np.where(ended, 0.0, carry)
        advantages[t] = carry
        next_value = values[t]
    return advantages, advantages + values


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_values: np.ndarray
    agent_ids: np.ndarray
    last_values: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def n_steps(self):
        return int(np.prod(self.rewards.shape))

    def compute_advantages(self, gamma, lam):
        self.advantages, self.returns = gae_advantages(
            self.rewards,
            self.values,
            self.terminated,
            self.truncated,
            self.final_values,
            self.last_values,
            gamma,
            lam,
        )
        return self

    def flat(self, dtype=torch.float32):
        if self.advantages is None:
            raise ValueError("advantages must be computed before the update")
        n = self.n_steps
        return {
            "obs": torch.as_tensor(self.obs.reshape(n, -1), dtype=dtype),
            "actions": torch.as_tensor(self.actions.reshape(n, -1), dtype=dtype),
            "log_probs": torch.as_tensor(self.log_probs.reshape(n), dtype=dtype),
            "advantages": torch.as_tensor(self.advantages.reshape(n), dtype=dtype),
            "returns": torch.as_tensor(self.returns.reshape(n), dtype=dtype),
        }


def normalize_advantages(adv):
    return (adv - adv.mean()) / (adv.std(unbiased=False) + 1e-8)


def clipped_surrogate(ratio, advantages, clip):
    """-E[min(rho A, clip(rho, 1 - eps, 1 + eps) A)]"""
    clipped = torch.clamp(ratio, 1.0 - clip, 1.0 + clip)
    return -torch.min(ratio * advantages, clipped * advantages).mean()


def ppo_loss(model, obs, actions, old_log_probs, advantages, returns, cfg, clip=None):
    clip = cfg.clip if clip is None else clip
    dist, value = model.distribution(obs)
    log_probs = dist.log_prob(actions).sum(-1)
    ratio = torch.exp(log_probs - old_log_probs)
    policy_loss = clipped_surrogate(ratio, advantages, clip)
    value_loss = ((value - returns) ** 2).mean()
    entropy = dist.entropy().sum(-1).mean()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
    with torch.no_grad():
        stats = {
            "policy_loss": float(policy_loss),
            "value_loss": float(value_loss),
            "entropy": float(entropy),
            "approx_kl": float((old_log_probs - log_probs).mean()),
            "clip_fraction": float(((ratio - 1.0).abs() > clip).float().mean()),
        }
    return loss, stats


class PpoLearner:
    """Owns the optimizer and performs the epoch/minibatch PPO update."""

    def __init__(self, model, cfg, seed=0):
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        self.generator = torch.Generator().manual_seed(int(seed))

    def update(self, batch):
        cfg = self.cfg
        data = batch.flat(dtype=self.model.dtype)
        data["advantages"] = normalize_advantages(data["advantages"])
        n = len(data["advantages"])
        snapshot = copy.deepcopy(self.model.state_dict())
        totals = {}
        count = 0
        for epoch in range(cfg.epochs):
            order = torch.randperm(n, generator=self.generator)
            for first in range(0, n, cfg.minibatch_size):
                idx = order[first:first + cfg.minibatch_size]
                loss, stats = ppo_loss(
                    self.model,
                    data["obs"][idx],
                    data["actions"][idx],
                    data["log_probs"][idx],
                    data["advantages"][idx],
                    data["returns"][idx],
                    cfg,
                )
                if not torch.isfinite(loss):
                    self.model.load_state_dict(snapshot)
                    diagnostics = dict(
                        stats, epoch=epoch, minibatch=first // cfg.minibatch_size
                    )
                    raise TrainingDivergedError(
                        f"non-finite PPO loss {float(loss)}", diagnostics
                    )
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                self.model.clamp_log_std()
                for key, value in stats.items():
                    totals[key] = totals.get(key, 0.0) + value
                count += 1
        if not self.model.is_finite():
            self.model.load_state_dict(snapshot)
            raise TrainingDivergedError(
                "non-finite network weights after update", totals
            )
        return {key: value / count for key, value in totals.items()}


# Checkpoints
#
# b"AMTP1\n", a text header ending in "end_header\n", then every parameter
# as little-endian float32 in PARAMETER_ORDER (Linear weights row-major,
# shape (out, in)).

PARAMETER_ORDER = (
    "policy.0.weight",
    "policy.0.bias",
    "policy.2.weight",
    "policy.2.bias",
    "policy.4.weight",
    "policy.4.bias",
    "log_std",
    "value.0.weight",
    "value.0.bias",
    "value.2.weight",
    "value.2.bias",
    "value.4.weight",
    "value.4.bias",
)


def save_checkpoint(model, path, meta=None):
    lines = [
        f"layers {model.obs_dim} {model.hidden} {model.hidden} {model.act_dim}",
        f"log_std {model.act_dim}",
    ]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {json.dumps(value)}")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("utf-8")

    params = dict(model.named_parameters())
    payload = b"".join(
        params[name].detach().cpu().numpy().astype("<f4").tobytes()
        for name in PARAMETER_ORDER
    )
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + header + payload)
    logger.info("checkpoint written to %s", path)


def _parse_header(blob, path):
    end = blob.find(b"end_header\n")
    if end < 0:
        raise CorruptCheckpointError(f"{path}: header is not terminated")
    try:
        text = blob[len(CHECKPOINT_MAGIC):end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    dims, meta = None, {}
    try:
        for line in text.splitlines():
            key, _, rest = line.partition(" ")
            if key == "layers":
                dims = [int(x) for x in rest.split()]
            elif key == "meta":
                name, _, value = rest.partition(" ")
                meta[name] = json.loads(value)
    except ValueError as exc:
        raise CorruptCheckpointError(f"{path}: malformed header line") from exc
    if dims is None or len(dims) != 4:
        raise CorruptCheckpointError(f"{path}: missing layer dimensions")
    return dims, meta, end + len(b"end_header\n")


def load_checkpoint(path, hidden=None):
    """Returns (model, meta). `hidden` is the width the caller expects."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        if blob.startswith(CHECKPOINT_FAMILY):
            raise CheckpointVersionError(f"{path}: unsupported checkpoint version")
        raise CorruptCheckpointError(f"{path}: not a checkpoint file")
    dims, meta, offset = _parse_header(blob, path)
    obs_dim, h1, h2, act_dim = dims
    if h1 != h2:
        raise CorruptCheckpointError(f"{path}: unequal hidden widths {h1}, {h2}")
    if hidden is not None and h1 != hidden:
        raise CheckpointShapeError(f"{path}: hidden width {h1}, expected {hidden}")
    if obs_dim != OBS_DIM or act_dim != ACT_DIM:
        raise CheckpointShapeError(
            f"{path}: network maps {obs_dim} -> {act_dim}, "
            f"expected {OBS_DIM} -> {ACT_DIM}"
        )

    model = ActorCritic(obs_dim, h1, act_dim)
    params = dict(model.named_parameters())
    expected = sum(params[name].numel() for name in PARAMETER_ORDER) * 4
    payload = blob[offset:]
    if len(payload) != expected:
        raise CorruptCheckpointError(
            f"{path}: {len(payload)} weight bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4")
    if not np.all(np.isfinite(values)):
        raise CorruptCheckpointError(f"{path}: non-finite weights")
    cursor = 0
    with torch.no_grad():
        for name in PARAMETER_ORDER:
            param = params[name]
            chunk = values[cursor:cursor + param.numel()]
            param.copy_(torch.from_numpy(chunk.astype(np.float32).reshape(param.shape)))
            cursor += param.numel()
    return model, meta

