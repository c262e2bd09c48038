"""Soft actor-critic agents with twin Mixed-Attention critics, target networks and
automatic temperature tuning, for centralized training with decentralized actors."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, ParamStore, Tensor, adam_step, backward, no_grad
from .nets import MLP, build_net

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
TANH_CLAMP = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class DivergenceError(RuntimeError):
    pass


@dataclass
class SacConfig:
    gamma: float = 0.95
    tau: float = 0.005
    lr_critic: float = 5e-5
    lr_actor: float = 5e-6
    lr_alpha: float = 3e-3
    alpha_init: float = math.log(0.01)  # stored as log(alpha)
    hidden: int = 64
    critic_kind: str = "mixed"
    batch_size: int = 256
    buffer_size: int = 100_000
    divergence_limit: float = 1e6


class ReplayBuffer:
    """Fixed-capacity FIFO of named arrays; every field shares one write cursor."""

    def __init__(self, capacity: int, shapes: dict):
        self.capacity = int(capacity)
        self.data = {k: np.zeros((self.capacity,) + tuple(s)) for k, s in shapes.items()}
        self.size = 0
        self.ptr = 0

    def add(self, **rec) -> None:
        missing = set(self.data) ^ set(rec)
        if missing:
            raise KeyError(f"replay record fields mismatch: {sorted(missing)}")
        for k, v in rec.items():
            self.data[k][self.ptr] = v
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, fewer than the batch size {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return {k: v[idx] for k, v in self.data.items()}

    def __len__(self) -> int:
        return self.size


class GaussianActor:
    """Tanh-squashed diagonal Gaussian policy over [-1, 1]^d."""

    def __init__(self, store: ParamStore, name: str, obs_dim: int, act_dim: int, rng: np.random.Generator,
                 hidden: int = 64):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.net = MLP(store, name, [obs_dim, hidden, hidden, 2 * act_dim], rng, act="tanh", out_scale=1e-3)

    def dist(self, obs: Tensor) -> tuple:
        out = self.net(obs)
        d = self.act_dim
        mean = out[:, :d]
        raw = ad.tanh(out[:, d:])
        # affine map of tanh keeps log-std inside [LOG_STD_MIN, LOG_STD_MAX]
        log_std = ad.add(ad.mul(raw, 0.5 * (LOG_STD_MAX - LOG_STD_MIN)), 0.5 * (LOG_STD_MAX + LOG_STD_MIN))
        return mean, log_std

    def sample(self, obs: Tensor, noise: np.ndarray) -> tuple:
        """Reparameterized squashed sample and its log-density, both differentiable."""
        mean, log_std = self.dist(obs)
        std = ad.exp(log_std)
        pre = ad.gaussian_sample_reparam(mean, std, noise)
        act = ad.tanh(pre)
        gauss = ad.sub(ad.mul(noise * noise, -0.5), ad.add(log_std, HALF_LOG_2PI))
        squash = ad.log(ad.sub(1.0, ad.mul(act, act)), floor=TANH_CLAMP)
        logp = ad.tsum(ad.sub(gauss, squash), axis=1, keepdims=True)
        return act, logp

    def deterministic(self, obs: Tensor) -> Tensor:
        mean, _ = self.dist(obs)
        return ad.tanh(mean)


def copy_store(src: ParamStore) -> ParamStore:
    dst = ParamStore()
    for name, t in src.items():
        dst.add(name, t.data.copy())
    return dst


def soft_update(target: ParamStore, live: ParamStore, tau: float) -> None:
    if not 0.0 < tau <= 1.0:
        raise ValueError("tau must lie in (0, 1]")
    for name, t in target.items():
        t.data = tau * live[name].data + (1.0 - tau) * t.data


class SacAgent:
    """One actor, twin critics (plus targets) and a temperature.

    ``critic_in`` is the width of the critic's state input and ``joint_dim`` the
    width of the action vector the critic sees; ``own_slice`` locates this
    agent's action inside that vector.
    """

    def __init__(self, agent_id: int, obs_dim: int, act_dim: int, critic_in: int, joint_dim: int,
                 own_slice: slice, cfg: SacConfig, seed: int):
        self.id = agent_id
        self.cfg = cfg
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.critic_in, self.joint_dim, self.own = critic_in, joint_dim, own_slice
        rng = np.random.default_rng(seed)
        self.actor_store = ParamStore()
        self.actor = GaussianActor(self.actor_store, "actor", obs_dim, act_dim, rng, cfg.hidden)
        self.critic_store = ParamStore()
        n_in = critic_in + joint_dim
        self.q1 = build_net(cfg.critic_kind, self.critic_store, "q1", n_in, 1, rng, hidden=cfg.hidden)
        self.q2 = build_net(cfg.critic_kind, self.critic_store, "q2", n_in, 1, rng, hidden=cfg.hidden)
        self.target_store = ParamStore()
        self.tq1 = build_net(cfg.critic_kind, self.target_store, "q1", n_in, 1, rng, hidden=cfg.hidden)
        self.tq2 = build_net(cfg.critic_kind, self.target_store, "q2", n_in, 1, rng, hidden=cfg.hidden)
        self.target_store.load_values(self.critic_store)
        self.alpha_store = ParamStore()
        self.log_alpha = self.alpha_store.add("log_alpha", np.array([cfg.alpha_init]))
        self.target_entropy = -float(act_dim)
        self.opt_actor = AdamState(self.actor_store, cfg.lr_actor)
        self.opt_critic = AdamState(self.critic_store, cfg.lr_critic)
        self.opt_alpha = AdamState(self.alpha_store, cfg.lr_alpha)
        self.last = {"critic_loss": float("nan"), "actor_loss": float("nan"), "alpha_loss": float("nan")}

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.data[0]))

    # ------------------------------------------------------------ acting

    def act(self, obs: np.ndarray, rng: Optional[np.random.Generator] = None, explore: bool = True,
            noise: Optional[np.ndarray] = None) -> np.ndarray:
        """Squashed action in [-1, 1]^d for one observation."""
        with no_grad():
            x = Tensor(np.asarray(obs, dtype=float).reshape(1, -1))
            if not explore:
                return self.actor.deterministic(x).data[0].copy()
            if noise is None:
                noise = rng.standard_normal((1, self.act_dim))
            a, _ = self.actor.sample(x, np.asarray(noise, dtype=float).reshape(1, -1))
        return a.data[0].copy()

    def sample_batch(self, obs: np.ndarray, rng: np.random.Generator) -> tuple:
        """No-grad squashed samples and log-densities for a batch of observations."""
        with no_grad():
            a, lp = self.actor.sample(Tensor(obs), rng.standard_normal((obs.shape[0], self.act_dim)))
        return a.data, lp.data

    # ------------------------------------------------------------ losses

    def q_values(self, state, joint, target: bool = False) -> tuple:
        x = ad.concat([ad.as_tensor(state), ad.as_tensor(joint)], axis=1)
        n1, n2 = (self.tq1, self.tq2) if target else (self.q1, self.q2)
        return n1(x), n2(x)

    def td_target(self, reward: np.ndarray, done: np.ndarray, next_state: np.ndarray,
                  next_joint: np.ndarray, next_logp: np.ndarray) -> np.ndarray:
        with no_grad():
            t1, t2 = self.q_values(next_state, next_joint, target=True)
            qmin = np.minimum(t1.data, t2.data)
        return reward.reshape(-1, 1) + self.cfg.gamma * (1.0 - done.reshape(-1, 1)) * (
            qmin - self.alpha * next_logp.reshape(-1, 1))

    def critic_loss(self, state: np.ndarray, joint: np.ndarray, y: np.ndarray) -> Tensor:
        q1, q2 = self.q_values(state, joint)
        yt = Tensor(y)
        d1 = ad.sub(q1, yt)
        d2 = ad.sub(q2, yt)
        return ad.add(ad.mul(ad.mean(ad.mul(d1, d1)), 0.5), ad.mul(ad.mean(ad.mul(d2, d2)), 0.5))

    def actor_loss(self, obs: np.ndarray, state: np.ndarray, joint: np.ndarray, noise: np.ndarray) -> tuple:
        """Loss with this agent's slot replaced by a fresh reparameterized sample."""
        act, logp = self.actor.sample(Tensor(obs), noise)
        before = joint[:, :self.own.start]
        after = joint[:, self.own.stop:]
        parts = [p for p in (Tensor(before) if before.shape[1] else None, act,
                             Tensor(after) if after.shape[1] else None) if p is not None]
        j = ad.concat(parts, axis=1) if len(parts) > 1 else act
        q1, q2 = self.q_values(state, j)
        qmin = ad.minimum(q1, q2)
        loss = ad.mean(ad.sub(ad.mul(logp, self.alpha), qmin))
        return loss, logp

    def alpha_loss(self, logp: np.ndarray) -> Tensor:
        alpha = ad.exp(self.log_alpha)
        return ad.mean(ad.mul(ad.mul(alpha, -1.0), Tensor(logp + self.target_entropy)))

    # ------------------------------------------------------------ update

    def update(self, obs, state, joint, reward, done, next_state, next_joint, next_logp,
               rng: np.random.Generator) -> dict:
        y = self.td_target(reward, done, next_state, next_joint, next_logp)
        closs = self.critic_loss(state, joint, y)
        backward(closs)
        adam_step(self.critic_store, self.opt_critic)

        noise = rng.standard_normal((obs.shape[0], self.act_dim))
        aloss, logp = self.actor_loss(obs, state, joint, noise)
        logp_val = logp.data.copy()
        backward(aloss)
        adam_step(self.actor_store, self.opt_actor)
        self.critic_store.zero_grad()

        lloss = self.alpha_loss(logp_val)
        backward(lloss)
        adam_step(self.alpha_store, self.opt_alpha)

        soft_update(self.target_store, self.critic_store, self.cfg.tau)
        self.last = {"critic_loss": closs.item(), "actor_loss": aloss.item(), "alpha_loss": lloss.item()}
        for k, v in self.last.items():
            if not np.isfinite(v) or abs(v) > self.cfg.divergence_limit:
                raise DivergenceError(f"agent {self.id}: {k}={v} exceeded {self.cfg.divergence_limit}")
        return self.last

    # ------------------------------------------------------------ checkpoints

    def to_dict(self) -> dict:
        return {"id": self.id, "actor": self.actor_store.to_dict(), "critic": self.critic_store.to_dict(),
                "target": self.target_store.to_dict(), "alpha": self.alpha_store.to_dict()}

    def load_dict(self, d: dict) -> None:
        self.actor_store.assign_from(d["actor"])
        self.critic_store.assign_from(d["critic"])
        self.target_store.assign_from(d["target"])
        self.alpha_store.assign_from(d["alpha"])


# ---------------------------------------------------------------- single-agent loop

def train_single(env, agent: SacAgent, steps: int, seed: int = 0, warmup: int = 100,
                 batch_size: Optional[int] = None) -> list:
    """Plain SAC loop for a single agent whose critic sees its own observation.

    ``env`` needs ``reset(rng) -> obs`` and ``step(action) -> (obs, reward, done)``
    with actions in [-1, 1]^d.  Returns the list of finished episode returns.
    """
    rng = np.random.default_rng(seed)
    batch = batch_size or agent.cfg.batch_size
    buf = ReplayBuffer(agent.cfg.buffer_size, {"obs": (agent.obs_dim,), "act": (agent.act_dim,), "rew": (),
                                               "next_obs": (agent.obs_dim,), "done": ()})
    obs = env.reset(rng)
    returns, ret = [], 0.0
    for t in range(steps):
        if t < warmup:
            a = rng.uniform(-1.0, 1.0, agent.act_dim)
        else:
            a = agent.act(obs, rng)
        nxt, r, done = env.step(a)
        buf.add(obs=obs, act=a, rew=r, next_obs=nxt, done=float(done))
        ret += r
        if done:
            returns.append(ret)
            ret = 0.0
            obs = env.reset(rng)
        else:
            obs = nxt
        if len(buf) >= batch and t >= warmup:
            b = buf.sample(batch, rng)
            na, nlp = agent.sample_batch(b["next_obs"], rng)
            agent.update(b["obs"], b["obs"], b["act"], b["rew"], b["done"], b["next_obs"], na, nlp, rng)
    return returns
