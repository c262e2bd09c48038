"""Joint training of the SAC agents and WoLF bidders, evaluation rollouts and the
random-policy baseline."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .env import (BIDDERS, ELECTRIC, HEAT, SAC_MG_AGENTS, SES, GLOBAL_SLOTS,
                  MultiMicrogridEnv, mg_of)
from .masac import DivergenceError, ReplayBuffer, SacAgent, SacConfig
from .wolfphc import N_BANDS, N_RESIDUAL_BINS, WolfAgent, epsilon_schedule, state_index

CURVE_COLUMNS = ["episode", "agent_id", "return", "alpha", "critic_loss", "actor_loss"]


@dataclass
class TrainConfig:
    episodes: int = 200
    seed: int = 0
    scene: int = 1
    warmup_steps: int = 512
    updates_per_step: int = 1
    delta_win: float = 0.05
    delta_lose: float = 0.1
    wolf_gamma: float = 0.8
    eps_start: float = 0.3
    eps_end: float = 0.01
    max_seconds: Optional[float] = None


class Trainer:
    """Owns one environment, 7 SAC agents and 3 WoLF bidders."""

    def __init__(self, env: MultiMicrogridEnv, sac: Optional[SacConfig] = None,
                 train: Optional[TrainConfig] = None):
        self.env = env
        self.sac_cfg = sac or SacConfig()
        self.cfg = train or TrainConfig()
        seed = self.cfg.seed
        self.rng = np.random.default_rng(seed)
        self.env.rng = np.random.default_rng(seed + 7919)
        self.dims = {a: env.specs[a].dim for a in SAC_MG_AGENTS + (SES,)}
        offsets, pos = {}, 0
        for a in SAC_MG_AGENTS:
            offsets[a] = slice(pos, pos + self.dims[a])
            pos += self.dims[a]
        self.joint_dim = pos
        self.slices = offsets
        n_state = len(GLOBAL_SLOTS)
        self.agents = {}
        for k, a in enumerate(SAC_MG_AGENTS):
            self.agents[a] = SacAgent(a, env.obs_dim(a), self.dims[a], n_state, self.joint_dim,
                                      offsets[a], self.sac_cfg, seed=seed * 1000 + a)
        self.agents[SES] = SacAgent(SES, env.obs_dim(SES), self.dims[SES], env.obs_dim(SES), self.dims[SES],
                                    slice(0, self.dims[SES]), self.sac_cfg, seed=seed * 1000 + SES)
        self.bidders = {}
        for a in BIDDERS:
            sizes = [len(env.bid_grids[s // N_RESIDUAL_BINS]) for s in range(N_BANDS * N_RESIDUAL_BINS)]
            self.bidders[a] = WolfAgent(sizes, self.cfg.delta_win, self.cfg.delta_lose, self.cfg.wolf_gamma)
        shapes = {"state": (n_state,), "next_state": (n_state,), "done": ()}
        for a in SAC_MG_AGENTS + (SES,):
            shapes[f"obs{a}"] = (env.obs_dim(a),)
            shapes[f"next_obs{a}"] = (env.obs_dim(a),)
            shapes[f"act{a}"] = (self.dims[a],)
            shapes[f"rew{a}"] = ()
        self.buffer = ReplayBuffer(self.sac_cfg.buffer_size, shapes)
        self.total_steps = 0
        self.episode = 0
        self.curves: list = []
        self.stopped_early: Optional[str] = None

    # ------------------------------------------------------------ one hour

    def _hour(self, env: MultiMicrogridEnv, explore: bool, policy: str) -> tuple:
        """Act through the four stages of one hour. ``policy`` is 'learned' or 'random'."""
        rec = {"state": env.global_state()}
        random_phase = policy == "random" or (explore and self.total_steps < self.cfg.warmup_steps)

        def choose(a, obs):
            rec[f"obs{a}"] = obs
            if random_phase:
                u = self.rng.uniform(-1.0, 1.0, self.dims[a])
            else:
                u = self.agents[a].act(obs, self.rng, explore=explore)
            rec[f"act{a}"] = u
            return env.specs[a].from_unit(u)

        acts = {a: choose(a, env.observe(a)) for a in ELECTRIC}
        heat_obs = env.dispatch_electric(acts)
        acts = {a: choose(a, heat_obs[a]) for a in HEAT}
        env.dispatch_heat(acts)
        bids, bid_states = {}, {}
        band = env.schedule.band(env.hour)
        grid = env.bid_grids[band]
        for a in BIDDERS:
            s = state_index(env._res_e[mg_of(a) - 1], band) if env.scene == 1 else 0
            if policy == "random":
                idx = int(self.rng.integers(len(grid)))
            else:
                eps = epsilon_schedule(self.episode / max(self.cfg.episodes, 1), self.cfg.eps_start,
                                       self.cfg.eps_end) if explore else 0.0
                idx = self.bidders[a].select(s, eps, self.rng) if explore else int(np.argmax(self.bidders[a].pi[s]))
            bids[a] = grid[idx]
            bid_states[a] = (s, idx)
        ses_obs = env.submit_bids(bids)
        ses_act = choose(SES, ses_obs)
        res = env.settle(ses_act)
        for a in SAC_MG_AGENTS + (SES,):
            rec[f"rew{a}"] = res.rewards[a]
        rec["done"] = float(res.done)
        return rec, bid_states, res

    # ------------------------------------------------------------ learning

    def _store(self, rec: dict, nxt: Optional[dict]) -> None:
        row = dict(rec)
        if nxt is None:
            row["next_state"] = rec["state"]
            for a in SAC_MG_AGENTS + (SES,):
                row[f"next_obs{a}"] = rec[f"obs{a}"]
        else:
            row["next_state"] = nxt["state"]
            for a in SAC_MG_AGENTS + (SES,):
                row[f"next_obs{a}"] = nxt[f"obs{a}"]
        self.buffer.add(**row)

    def update(self) -> None:
        b = self.buffer.sample(self.sac_cfg.batch_size, self.rng)
        joint = np.concatenate([b[f"act{a}"] for a in SAC_MG_AGENTS], axis=1)
        next_parts, next_logp = [], {}
        for a in SAC_MG_AGENTS:
            na, lp = self.agents[a].sample_batch(b[f"next_obs{a}"], self.rng)
            next_parts.append(na)
            next_logp[a] = lp
        next_joint = np.concatenate(next_parts, axis=1)
        for a in SAC_MG_AGENTS:
            self.agents[a].update(b[f"obs{a}"], b["state"], joint, b[f"rew{a}"], b["done"],
                                  b["next_state"], next_joint, next_logp[a], self.rng)
        ses = self.agents[SES]
        na, lp = ses.sample_batch(b[f"next_obs{SES}"], self.rng)
        ses.update(b[f"obs{SES}"], b[f"obs{SES}"], b[f"act{SES}"], b[f"rew{SES}"], b["done"],
                   b[f"next_obs{SES}"], na, lp, self.rng)

    def _wolf_update(self, prev: dict, prev_rewards: dict, nxt: Optional[dict]) -> None:
        if self.env.scene != 1:
            return
        for a in BIDDERS:
            s, idx = prev[a]
            s_next = None if nxt is None else nxt[a][0]
            self.bidders[a].update(s, idx, prev_rewards[a], s_next)

    def run_episode(self, day: Optional[int] = None, learn: bool = True) -> dict:
        env = self.env
        env.reset(day=day, scene=self.cfg.scene)
        returns = {a: 0.0 for a in range(1, 11)}
        raw_cost = 0.0
        pending = None
        while True:
            rec, bid_states, res = self._hour(env, explore=learn, policy="learned")
            for a in range(1, 11):
                returns[a] += res.rewards[a]
            raw_cost += sum(res.info["mg_cost"]) + sum(res.info["mg_penalty"])
            if learn:
                if pending is not None:
                    self._store(pending[0], rec)
                    self._wolf_update(pending[1], pending[2], bid_states)
                pending = (rec, bid_states, res.rewards)
                self.total_steps += 1
                if len(self.buffer) >= self.sac_cfg.batch_size and self.total_steps >= self.cfg.warmup_steps:
                    for _ in range(self.cfg.updates_per_step):
                        self.update()
            if res.done:
                break
        if learn and pending is not None:
            self._store(pending[0], None)
            self._wolf_update(pending[1], pending[2], None)
        return {"returns": returns, "cost": raw_cost}

    def _log_curves(self, ep: int, out: dict) -> None:
        """One row per agent; bidders carry NaN in the SAC-only columns."""
        for a in range(1, 11):
            ag = self.agents.get(a)
            self.curves.append({
                "episode": ep, "agent_id": a, "return": out["returns"][a],
                "alpha": ag.alpha if ag else float("nan"),
                "critic_loss": ag.last["critic_loss"] if ag else float("nan"),
                "actor_loss": ag.last["actor_loss"] if ag else float("nan")})

    def train(self, log: Optional[Callable[[str], None]] = None) -> list:
        start = time.time()
        for ep in range(self.cfg.episodes):
            self.episode = ep
            try:
                out = self.run_episode(learn=True)
            except DivergenceError as exc:
                self.stopped_early = str(exc)
                if log:
                    log(f"early stop at episode {ep}: {exc}")
                break
            self._log_curves(ep, out)
            if log and (ep % 10 == 0 or ep == self.cfg.episodes - 1):
                log(f"episode {ep} cost {out['cost']:.1f} steps {self.total_steps} "
                    f"elapsed {time.time() - start:.0f}s")
            if self.cfg.max_seconds and time.time() - start > self.cfg.max_seconds:
                self.stopped_early = f"time budget {self.cfg.max_seconds}s reached after episode {ep}"
                break
        self.episode = self.cfg.episodes
        return self.curves

    # ------------------------------------------------------------ evaluation

    def evaluate(self, days, policy: str = "learned", scene: Optional[int] = None,
                 env: Optional[MultiMicrogridEnv] = None) -> dict:
        """Deterministic rollouts over the given day indices (no learning).

        ``env`` defaults to the training environment; pass another one to score
        held-out profiles.
        """
        env = env or self.env
        saved_scene = self.cfg.scene
        if scene is not None:
            self.cfg.scene = scene
        saved_state = (env.storage.soc, env.storage.cycles, self.rng.bit_generator.state)
        self.rng = np.random.default_rng(12345)
        totals = {"cost": 0.0, "cash": 0.0, "penalty": 0.0,
                  "mg_cost": np.zeros(3), "mg_cash": np.zeros(3), "mg_grid_kwh": np.zeros(3), "days": 0}
        for d in days:
            env.reset(day=int(d), scene=self.cfg.scene)
            while True:
                _, _, res = self._hour(env, explore=False, policy=policy)
                info = res.info
                cash = np.array(info["mg_cost"])
                pen = np.array(info["mg_penalty"])
                totals["cash"] += cash.sum()
                totals["penalty"] += pen.sum()
                totals["cost"] += cash.sum() + pen.sum()
                totals["mg_cash"] += cash
                totals["mg_cost"] += cash + pen
                totals["mg_grid_kwh"] += np.array([m["grid_e_kwh"] for m in info["mg"]])
                if res.done:
                    break
            totals["days"] += 1
        env.storage.soc, env.storage.cycles = saved_state[0], saved_state[1]
        self.rng = np.random.default_rng()
        self.rng.bit_generator.state = saved_state[2]
        self.cfg.scene = saved_scene
        return totals

    # ------------------------------------------------------------ persistence

    def checkpoint(self) -> dict:
        return {"sac": {str(a): ag.to_dict() for a, ag in self.agents.items()},
                "wolf": {str(a): w.to_dict() for a, w in self.bidders.items()},
                "storage": {"soc": self.env.storage.soc, "cycles": self.env.storage.cycles},
                "episode": self.episode, "total_steps": self.total_steps}

    def load_checkpoint(self, ck: dict) -> None:
        for a, d in ck["sac"].items():
            self.agents[int(a)].load_dict(d)
        for a, d in ck["wolf"].items():
            self.bidders[int(a)] = WolfAgent.from_dict(d)
        self.env.storage.cycles = ck["storage"]["cycles"]
        self.total_steps = ck.get("total_steps", 0)


def write_curves(rows: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{r[k]:.10g}" if isinstance(r[k], float) else r[k]) for k in CURVE_COLUMNS})


def read_curves(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
