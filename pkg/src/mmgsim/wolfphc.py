"""Tabular win-or-learn-fast policy hill-climbing for the discrete bidders."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

RESIDUAL_EDGES = (-300.0, -150.0, -50.0, -10.0, 10.0, 50.0, 150.0, 300.0)
N_RESIDUAL_BINS = len(RESIDUAL_EDGES) + 1
N_BANDS = 4
N_STATES = N_RESIDUAL_BINS * N_BANDS


def state_index(residual_kw: float, band: int) -> int:
    """9 signed residual bins x 4 price bands -> 0..35."""
    if not 0 <= band < N_BANDS:
        raise ValueError(f"band {band} outside 0..{N_BANDS - 1}")
    b = int(np.searchsorted(RESIDUAL_EDGES, residual_kw, side="right"))
    return band * N_RESIDUAL_BINS + b


def band_of_state(s: int) -> int:
    return s // N_RESIDUAL_BINS


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


class WolfAgent:
    def __init__(self, n_actions: Sequence[int], delta_win: float = 0.05, delta_lose: float = 0.1,
                 gamma: float = 0.8, lr_decay: float = 0.01):
        if not delta_lose > delta_win:
            raise ValueError("delta_lose must exceed delta_win")
        self.n_actions = [int(n) for n in n_actions]
        if min(self.n_actions) < 1:
            raise ValueError("every state needs at least one action")
        self.delta_win, self.delta_lose = delta_win, delta_lose
        self.gamma, self.lr_decay = gamma, lr_decay
        self.Q = [np.zeros(n) for n in self.n_actions]
        self.pi = [np.full(n, 1.0 / n) for n in self.n_actions]
        self.pi_avg = [np.full(n, 1.0 / n) for n in self.n_actions]
        self.C = np.zeros(len(self.n_actions), dtype=np.int64)
        self.last_delta = None

    @property
    def n_states(self) -> int:
        return len(self.n_actions)

    def q_rate(self, s: int) -> float:
        return 1.0 / (1.0 + self.lr_decay * self.C[s])

    def select(self, s: int, eps: float, rng: np.random.Generator) -> int:
        p = (1.0 - eps) * self.pi[s] + eps / self.n_actions[s]
        return int(rng.choice(self.n_actions[s], p=p / p.sum()))

    def update(self, s: int, a: int, r: float, s_next: Optional[int]) -> None:
        """One Q / average-policy / hill-climb step; ``s_next=None`` marks a terminal transition."""
        self.C[s] += 1
        rate = self.q_rate(s)
        future = 0.0 if s_next is None else self.gamma * float(self.Q[s_next].max())
        self.Q[s][a] = (1.0 - rate) * self.Q[s][a] + rate * (r + future)
        self.pi_avg[s] = self.pi_avg[s] + (self.pi[s] - self.pi_avg[s]) / self.C[s]
        q = self.Q[s]
        winning = float(self.pi[s] @ q) > float(self.pi_avg[s] @ q)
        delta = self.delta_win if winning else self.delta_lose
        self.last_delta = delta
        n = self.n_actions[s]
        if n == 1:
            return
        # ties share the step so an uninformative Q leaves the policy alone
        best = q == q.max()
        nb = int(best.sum())
        if nb == n:
            return
        step = np.where(best, delta / nb, -delta / (n - nb))
        self.pi[s] = project_simplex(self.pi[s] + step)

    def to_dict(self) -> dict:
        return {"n_actions": self.n_actions,
                "pi": {str(s): p.tolist() for s, p in enumerate(self.pi)},
                "pi_avg": {str(s): p.tolist() for s, p in enumerate(self.pi_avg)},
                "Q": {str(s): q.tolist() for s, q in enumerate(self.Q)},
                "C": self.C.tolist(),
                "delta_win": self.delta_win, "delta_lose": self.delta_lose, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "WolfAgent":
        a = cls(d["n_actions"], d["delta_win"], d["delta_lose"], d["gamma"])
        for s in range(a.n_states):
            a.pi[s] = np.array(d["pi"][str(s)])
            a.pi_avg[s] = np.array(d["pi_avg"][str(s)])
            a.Q[s] = np.array(d["Q"][str(s)])
        a.C = np.array(d["C"], dtype=np.int64)
        return a

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))


def epsilon_schedule(progress: float, start: float = 0.3, end: float = 0.01) -> float:
    """Linear decay over the first half of training, flat afterwards."""
    frac = min(max(progress / 0.5, 0.0), 1.0)
    return start + (end - start) * frac


def self_play_matrix_game(payoff_a, payoff_b, episodes: int = 20000, seed: int = 0,
                          eps_start: float = 0.3, eps_end: float = 0.01, **agent_kw) -> tuple:
    """Two single-state learners on a repeated bimatrix game; returns both average policies."""
    A = np.asarray(payoff_a, dtype=float)
    B = np.asarray(payoff_b, dtype=float)
    rng = np.random.default_rng(seed)
    p1 = WolfAgent([A.shape[0]], **agent_kw)
    p2 = WolfAgent([A.shape[1]], **agent_kw)
    for k in range(episodes):
        eps = epsilon_schedule(k / episodes, eps_start, eps_end)
        a1 = p1.select(0, eps, rng)
        a2 = p2.select(0, eps, rng)
        p1.update(0, a1, A[a1, a2], 0)
        p2.update(0, a2, B[a1, a2], 0)
    return p1.pi_avg[0].copy(), p2.pi_avg[0].copy(), p1, p2
