"""Ten-agent hourly environment for three microgrids sharing one battery.

Agent ids (grouped by microgrid):
    1/4/7   electricity supply of MG1/MG2/MG3
    2/5/8   heat supply of MG1/MG2/MG3
    3/6/9   storage bidders of MG1/MG2/MG3
    10      shared storage operator

Each hour runs in stages so later agents can observe earlier decisions:
``dispatch_electric`` -> ``dispatch_heat`` -> ``submit_bids`` -> ``settle``.
:meth:`MultiMicrogridEnv.step` chains all four for callers that already hold a
full joint action.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import market as mk
from .devices import (SharedStorage, chp_dispatch, default_storage, default_system, load_curves,
                      plant_dispatch, storage_step)
from .profiles import DayProfile, renewable_series

ELECTRIC = (1, 4, 7)
HEAT = (2, 5, 8)
BIDDERS = (3, 6, 9)
SES = 10
ALL_AGENTS = tuple(range(1, 11))
SAC_MG_AGENTS = ELECTRIC + HEAT


def mg_of(agent_id: int) -> int:
    """Microgrid number (1..3) of agents 1..9."""
    return (agent_id - 1) // 3 + 1


# observation slot scales (value / scale, clipped to [-1, 1])
_SCALES = {"load_e": 1500.0, "load_h": 1500.0, "pv": 400.0, "wt": 300.0, "price": 0.15,
           "p_gt": 800.0, "p_orc": 108.0, "residual": 1000.0, "ses_load": 1200.0,
           "soc": 1.0, "cr": 1.0}


def _slot_scale(slot: str) -> float:
    for key, val in _SCALES.items():
        if slot.startswith(key):
            return val
    if "micro" in slot or "main" in slot or slot.startswith("ses_bid"):
        return _SCALES["price"]
    raise KeyError(slot)


def observation_slots(agent_id: int) -> list:
    if agent_id == 1:
        return ["load_e1", "load_h1", "pv1", "wt1", "s_micro_e", "b_micro_e"]
    if agent_id in (4, 7):
        i = mg_of(agent_id)
        return [f"load_e{i}", f"pv{i}", f"wt{i}", "s_micro_e", "b_micro_e"]
    if agent_id == 2:
        return ["load_h1", "s_micro_h", "b_micro_h", "p_gt1", "p_orc1"]
    if agent_id in (5, 8):
        return [f"load_h{mg_of(agent_id)}", "s_micro_h", "b_micro_h"]
    if agent_id in BIDDERS:
        return [f"residual{mg_of(agent_id)}", "s_main_e", "b_main_e"]
    if agent_id == SES:
        return ["ses_load", "ses_bid", "soc", "cr", "s_micro_e", "b_micro_e"]
    raise ValueError(f"unknown agent {agent_id}")


def global_slots() -> list:
    """Ordered, de-duplicated union of every agent's observation slots."""
    out = []
    for a in ALL_AGENTS:
        for s in observation_slots(a):
            if s not in out:
                out.append(s)
    return out


GLOBAL_SLOTS = global_slots()


@dataclass
class EnvConfig:
    scene: int = 1
    penalty_m: float = 100.0
    reward_scale: float = 100.0
    trade_cap_e: float = 400.0
    trade_cap_h: float = 300.0
    grid_cap_e: float = 400.0
    grid_cap_h: float = 300.0
    mutual_trade_penalty: float = 0.1
    eta_gb: float = 0.9
    eta_orc: float = 0.1
    soc_init: float = 0.5
    replace_at_end_of_life: bool = True
    n_units: tuple = (4, 6, 5)
    pv_rated: tuple = (400.0, 400.0, 400.0)
    wt_rated: tuple = (300.0, 200.0, 200.0)
    gb_max: tuple = (1000.0, 600.0, 1000.0)
    cr0: float = 3000.0
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    p_ss_max: float = 400.0
    soc0_min: float = 0.1
    soc0_max: float = 0.9


@dataclass
class ActionSpec:
    low: np.ndarray
    high: np.ndarray

    @property
    def dim(self) -> int:
        return self.low.size

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        """Map squashed actions in [-1, 1] onto the box."""
        return self.low + (np.asarray(u) + 1.0) * 0.5 * (self.high - self.low)

    def to_unit(self, a: np.ndarray) -> np.ndarray:
        return 2.0 * (np.asarray(a) - self.low) / (self.high - self.low) - 1.0


@dataclass
class StepResult:
    rewards: dict      # scaled rewards per agent id
    raw_rewards: dict  # unscaled, in $
    done: bool
    info: dict


class MultiMicrogridEnv:
    def __init__(self, profiles: list, config: Optional[EnvConfig] = None, curves: Optional[dict] = None,
                 schedule: Optional[mk.PriceSchedule] = None):
        if not profiles:
            raise ValueError("at least one day profile is required")
        self.cfg = config or EnvConfig()
        self.profiles = list(profiles)
        self.curves = curves or load_curves()
        self.schedule = schedule or mk.default_schedule()
        c = self.cfg
        self.system = default_system(self.curves, n_units=tuple(c.n_units), wt_rated=tuple(c.wt_rated),
                                     pv_rated=tuple(c.pv_rated), gb_max=tuple(c.gb_max),
                                     eta_gb=c.eta_gb, eta_orc=c.eta_orc)
        self.storage: SharedStorage = default_storage(
            self.curves, cr0=c.cr0, eta_charge=c.eta_charge, eta_discharge=c.eta_discharge,
            p_max=c.p_ss_max, soc0_min=c.soc0_min, soc0_max=c.soc0_max)
        self.specs = self._action_specs()
        self.bid_grids = [mk.legal_bids(r) for r in self.schedule.rows]
        self.trace: list = []
        self.auction_log = mk.AuctionLog()
        self.battery_replacements = 0
        self.hour = 0
        self.day_index = 0
        self.scene = self.cfg.scene
        self._stage = "idle"
        self.rng = np.random.default_rng(0)

    # ------------------------------------------------------------ spaces

    def _action_specs(self) -> dict:
        ce, ch = self.cfg.trade_cap_e, self.cfg.trade_cap_h
        specs = {}
        for k, a in enumerate(ELECTRIC):
            cap = self.system[k].turbine.capacity
            if a == 1:
                specs[a] = ActionSpec(np.zeros(4), np.array([cap, 1.0, ce, ce]))
            else:
                specs[a] = ActionSpec(np.zeros(3), np.array([cap, ce, ce]))
        for k, a in enumerate(HEAT):
            specs[a] = ActionSpec(np.zeros(3), np.array([self.system[k].boiler.h_max, ch, ch]))
        specs[SES] = ActionSpec(np.zeros(3), np.ones(3))
        return specs

    def obs_dim(self, agent_id: int) -> int:
        return len(observation_slots(agent_id))

    def bid_options(self, hour: Optional[int] = None) -> np.ndarray:
        return self.bid_grids[self.schedule.band(self.hour if hour is None else hour)]

    # ------------------------------------------------------------ episode control

    def reset(self, day: Optional[int] = None, scene: Optional[int] = None, seed: Optional[int] = None) -> dict:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if day is None:
            day = int(self.rng.integers(len(self.profiles)))
        if not 0 <= day < len(self.profiles):
            raise KeyError(f"profile day {day} not available ({len(self.profiles)} days loaded)")
        if scene is not None:
            if scene not in (1, 2, 3):
                raise ValueError("scene must be 1, 2 or 3")
            self.scene = scene
        self.day_index = day
        self.profile: DayProfile = self.profiles[day]
        self.pv, self.wt = renewable_series(self.profile, self.system)
        self.hour = 0
        self.storage.soc = self.cfg.soc_init
        self.trace = []
        self.auction_log = mk.AuctionLog()
        self.slots = {s: 0.0 for s in GLOBAL_SLOTS}
        self._refresh_exogenous()
        self._stage = "electric"
        return self.observations()

    def _refresh_exogenous(self) -> None:
        h = self.hour
        row = mk.prices_at(self.schedule, h)
        self.row = row
        sl = self.slots
        for i in range(3):
            sl[f"load_e{i + 1}"] = self.profile.electric[h, i]
            sl[f"load_h{i + 1}"] = self.profile.heat[h, i]
            sl[f"pv{i + 1}"] = self.pv[h, i]
            sl[f"wt{i + 1}"] = self.wt[h, i]
        sl["s_micro_e"], sl["b_micro_e"] = row.s_micro_e, row.b_micro_e
        sl["s_micro_h"], sl["b_micro_h"] = row.s_micro_h, row.b_micro_h
        sl["s_main_e"], sl["b_main_e"] = row.s_main_e, row.b_main_e
        sl["soc"] = self.storage.soc
        sl["cr"] = self.storage.retention

    def observe(self, agent_id: int) -> np.ndarray:
        if agent_id in BIDDERS + (SES,) and self.scene != 1:
            return np.zeros(self.obs_dim(agent_id))
        vals = [self.slots[s] / _slot_scale(s) for s in observation_slots(agent_id)]
        return np.clip(np.array(vals, dtype=float), -1.0, 1.0)

    def observations(self) -> dict:
        return {a: self.observe(a) for a in ALL_AGENTS}

    def global_state(self) -> np.ndarray:
        vals = [self.slots[s] / _slot_scale(s) for s in GLOBAL_SLOTS]
        return np.clip(np.array(vals, dtype=float), -1.0, 1.0)

    # ------------------------------------------------------------ stage 1: electricity

    def _clip(self, agent_id: int, action) -> tuple:
        spec = self.specs[agent_id]
        a = np.asarray(action, dtype=float).ravel()
        if a.shape != spec.low.shape:
            raise ValueError(f"agent {agent_id}: action has {a.size} entries, expected {spec.dim}")
        clipped = np.clip(a, spec.low, spec.high)
        return clipped, float(np.abs(clipped - a).sum())

    def dispatch_electric(self, actions: dict) -> dict:
        """Apply the three electricity agents' actions; returns heat-agent observations."""
        if self._stage != "electric":
            raise RuntimeError(f"dispatch_electric called during stage {self._stage!r}")
        self._clips = {}
        self._e = {}
        trades_e = np.zeros((3, 3))
        for k, a in enumerate(ELECTRIC):
            act, clip = self._clip(a, actions[a])
            self._clips[a] = clip
            mgdev = self.system[k]
            if a == 1:
                p_gt, beta = act[0], act[1]
                chp = chp_dispatch(mgdev.chp, p_gt, beta)
                fuel, gen, orc, chp_heat = chp.fuel, chp.power, chp.orc_power, chp.heat
                exports = act[2:4]
            else:
                p_gt = act[0]
                out = plant_dispatch(mgdev.plant, p_gt)
                fuel, gen, orc, chp_heat = out.fuel, out.power, 0.0, 0.0
                exports = act[1:3]
            others = [j for j in range(3) if j != k]
            if self.scene != 3:
                for j, q in zip(others, exports):
                    trades_e[k, j] = q
            self._e[k] = {"p_gt": p_gt, "fuel": fuel, "gen": gen, "orc": orc, "chp_heat": chp_heat}
        self._trades_e, self._mutual_e = self._resolve_mutual(trades_e)
        self.slots["p_gt1"] = self._e[0]["p_gt"]
        self.slots["p_orc1"] = self._e[0]["orc"]
        self._stage = "heat"
        return {a: self.observe(a) for a in HEAT}

    def _resolve_mutual(self, t: np.ndarray) -> tuple:
        """Zero both directions of any pair trading both ways; returns (trades, penalised kW per MG)."""
        t = t.copy()
        pen = np.zeros(3)
        for i in range(3):
            for j in range(i + 1, 3):
                if t[i, j] > 0 and t[j, i] > 0:
                    pen[i] += t[i, j]
                    pen[j] += t[j, i]
                    t[i, j] = t[j, i] = 0.0
        return t, pen

    # ------------------------------------------------------------ stage 1: heat

    def dispatch_heat(self, actions: dict) -> dict:
        """Apply the heat agents' actions; returns bidder observations."""
        if self._stage != "heat":
            raise RuntimeError(f"dispatch_heat called during stage {self._stage!r}")
        trades_h = np.zeros((3, 3))
        self._h = {}
        for k, a in enumerate(HEAT):
            act, clip = self._clip(a, actions[a])
            self._clips[a] = clip
            others = [j for j in range(3) if j != k]
            if self.scene != 3:
                for j, q in zip(others, act[1:3]):
                    trades_h[k, j] = q
            self._h[k] = {"h_gb": act[0], "gb_fuel": self.system[k].boiler.fuel(act[0])}
        self._trades_h, self._mutual_h = self._resolve_mutual(trades_h)
        te, th = self._trades_e, self._trades_h
        h = self.hour
        self._res_e = np.zeros(3)
        self._res_h = np.zeros(3)
        for k in range(3):
            supply_e = self._e[k]["gen"] + self.pv[h, k] + self.wt[h, k] + te[:, k].sum() - te[k, :].sum()
            self._res_e[k] = self.profile.electric[h, k] - supply_e
            supply_h = self._e[k]["chp_heat"] + self._h[k]["h_gb"] + th[:, k].sum() - th[k, :].sum()
            self._res_h[k] = self.profile.heat[h, k] - supply_h
        for k in range(3):
            self.slots[f"residual{k + 1}"] = self._res_e[k]
        self._stage = "bids"
        return {a: self.observe(a) for a in BIDDERS}

    # ------------------------------------------------------------ stage 2: auction

    def submit_bids(self, bids: dict) -> np.ndarray:
        """Run the auction (scene 1 only); returns the storage operator's observation."""
        if self._stage != "bids":
            raise RuntimeError(f"submit_bids called during stage {self._stage!r}")
        self._bids = [mk.Bid(mg_of(a), float(bids[a]), float(self._res_e[mg_of(a) - 1])) for a in BIDDERS]
        if self.scene == 1:
            self._outcome = mk.run_auction(self._bids, self.row, p_max=self.storage.p_max,
                                           headroom=self.storage.headroom())
            self.auction_log.append(self.hour, self._bids, self._outcome)
        else:
            self._outcome = mk.AuctionOutcome([], {}, {1: 0.0, 2: 0.0, 3: 0.0})
        alloc = self._outcome.allocation
        self.slots["ses_load"] = sum(alloc.values())
        self.slots["ses_bid"] = max(self._outcome.clearing_bid.values(), default=0.0)
        self._stage = "ses"
        return self.observe(SES)

    # ------------------------------------------------------------ stage 2-3: settle

    def settle(self, ses_action) -> StepResult:
        if self._stage != "ses":
            raise RuntimeError(f"settle called during stage {self._stage!r}")
        cfg = self.cfg
        row = self.row
        h = self.hour
        act, clip = self._clip(SES, ses_action)
        self._clips[SES] = clip
        alloc = self._outcome.allocation
        served = {m: (act[m - 1] * alloc.get(m, 0.0) if self.scene == 1 else 0.0) for m in (1, 2, 3)}
        net = sum(served.values())  # + discharge, - charge
        p_minus, p_plus = max(net, 0.0), max(-net, 0.0)
        soc_before, cycles_before = self.storage.soc, self.storage.cycles
        st = storage_step(self.storage, p_plus, p_minus)
        if cfg.replace_at_end_of_life and self.storage.cycles >= self.storage.retention_curve.domain[1]:
            self.storage.cycles = 0.0
            self.battery_replacements += 1
        ses_costs, ses_income = mk.settle_ses(self._outcome, served)

        res_post = self._res_e - np.array([served[1], served[2], served[3]])
        grid = mk.settle_main_grid(res_post, self._res_h, row, cfg.grid_cap_e, cfg.grid_cap_h)
        trade_costs_e = mk.settle_inter_mg(self._trades_e, np.zeros((3, 3)), row, cfg.trade_cap_e, cfg.trade_cap_h)
        trade_costs_h = mk.settle_inter_mg(np.zeros((3, 3)), self._trades_h, row, cfg.trade_cap_e, cfg.trade_cap_h)

        raw = {}
        mg_cash = np.zeros(3)
        mg_penalty = np.zeros(3)
        fuel_total = 0.0
        detail = []
        for k in range(3):
            e, hh = self._e[k], self._h[k]
            fuel_price = row.biomass if k == 1 else row.gas
            c_fuel_e = fuel_price * e["fuel"]
            c_fuel_h = row.gas * hh["gb_fuel"]
            fuel_total += c_fuel_e + c_fuel_h
            g_e_pre = mk.main_grid_cost(self._res_e[k], row, cfg.grid_cap_e)
            g_e_post = mk.main_grid_cost(res_post[k], row, cfg.grid_cap_e)
            g_h = mk.main_grid_heat_cost(self._res_h[k], row, cfg.grid_cap_h)
            pen_e_pre = abs(self._res_e[k])
            pen_e_post = abs(res_post[k])
            pen_h = abs(self._res_h[k])
            mut_e = cfg.mutual_trade_penalty * self._mutual_e[k]
            mut_h = cfg.mutual_trade_penalty * self._mutual_h[k]
            raw[ELECTRIC[k]] = -(c_fuel_e + trade_costs_e[k] + g_e_pre + pen_e_pre + mut_e)
            raw[HEAT[k]] = -(c_fuel_h + trade_costs_h[k] + g_h + pen_h + mut_h)
            raw[BIDDERS[k]] = -(ses_costs[k] + (g_e_post - g_e_pre) + (pen_e_post - pen_e_pre))
            cash = c_fuel_e + c_fuel_h + trade_costs_e[k] + trade_costs_h[k] + ses_costs[k] + grid.cost[k]
            mg_cash[k] = cash
            mg_penalty[k] = pen_e_post + pen_h + mut_e + mut_h
            detail.append({"p_gt": e["p_gt"], "gen_e": e["gen"], "orc": e["orc"], "chp_heat": e["chp_heat"],
                           "h_gb": hh["h_gb"], "residual_e_pre": self._res_e[k], "residual_e": res_post[k],
                           "residual_h": self._res_h[k], "ses_served": served[k + 1],
                           "grid_e_kwh": grid.e_traded[k], "grid_h_kwh": grid.h_import[k] + grid.h_export[k],
                           "unserved_e": grid.unserved_e[k], "unserved_h": grid.unserved_h[k],
                           "cost": cash, "penalty": mg_penalty[k]})
        raw[SES] = ses_income - cfg.penalty_m * st.violation
        spread = mk.trade_spread(self._trades_e, self._trades_h, row)
        cash_flows = {"mg1": -mg_cash[0], "mg2": -mg_cash[1], "mg3": -mg_cash[2], "ses": ses_income,
                      "main_grid": float(grid.cost.sum()) + spread, "fuel": fuel_total}
        info = {
            "day": self.day_index, "hour": h, "scene": self.scene,
            "mg": detail, "mg_cost": mg_cash.tolist(), "mg_penalty": mg_penalty.tolist(),
            "trades_e": self._trades_e.tolist(), "trades_h": self._trades_h.tolist(),
            "bids": {str(b.mg_id): b.price for b in self._bids},
            "auction": self._outcome.to_dict(),
            "ses": {"soc_before": soc_before, "soc": st.soc, "cycles": st.cycles,
                    "cycles_before": cycles_before, "violation": st.violation,
                    "p_charge": p_plus, "p_discharge": p_minus, "income": ses_income},
            "cash": cash_flows, "clips": {str(k): v for k, v in self._clips.items()},
            "raw_rewards": {str(k): v for k, v in raw.items()},
        }
        self.trace.append(info)
        rewards = {a: raw[a] / cfg.reward_scale for a in ALL_AGENTS}
        done = h == 23
        if not done:
            self.hour += 1
            self._refresh_exogenous()
            self._stage = "electric"
        else:
            self.slots["soc"] = self.storage.soc
            self.slots["cr"] = self.storage.retention
            self._stage = "done"
        return StepResult(rewards=rewards, raw_rewards=raw, done=done, info=info)

    def step(self, joint_action: dict) -> tuple:
        """Run a full hour; ``joint_action`` maps agent id to its action (bids as prices)."""
        self.dispatch_electric({a: joint_action[a] for a in ELECTRIC})
        self.dispatch_heat({a: joint_action[a] for a in HEAT})
        self.submit_bids({a: joint_action[a] for a in BIDDERS})
        res = self.settle(joint_action[SES])
        return res.rewards, self.observations(), res.done, res.info

    def export_trace(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.trace:
                fh.write(json.dumps(rec, default=float) + "\n")


def read_trace(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
