"""Time-of-use prices, the sealed-bid storage auction and hourly cash settlements."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .devices import MicrogridDevices, gt_evaluate

BID_TICK = 0.0025
_EPS = 1e-12


class TradeError(ValueError):
    pass


class ConstraintError(ValueError):
    pass


@dataclass(frozen=True)
class PriceRow:
    s_micro_e: float
    b_micro_e: float
    s_main_e: float
    b_main_e: float
    s_main_h: float = 0.0282
    b_main_h: float = 0.1342
    s_micro_h: float = 0.0494
    b_micro_h: float = 0.1059
    gas: float = 0.0494
    biomass: float = 0.0353

    def band_index(self, schedule: "PriceSchedule") -> int:
        return schedule.rows.index(self)


@dataclass
class PriceSchedule:
    """Banded schedule; ``starts[k]`` is the first hour of band k."""

    starts: list
    rows: list

    def band(self, hour: int) -> int:
        if not 0 <= hour <= 23:
            raise ValueError(f"hour {hour} outside 0..23")
        k = 0
        for i, s in enumerate(self.starts):
            if hour >= s:
                k = i
        return k

    def to_dict(self) -> dict:
        return {"starts": list(self.starts), "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> "PriceSchedule":
        return cls(starts=list(d["starts"]), rows=[PriceRow(**r) for r in d["rows"]])

    @classmethod
    def load(cls, path) -> "PriceSchedule":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_schedule() -> PriceSchedule:
    # main-grid electricity prices are not tabulated; they mirror the inter-MG prices
    s_e = (0.0212, 0.0565, 0.0847, 0.0565)
    b_e = (0.0424, 0.1000, 0.1412, 0.1000)
    rows = [PriceRow(s_micro_e=s, b_micro_e=b, s_main_e=s, b_main_e=b) for s, b in zip(s_e, b_e)]
    return PriceSchedule(starts=[0, 8, 12, 19], rows=rows)


def prices_at(schedule: PriceSchedule, hour: int) -> PriceRow:
    return schedule.rows[schedule.band(hour)]


# --------------------------------------------------------------- auction

def legal_bids(row: PriceRow, tick: float = BID_TICK) -> np.ndarray:
    """Tick-grid prices inside [S_main_e, B_main_e]."""
    lo = int(np.ceil(row.s_main_e / tick - 1e-9))
    hi = int(np.floor(row.b_main_e / tick + 1e-9))
    return np.round(np.arange(lo, hi + 1) * tick, 10)


def is_legal_bid(price: float, row: PriceRow, tick: float = BID_TICK) -> bool:
    k = price / tick
    on_grid = abs(k - round(k)) < 1e-6
    return on_grid and row.s_main_e - 1e-12 <= price <= row.b_main_e + 1e-12


@dataclass(frozen=True)
class Bid:
    mg_id: int
    price: float
    residual: float  # kW, + deficit, - surplus


@dataclass
class AuctionOutcome:
    winners: list
    clearing_bid: dict
    allocation: dict  # signed kW per MG, same sign as its residual
    rejected: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"winners": list(self.winners),
                "clearing_bid": {str(k): v for k, v in self.clearing_bid.items()},
                "allocation": {str(k): v for k, v in self.allocation.items()},
                "rejected": list(self.rejected)}


def winner_set(prices: Sequence[float]) -> list:
    """Indices holding the strictly highest price; ties all win."""
    if len(prices) == 0:
        return []
    top = max(prices)
    return [i for i, p in enumerate(prices) if p == top]


def run_auction(bids: Sequence[Bid], row: PriceRow, p_max: float = 400.0,
                headroom: Optional[tuple] = None, tick: float = BID_TICK) -> AuctionOutcome:
    """Clear one hour of the storage auction.

    ``headroom`` is (charge_kW, discharge_kW) the battery can still absorb or
    deliver; it caps the surplus and deficit groups separately.
    """
    valid = [b for b in bids if is_legal_bid(b.price, row, tick)]
    rejected = [b.mg_id for b in bids if not is_legal_bid(b.price, row, tick)]
    # compare on integer tick counts so float noise cannot split a tie
    idx = winner_set([int(round(b.price / tick)) for b in valid])
    winners = [valid[i] for i in idx]
    alloc = {b.mg_id: 0.0 for b in bids}
    demand = {b.mg_id: abs(b.residual) for b in winners}
    total = sum(demand.values())
    if total > _EPS:
        scale = min(1.0, p_max / total)
        for b in winners:
            alloc[b.mg_id] = demand[b.mg_id] * scale
        if headroom is not None:
            charge_room, discharge_room = headroom
            for sign, room in ((1.0, discharge_room), (-1.0, charge_room)):
                group = [b.mg_id for b in winners if np.sign(b.residual) == sign]
                used = sum(alloc[m] for m in group)
                if used > room:
                    f = room / used if used > 0 else 0.0
                    for m in group:
                        alloc[m] *= f
        for b in winners:
            alloc[b.mg_id] *= float(np.sign(b.residual))
    return AuctionOutcome(winners=sorted(b.mg_id for b in winners),
                          clearing_bid={b.mg_id: b.price for b in winners},
                          allocation=alloc, rejected=rejected)


def brute_force_winners(prices: Sequence[float]) -> set:
    """Oracle: every bidder whose price is not exceeded by any other bidder."""
    return {i for i, p in enumerate(prices) if all(p >= q for q in prices)}


# --------------------------------------------------------------- settlements

def settle_equipment(mg_id: int, p_gt: float, h_gb: float, devices: MicrogridDevices,
                     row: PriceRow) -> float:
    """Fuel cost of the turbine bank and gas boiler of one microgrid."""
    bank = devices.turbine
    if not (-1e-9 <= p_gt <= bank.capacity + 1e-9):
        raise ConstraintError(f"violated: 0 <= P_GT^MG{mg_id} <= 200*N{mg_id} ({bank.capacity} kW); got {p_gt}")
    if not (-1e-9 <= h_gb <= devices.boiler.h_max + 1e-9):
        raise ConstraintError(f"violated: 0 <= H_GB^MG{mg_id} <= H_max^MG{mg_id},GB ({devices.boiler.h_max} kW); got {h_gb}")
    fuel_gt = gt_evaluate(bank, p_gt).fuel
    gb_fuel = devices.boiler.fuel(h_gb)
    if mg_id == 2:
        return row.gas * gb_fuel + row.biomass * fuel_gt
    if mg_id in (1, 3):
        return row.gas * (fuel_gt + gb_fuel)
    raise ValueError(f"unknown microgrid {mg_id}")


def settle_inter_mg(p_trades, h_trades, row: PriceRow, p_cap: float = 400.0,
                    h_cap: float = 300.0) -> np.ndarray:
    """Per-MG cost of inter-MG trades; ``p_trades[i, j]`` is the flow from MG i+1 to MG j+1."""
    costs = np.zeros(3)
    for mat, cap, s, b, kind in ((p_trades, p_cap, row.s_micro_e, row.b_micro_e, "electricity"),
                                 (h_trades, h_cap, row.s_micro_h, row.b_micro_h, "heat")):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (3, 3):
            raise TradeError(f"{kind} trade matrix must be 3x3, got {mat.shape}")
        if (mat < -1e-12).any():
            raise TradeError(f"{kind} trade flows must be nonnegative (direction is the index order)")
        if (mat > cap + 1e-9).any():
            raise TradeError(f"{kind} trade exceeds cap {cap} kW")
        if np.abs(np.diag(mat)).max() > 0:
            raise TradeError(f"{kind} self-trade is not allowed")
        if (np.triu(mat * mat.T, 1) > 0).any():
            raise TradeError(f"{kind} trades flow both ways between the same pair")
        costs += -s * mat.sum(axis=1) + b * mat.sum(axis=0)
    return costs


def trade_spread(p_trades, h_trades, row: PriceRow) -> float:
    """Cash retained by the market operator from the buy/sell spread."""
    vp = float(np.sum(p_trades))
    vh = float(np.sum(h_trades))
    return (row.b_micro_e - row.s_micro_e) * vp + (row.b_micro_h - row.s_micro_h) * vh


def settle_ses(outcome: AuctionOutcome, served: dict) -> tuple:
    """Winners pay bid * served (signed); returns (per-MG cost array, storage income)."""
    costs = np.zeros(3)
    for mg, q in served.items():
        alloc = outcome.allocation.get(mg, 0.0)
        if abs(q) > abs(alloc) + 1e-9 or q * alloc < -1e-12:
            raise ConstraintError(f"MG{mg}: storage dispatch {q} kW exceeds allocation {alloc} kW")
        if abs(q) > 0 and mg not in outcome.clearing_bid:
            raise ConstraintError(f"MG{mg} lost the auction but was served")
        if mg in outcome.clearing_bid:
            costs[mg - 1] += outcome.clearing_bid[mg] * q
    return costs, float(costs.sum())


@dataclass
class GridSettlement:
    cost: np.ndarray
    e_import: np.ndarray
    e_export: np.ndarray
    h_import: np.ndarray
    h_export: np.ndarray
    unserved_e: np.ndarray
    unserved_h: np.ndarray
    spilled_e: np.ndarray
    spilled_h: np.ndarray

    @property
    def e_traded(self) -> np.ndarray:
        return self.e_import + self.e_export


def _grid_one(res: float, cap: float, buy: float, sell: float) -> tuple:
    if res >= 0:
        imp = min(res, cap)
        uns = res - imp
        return buy * imp + 2.0 * buy * uns, imp, 0.0, uns, 0.0
    exp = min(-res, cap)
    spill = -res - exp
    return -sell * exp, 0.0, exp, 0.0, spill


def settle_main_grid(residual_e, residual_h, row: PriceRow, e_cap: float = 400.0,
                     h_cap: float = 300.0) -> GridSettlement:
    """Residuals (+ deficit) are bought at B_main and surpluses sold at S_main.

    Deficit beyond the connection cap is unserved and charged at twice the buy
    price; surplus beyond the cap is spilled.
    """
    re_ = np.asarray(residual_e, dtype=float)
    rh = np.asarray(residual_h, dtype=float)
    n = len(re_)
    out = {k: np.zeros(n) for k in ("cost", "ei", "ee", "hi", "he", "ue", "uh", "se", "sh")}
    for i in range(n):
        c, a, b, u, s = _grid_one(re_[i], e_cap, row.b_main_e, row.s_main_e)
        out["cost"][i] += c
        out["ei"][i], out["ee"][i], out["ue"][i], out["se"][i] = a, b, u, s
        c, a, b, u, s = _grid_one(rh[i], h_cap, row.b_main_h, row.s_main_h)
        out["cost"][i] += c
        out["hi"][i], out["he"][i], out["uh"][i], out["sh"][i] = a, b, u, s
    return GridSettlement(out["cost"], out["ei"], out["ee"], out["hi"], out["he"],
                          out["ue"], out["uh"], out["se"], out["sh"])


def main_grid_cost(residual_e: float, row: PriceRow, e_cap: float = 400.0) -> float:
    return _grid_one(residual_e, e_cap, row.b_main_e, row.s_main_e)[0]


def main_grid_heat_cost(residual_h: float, row: PriceRow, h_cap: float = 300.0) -> float:
    return _grid_one(residual_h, h_cap, row.b_main_h, row.s_main_h)[0]


class AuctionLog:
    """Append-only JSON-lines record of auction rounds."""

    def __init__(self, path=None):
        self.records = []
        self.path = Path(path) if path else None

    def append(self, hour: int, bids: Sequence[Bid], outcome: AuctionOutcome) -> dict:
        rec = {"hour": hour,
               "bids": {str(b.mg_id): b.price for b in bids},
               "winners": list(outcome.winners),
               "allocations": {str(k): v for k, v in outcome.allocation.items()}}
        self.records.append(rec)
        return rec

    def dump(self, path=None) -> None:
        path = Path(path) if path else self.path
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")

    @staticmethod
    def read(path) -> list:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
