"""Hourly load and weather profiles: CSV ingestion and a synthetic generator."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

HEADER = ["day", "hour", "mg1_e", "mg1_h", "mg2_e", "mg2_h", "mg3_e", "mg3_h",
          "irradiance", "temp_c", "wind_ms"]
VALUE_COLS = HEADER[2:]
LOAD_COLS = ["mg1_e", "mg1_h", "mg2_e", "mg2_h", "mg3_e", "mg3_h"]


class ProfileError(ValueError):
    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass
class DayProfile:
    day: int
    electric: np.ndarray    # (24, 3) kW
    heat: np.ndarray        # (24, 3) kW
    irradiance: np.ndarray  # (24,) kW/m2
    temp_c: np.ndarray      # (24,)
    wind_ms: np.ndarray     # (24,)

    def __post_init__(self):
        for name in ("electric", "heat"):
            if getattr(self, name).shape != (24, 3):
                raise ProfileError(f"day {self.day}: {name} must be 24x3")
        for name in ("irradiance", "temp_c", "wind_ms"):
            if getattr(self, name).shape != (24,):
                raise ProfileError(f"day {self.day}: {name} must have 24 values")

    def rows(self) -> list:
        out = []
        for h in range(24):
            out.append([self.day, h,
                        self.electric[h, 0], self.heat[h, 0],
                        self.electric[h, 1], self.heat[h, 1],
                        self.electric[h, 2], self.heat[h, 2],
                        self.irradiance[h], self.temp_c[h], self.wind_ms[h]])
        return out


def write_csv(profiles: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for p in profiles:
            for r in p.rows():
                w.writerow([r[0], r[1]] + [f"{v:.6f}" for v in r[2:]])


def load_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ProfileError("empty file", row=1) from None
        missing = [c for c in HEADER if c not in header]
        if missing:
            raise ProfileError(f"missing column(s) {missing}", row=1)
        if header != HEADER:
            raise ProfileError(f"header must be exactly {','.join(HEADER)}", row=1)
        days: dict = {}
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(HEADER):
                raise ProfileError(f"expected {len(HEADER)} fields, got {len(rec)}", row=lineno)
            try:
                day, hour = int(rec[0]), int(rec[1])
                vals = [float(v) for v in rec[2:]]
            except ValueError as exc:
                raise ProfileError(f"unparseable value ({exc})", row=lineno) from None
            if not 0 <= hour <= 23:
                raise ProfileError(f"hour {hour} outside 0..23", row=lineno)
            rowd = dict(zip(VALUE_COLS, vals))
            for c in VALUE_COLS:
                if not np.isfinite(rowd[c]):
                    raise ProfileError(f"non-finite {c}", row=lineno)
                if c != "temp_c" and rowd[c] < 0:
                    raise ProfileError(f"negative {c} = {rowd[c]}", row=lineno)
            slot = days.setdefault(day, {})
            if hour in slot:
                raise ProfileError(f"duplicate hour {hour} for day {day}", row=lineno)
            slot[hour] = (lineno, rowd)
    out = []
    for day in sorted(days):
        slot = days[day]
        if len(slot) != 24:
            last = max(v[0] for v in slot.values())
            raise ProfileError(f"day {day} has {len(slot)} rows, expected 24", row=last)
        hrs = [slot[h][1] for h in range(24)]
        arr = lambda c: np.array([r[c] for r in hrs])
        out.append(DayProfile(
            day=day,
            electric=np.stack([arr("mg1_e"), arr("mg2_e"), arr("mg3_e")], axis=1),
            heat=np.stack([arr("mg1_h"), arr("mg2_h"), arr("mg3_h")], axis=1),
            irradiance=arr("irradiance"), temp_c=arr("temp_c"), wind_ms=arr("wind_ms")))
    if not out:
        raise ProfileError("no data rows")
    return out


# --------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class Archetype:
    """Daily mean levels (kW, kW/m2, C, m/s) that the generator is scaled to."""
    name: str
    electric_mean: tuple
    heat_mean: tuple
    irradiance_peak: float
    temp_mean: float
    wind_mean: float
    noise: float = 0.04


ARCHETYPES = {
    "winter": Archetype("winter", electric_mean=(520.0, 400.0, 420.0), heat_mean=(600.0, 350.0, 500.0),
                        irradiance_peak=0.85, temp_mean=2.0, wind_mean=8.0),
    "summer": Archetype("summer", electric_mean=(500.0, 380.0, 400.0), heat_mean=(380.0, 240.0, 340.0),
                        irradiance_peak=1.0, temp_mean=22.0, wind_mean=7.5),
}
DEFAULT_ARCHETYPE = "winter"

_H = np.arange(24)


def _bump(center: float, width: float) -> np.ndarray:
    return np.exp(-0.5 * ((_H - center) / width) ** 2)


def _shapes() -> tuple:
    """Unit-mean diurnal shapes for electric and heat load of each MG."""
    # MG1: rising through the working day with an evening peak, low before dawn
    e1 = 0.75 + 0.35 * _bump(14.0, 3.5) + 0.55 * _bump(19.5, 1.6) - 0.15 * _bump(3.0, 2.0)
    # MG2 / MG3: office-like days with a shallow midday dip when PV is high
    e2 = 0.8 + 0.45 * _bump(9.5, 2.0) + 0.5 * _bump(19.0, 2.2) - 0.2 * _bump(13.0, 1.8)
    e3 = 0.85 + 0.3 * _bump(8.0, 2.5) + 0.45 * _bump(20.0, 2.0) - 0.15 * _bump(13.5, 2.0)
    # heat peaks at night, MG1 strongest between 0:00 and 5:00
    h1 = 0.8 + 0.55 * _bump(2.5, 2.8) + 0.45 * _bump(23.5, 2.0) - 0.2 * _bump(14.0, 3.0)
    h2 = 0.9 + 0.3 * _bump(6.0, 2.5) + 0.3 * _bump(21.0, 2.5) - 0.2 * _bump(14.0, 3.0)
    h3 = 0.9 + 0.35 * _bump(5.0, 3.0) + 0.3 * _bump(22.0, 2.0) - 0.2 * _bump(13.0, 3.0)
    shapes = [np.stack([e1, e2, e3], 1), np.stack([h1, h2, h3], 1)]
    return tuple(s / s.mean(axis=0, keepdims=True) for s in shapes)


def synthesize(n_days: int, seed: int = 0, archetype: str = DEFAULT_ARCHETYPE) -> list:
    """Smooth diurnal curves with multiplicative day-level and hourly noise."""
    if n_days < 1:
        raise ValueError("n_days must be at least 1")
    if archetype not in ARCHETYPES:
        raise KeyError(f"unknown archetype {archetype!r}; available: {sorted(ARCHETYPES)}")
    a = ARCHETYPES[archetype]
    rng = np.random.default_rng(seed)
    e_shape, h_shape = _shapes()
    e_mean = np.array(a.electric_mean)
    h_mean = np.array(a.heat_mean)
    sun = np.clip(np.sin(np.pi * (_H - 6) / 12.0), 0.0, None) ** 1.5
    out = []
    for d in range(n_days):
        day_e = 1.0 + 0.06 * rng.standard_normal(3)
        day_h = 1.0 + 0.06 * rng.standard_normal(3)
        electric = e_shape * e_mean * day_e * (1.0 + a.noise * rng.standard_normal((24, 3)))
        heat = h_shape * h_mean * day_h * (1.0 + a.noise * rng.standard_normal((24, 3)))
        clouds = rng.uniform(0.55, 1.0)
        irr = a.irradiance_peak * clouds * sun * (1.0 + 0.05 * rng.standard_normal(24))
        irr = np.where(sun > 0, np.clip(irr, 0.0, None), 0.0)
        temp = a.temp_mean + rng.normal(0, 2.0) + 6.0 * np.sin(np.pi * (_H - 9) / 12.0) \
            + 0.5 * rng.standard_normal(24)
        wind_level = a.wind_mean * rng.uniform(0.7, 1.3)
        wind = np.empty(24)
        w = 0.0
        for h in range(24):
            w = 0.7 * w + 0.8 * rng.standard_normal()
            wind[h] = wind_level * (1.0 + 0.2 * np.cos(2 * np.pi * h / 24.0)) + w
        wind = np.clip(wind, 0.0, None)
        out.append(DayProfile(day=d, electric=np.clip(electric, 0.0, None), heat=np.clip(heat, 0.0, None),
                              irradiance=irr, temp_c=temp, wind_ms=wind))
    return out


def renewable_series(profile: DayProfile, system: list) -> tuple:
    """(PV, WT) in kW, each (24, 3), for the given microgrid devices."""
    from .devices import pv_output, wt_output
    pv = np.array([[pv_output(m.pv, profile.irradiance[h], profile.temp_c[h]) for m in system]
                   for h in range(24)])
    wt = np.array([[wt_output(m.wt, profile.wind_ms[h]) for m in system] for h in range(24)])
    return pv, wt
