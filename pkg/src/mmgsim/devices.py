"""Physical device models: renewables, gas-turbine banks, HRSG, CHP, combined-cycle
plants, gas boilers and the shared battery.

All part-load characteristics are :class:`DeviceCurve` objects that return a
*relative* value equal to 1 at their normalization point; multiply by
``rated_value`` (``curve.value``) for the absolute quantity.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

DOMAIN_TOL = 1e-9


class CurveDomainError(ValueError):
    pass


class DeviceBoundsError(ValueError):
    pass


class ComplementarityError(ValueError):
    pass


@dataclass
class DeviceCurve:
    """Scalar map ``x -> rel(x)`` with ``rel(origin) == 1``.

    Polynomial curves evaluate ``sum_k c_k * (x/input_scale - origin)**k`` in
    Horner form.  Surrogate curves wrap a fitted network predicting the same
    relative quantity.
    """

    name: str
    domain: tuple
    coefficients: list = field(default_factory=lambda: [1.0])
    rated_value: float = 1.0
    origin: float = 1.0
    input_scale: float = 1.0
    kind: str = "polynomial"
    surrogate: Optional[object] = None
    units: str = ""

    def _check(self, x: float) -> None:
        lo, hi = self.domain
        if not (lo - DOMAIN_TOL <= x <= hi + DOMAIN_TOL):
            raise CurveDomainError(f"{self.name}: input {x!r} outside domain [{lo}, {hi}]")

    def relative(self, x: float) -> float:
        x = float(x)
        self._check(x)
        u = x / self.input_scale - self.origin
        if self.kind == "surrogate":
            return float(self.surrogate.predict(np.array([[x / self.input_scale]]))[0])
        acc = 0.0
        for c in reversed(self.coefficients):
            acc = acc * u + c
        return acc

    def relative_array(self, xs) -> np.ndarray:
        return np.array([self.relative(x) for x in np.asarray(xs, dtype=float).ravel()])

    def value(self, x: float) -> float:
        return self.rated_value * self.relative(x)

    __call__ = relative

    def to_dict(self) -> dict:
        d = {"name": self.name, "domain": list(self.domain), "kind": self.kind,
             "rated_value": self.rated_value, "origin": self.origin,
             "input_scale": self.input_scale, "units": self.units}
        if self.kind == "polynomial":
            d["coefficients"] = list(self.coefficients)
        return d


def _curve_from_record(rec: dict, base: Optional[Path]) -> DeviceCurve:
    kind = rec.get("kind", "polynomial")
    curve = DeviceCurve(
        name=rec["name"], domain=tuple(rec["domain"]), rated_value=float(rec["rated_value"]),
        origin=float(rec.get("origin", 1.0)), input_scale=float(rec.get("input_scale", 1.0)),
        kind=kind, units=rec.get("units", ""),
    )
    if kind == "polynomial":
        curve.coefficients = [float(c) for c in rec["coefficients"]]
    elif kind == "surrogate":
        from .surrogate import load_surrogate
        path = Path(rec["checkpoint"])
        if not path.is_absolute() and base is not None:
            path = base / path
        curve.surrogate = load_surrogate(path)
    else:
        raise ValueError(f"curve {rec['name']!r}: unknown kind {kind!r}")
    return curve


def load_curves(path=None) -> dict:
    """Read a curve data file; defaults to the packaged ``data/curves.json``."""
    if path is None:
        text = resources.files("mmgsim").joinpath("data/curves.json").read_text()
        base = None
    else:
        path = Path(path)
        text = path.read_text()
        base = path.parent
    payload = json.loads(text)
    return {rec["name"]: _curve_from_record(rec, base) for rec in payload["curves"]}


def curve_records(path=None) -> list:
    """Raw curve records including the digitized points each polynomial was fitted to."""
    if path is None:
        text = resources.files("mmgsim").joinpath("data/curves.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)["curves"]


# --------------------------------------------------------------- renewables

@dataclass
class PvArray:
    eta: float = 0.18
    area: float = 400.0 / (0.18 * 0.8)  # reaches 400 kW at 1 kW/m2 and 15 C

    def __post_init__(self):
        if not (0 < self.eta < 1) or self.area <= 0:
            raise ValueError("PV efficiency must be in (0,1) and area positive")


def pv_output(array: PvArray, irradiance: float, t0: float) -> float:
    """PV power in kW for irradiance in kW/m2 and ambient temperature t0 in C."""
    irradiance = max(float(irradiance), 0.0)
    return max(array.eta * array.area * irradiance * (1.0 - 0.005 * (t0 + 25.0)), 0.0)


@dataclass
class WindTurbine:
    rho: float = 1.225
    area: float = 2000.0
    eta: float = 0.4
    rated_kw: float = 300.0

    def __post_init__(self):
        if min(self.rho, self.area, self.eta, self.rated_kw) <= 0 or self.eta >= 0.593:
            raise ValueError("wind turbine parameters must be positive and eta below the Betz limit")


def wt_output(turbine: WindTurbine, speed: float) -> float:
    speed = max(float(speed), 0.0)
    watts = 0.5 * turbine.rho * turbine.area * turbine.eta * speed ** 3
    return min(watts / 1000.0, turbine.rated_kw)


# --------------------------------------------------------------- gas turbines

@dataclass
class GasTurbineBank:
    n_units: int
    efficiency_curve: DeviceCurve
    heat_ratio_curve: DeviceCurve

    @property
    def capacity(self) -> float:
        return 200.0 * self.n_units

    @property
    def full_load_exhaust(self) -> float:
        return self.heat_ratio_curve.value(1.0) * self.capacity


@dataclass(frozen=True)
class GtPoint:
    eta: float
    fuel: float
    exhaust_heat: float


def gt_evaluate(bank: GasTurbineBank, p: float) -> GtPoint:
    if not (-DOMAIN_TOL <= p <= bank.capacity + DOMAIN_TOL):
        raise DeviceBoundsError(f"gas turbine output {p} kW outside [0, {bank.capacity}]")
    p = min(max(p, 0.0), bank.capacity)
    x = p / bank.capacity
    eta = bank.efficiency_curve.value(x)
    if eta <= 0:
        raise CurveDomainError(f"{bank.efficiency_curve.name}: non-positive efficiency at x={x}")
    exhaust = bank.heat_ratio_curve.value(x) * p
    return GtPoint(eta=eta, fuel=p / eta, exhaust_heat=exhaust)


@dataclass
class Hrsg:
    curve: DeviceCurve
    rated_input: float

    @property
    def rated_efficiency(self) -> float:
        return self.curve.rated_value


def hrsg_output(h: Hrsg, heat_in: float) -> float:
    if heat_in < -DOMAIN_TOL or heat_in > h.rated_input * (1 + 1e-12):
        raise DeviceBoundsError(f"HRSG input {heat_in} kW outside [0, {h.rated_input}]")
    heat_in = min(max(heat_in, 0.0), h.rated_input)
    return heat_in * h.curve.value(heat_in / h.rated_input)


def hrsg_efficiency(h: Hrsg, x: float) -> float:
    return h.curve.value(x)


@dataclass
class ChpUnit:
    turbine: GasTurbineBank
    hrsg: Hrsg
    eta_orc: float = 0.1


@dataclass(frozen=True)
class ChpOutput:
    power: float
    heat: float
    fuel: float
    exhaust_heat: float
    orc_power: float


def chp_dispatch(unit: ChpUnit, p_gt: float, beta: float) -> ChpOutput:
    if not (0.0 <= beta <= 1.0):
        raise DeviceBoundsError(f"distribution ratio beta={beta} outside [0, 1]")
    gt = gt_evaluate(unit.turbine, p_gt)
    orc = beta * gt.exhaust_heat * unit.eta_orc
    heat = hrsg_output(unit.hrsg, (1.0 - beta) * gt.exhaust_heat)
    return ChpOutput(power=p_gt + orc, heat=heat, fuel=gt.fuel,
                     exhaust_heat=gt.exhaust_heat, orc_power=orc)


# --------------------------------------------------------------- combined cycles

@dataclass
class BigccPlant:
    turbine: GasTurbineBank
    hrsg: Hrsg
    eta_g: float = 0.7676
    eta_st: float = 0.372


def bigcc_efficiency(plant: BigccPlant, x: float) -> float:
    """Overall efficiency: eta_G * (eta_C200 + eta_ST * eta_HRSG * R_HP * eta_C200)."""
    if not (0.0 < x <= 1.0 + DOMAIN_TOL):
        raise CurveDomainError(f"load fraction {x} outside (0, 1]")
    eta_gt = plant.turbine.efficiency_curve.value(x)
    r_hp = plant.turbine.heat_ratio_curve.value(x)
    eta_hr = plant.hrsg.curve.value(x)
    return plant.eta_g * (eta_gt + plant.eta_st * eta_hr * (r_hp * eta_gt))


def ccpp_plant(turbine: GasTurbineBank, hrsg: Hrsg, eta_st: float = 0.372) -> BigccPlant:
    """A combined cycle without the gasifier stage."""
    return BigccPlant(turbine=turbine, hrsg=hrsg, eta_g=1.0, eta_st=eta_st)


def ccpp_efficiency(plant: BigccPlant, x: float) -> float:
    return bigcc_efficiency(replace(plant, eta_g=1.0), x)


@dataclass(frozen=True)
class PlantOutput:
    power: float
    fuel: float
    gt_power: float


def plant_dispatch(plant: BigccPlant, p_gt: float) -> PlantOutput:
    """Electric output of a combined-cycle plant when its turbine bank runs at ``p_gt``.

    The plant converts the turbine's fuel at the overall cycle efficiency.
    """
    gt = gt_evaluate(plant.turbine, p_gt)
    if p_gt <= 0:
        return PlantOutput(0.0, 0.0, 0.0)
    x = p_gt / plant.turbine.capacity
    return PlantOutput(power=gt.fuel * bigcc_efficiency(plant, x), fuel=gt.fuel, gt_power=p_gt)


@dataclass
class GasBoiler:
    eta: float = 0.9
    h_max: float = 1000.0

    def fuel(self, heat: float) -> float:
        if heat < -DOMAIN_TOL or heat > self.h_max + DOMAIN_TOL:
            raise DeviceBoundsError(f"gas boiler output {heat} kW outside [0, {self.h_max}]")
        return max(heat, 0.0) / self.eta


# --------------------------------------------------------------- shared storage

@dataclass
class SharedStorage:
    retention_curve: DeviceCurve
    cr0: float = 3000.0
    soc: float = 0.5
    cycles: float = 0.0
    eta_charge: float = 0.95
    eta_discharge: float = 0.95
    p_max: float = 400.0
    soc0_min: float = 0.1
    soc0_max: float = 0.9

    @property
    def capacity(self) -> float:
        return capacity_retention(self, self.cycles)

    @property
    def retention(self) -> float:
        return self.retention_curve.relative(self.cycles)

    def soc_bounds(self, cycles: Optional[float] = None) -> tuple:
        f = self.retention_curve.relative(self.cycles if cycles is None else cycles)
        return f * self.soc0_min, f * self.soc0_max

    def headroom(self, dt: float = 1.0) -> tuple:
        """Max (charge, discharge) power in kW that keeps SOC inside the current bounds."""
        lo, hi = self.soc_bounds()
        cap = self.capacity
        charge = max(hi - self.soc, 0.0) * cap / (self.eta_charge * dt)
        discharge = max(self.soc - lo, 0.0) * cap * self.eta_discharge / dt
        return min(charge, self.p_max), min(discharge, self.p_max)


@dataclass(frozen=True)
class StorageResult:
    soc: float
    cycles: float
    violation: float


def capacity_retention(s: SharedStorage, cycles: float) -> float:
    if cycles < 0:
        raise CurveDomainError("cycle count must be nonnegative")
    return s.cr0 * s.retention_curve.relative(cycles)


def storage_step(s: SharedStorage, p_plus: float, p_minus: float, dt: float = 1.0) -> StorageResult:
    """Advance SOC and cycle count by one interval; mutates ``s``.

    SOC is a fraction of the degraded capacity CR(T).  The returned violation is
    the SOC overflow beyond the dynamic bounds before clamping.
    """
    if p_plus < 0 or p_minus < 0:
        raise DeviceBoundsError("charge and discharge powers must be nonnegative")
    if p_plus > s.p_max + DOMAIN_TOL or p_minus > s.p_max + DOMAIN_TOL:
        raise DeviceBoundsError(f"storage power above P_SS_max={s.p_max}")
    if p_plus > 0 and p_minus > 0:
        raise ComplementarityError("simultaneous charge and discharge")
    cap = capacity_retention(s, s.cycles)
    soc = s.soc + p_plus * dt * s.eta_charge / cap - p_minus * dt / (s.eta_discharge * cap)
    cycles = s.cycles + (p_plus + p_minus) * dt / (2.0 * cap)
    lo, hi = s.soc_bounds(cycles)
    violation = 0.0
    if soc > hi:
        violation, soc = soc - hi, hi
    elif soc < lo:
        violation, soc = lo - soc, lo
    s.soc, s.cycles = soc, cycles
    return StorageResult(soc=soc, cycles=cycles, violation=violation)


# --------------------------------------------------------------- assembly

@dataclass
class MicrogridDevices:
    pv: PvArray
    wt: WindTurbine
    boiler: GasBoiler
    chp: Optional[ChpUnit] = None
    plant: Optional[BigccPlant] = None

    @property
    def turbine(self) -> GasTurbineBank:
        return self.chp.turbine if self.chp is not None else self.plant.turbine

    @property
    def max_power(self) -> float:
        if self.chp is not None:
            return self.chp.turbine.capacity + self.chp.turbine.full_load_exhaust * self.chp.eta_orc
        return plant_dispatch(self.plant, self.plant.turbine.capacity).power


def default_system(curves: Optional[dict] = None, n_units=(4, 6, 5), wt_rated=(300.0, 200.0, 200.0),
                   pv_rated=(400.0, 400.0, 400.0), gb_max=(1000.0, 600.0, 1000.0),
                   eta_gb: float = 0.9, eta_orc: float = 0.1) -> list:
    """The three microgrids: MG1 CHP, MG2 biomass combined cycle, MG3 combined cycle."""
    curves = curves or load_curves()
    out = []
    for i in range(3):
        bank = GasTurbineBank(n_units[i], curves["eta_c200"], curves["r_hp"])
        hrsg = Hrsg(curves["eta_hrsg"], rated_input=bank.full_load_exhaust)
        pv = PvArray(eta=0.18, area=pv_rated[i] / (0.18 * 0.8))
        # blade area sized so the rated output is reached at 12 m/s
        wt = WindTurbine(area=wt_rated[i] * 1000.0 / (0.5 * 1.225 * 0.4 * 12.0 ** 3), rated_kw=wt_rated[i])
        boiler = GasBoiler(eta=eta_gb, h_max=gb_max[i])
        if i == 0:
            out.append(MicrogridDevices(pv, wt, boiler, chp=ChpUnit(bank, hrsg, eta_orc)))
        elif i == 1:
            out.append(MicrogridDevices(pv, wt, boiler, plant=BigccPlant(bank, hrsg)))
        else:
            out.append(MicrogridDevices(pv, wt, boiler, plant=ccpp_plant(bank, hrsg)))
    return out


def default_storage(curves: Optional[dict] = None, **overrides) -> SharedStorage:
    curves = curves or load_curves()
    return SharedStorage(retention_curve=curves["retention"], **overrides)
