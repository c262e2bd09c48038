import math

import numpy as np
import pytest

from mmgsim.devices import (BigccPlant, ComplementarityError, CurveDomainError, DeviceBoundsError,
                            DeviceCurve, GasTurbineBank, Hrsg, PvArray, WindTurbine, bigcc_efficiency,
                            capacity_retention, ccpp_efficiency, chp_dispatch, curve_records, default_storage,
                            default_system, gt_evaluate, hrsg_output, load_curves, pv_output, storage_step,
                            wt_output)


@pytest.fixture(scope="module")
def curves():
    return load_curves()


@pytest.fixture(scope="module")
def system(curves):
    return default_system(curves)


def test_pv_zero_irradiance():
    assert pv_output(PvArray(), 0.0, 10.0) == 0.0


def test_pv_hand_value():
    assert pv_output(PvArray(eta=0.15, area=10.0), 0.8, 25.0) == pytest.approx(0.9)


def test_pv_thermal_factor_zero():
    assert pv_output(PvArray(), 1.0, 175.0) == 0.0


def test_wt_hand_value():
    assert wt_output(WindTurbine(rho=1.225, area=100.0, eta=0.4, rated_kw=1e6), 5.0) == pytest.approx(3.0625)


def test_wt_zero_and_saturation():
    wt = WindTurbine(rated_kw=300.0)
    assert wt_output(wt, 0.0) == 0.0
    assert wt_output(wt, 1e4) == 300.0


def test_wt_betz_bound():
    with pytest.raises(ValueError):
        WindTurbine(eta=0.6)


def test_curves_normalized(curves):
    for c in curves.values():
        point = c.origin * c.input_scale
        assert c.relative(point) == pytest.approx(1.0, abs=1e-12)


def test_curve_domain_checked(curves):
    with pytest.raises(CurveDomainError):
        curves["eta_c200"].relative(1.5)


def test_curve_horner_matches_polyval():
    c = DeviceCurve("t", (0.0, 1.0), [1.0, 0.5, -0.25, 0.125])
    x = 0.37
    expect = np.polyval([0.125, -0.25, 0.5, 1.0], x - 1.0)
    assert c.relative(x) == pytest.approx(expect, rel=1e-15)


def test_curve_fits_digitized_points():
    for rec in curve_records():
        c = load_curves()[rec["name"]]
        xs, ys = rec["digitized"]["x"], rec["digitized"]["y"]
        err = max(abs(c.relative(x) - y) for x, y in zip(xs, ys))
        assert err < 0.02, rec["name"]


def test_gt_full_load_rated(system):
    bank = system[0].turbine
    pt = gt_evaluate(bank, bank.capacity)
    assert pt.eta == pytest.approx(bank.efficiency_curve.rated_value)


def test_gt_half_load_below_full(system):
    bank = system[0].turbine
    assert gt_evaluate(bank, 0.5 * bank.capacity).eta < gt_evaluate(bank, bank.capacity).eta


def test_gt_fuel_identity(system):
    bank = system[1].turbine
    for p in np.linspace(1.0, bank.capacity, 50):
        pt = gt_evaluate(bank, p)
        assert pt.fuel * pt.eta == pytest.approx(p, rel=1e-14)


def test_gt_bounds(system):
    with pytest.raises(DeviceBoundsError):
        gt_evaluate(system[0].turbine, 1e5)


def test_hrsg_values(system):
    h = system[0].chp.hrsg
    assert hrsg_output(h, 0.0) == 0.0
    assert hrsg_output(h, h.rated_input) == pytest.approx(h.rated_input * h.rated_efficiency)
    half = hrsg_output(h, 0.5 * h.rated_input) / (0.5 * h.rated_input)
    assert half <= h.rated_efficiency
    with pytest.raises(DeviceBoundsError):
        hrsg_output(h, 2 * h.rated_input)


def test_chp_beta_extremes(system):
    chp = system[0].chp
    p = 500.0
    h = gt_evaluate(chp.turbine, p).exhaust_heat
    zero = chp_dispatch(chp, p, 0.0)
    one = chp_dispatch(chp, p, 1.0)
    assert zero.power == p
    assert zero.heat == pytest.approx(hrsg_output(chp.hrsg, h))
    assert one.heat == 0.0
    assert one.power == pytest.approx(p + 0.1 * h)
    with pytest.raises(DeviceBoundsError):
        chp_dispatch(chp, p, 1.2)


def test_bigcc_structural_identity():
    ones = DeviceCurve("one", (0.0, 1.0), [1.0])
    bank = GasTurbineBank(4, ones, ones)
    plant = BigccPlant(bank, Hrsg(ones, 800.0), eta_g=0.7676, eta_st=1.0)
    assert bigcc_efficiency(plant, 1.0) == pytest.approx(1.5352)


def test_bigcc_shipped_curves(system):
    plant = system[1].plant
    assert 0.0 < bigcc_efficiency(plant, 1.0) < 0.6
    xs = np.linspace(0.3, 1.0, 71)
    vals = [bigcc_efficiency(plant, x) for x in xs]
    assert np.all(np.diff(vals) >= -1e-12)
    with pytest.raises(CurveDomainError):
        bigcc_efficiency(plant, 0.0)


def test_ccpp_has_no_gasifier(system):
    plant = system[2].plant
    assert plant.eta_g == 1.0
    assert ccpp_efficiency(plant, 1.0) > bigcc_efficiency(system[1].plant, 1.0)


def test_storage_hand_example(curves):
    s = default_storage(curves)
    r = storage_step(s, 300.0, 0.0)
    assert r.soc == pytest.approx(0.5 + 300 * 0.95 / 3000)
    assert r.violation == 0.0


def test_storage_idle(curves):
    s = default_storage(curves)
    r = storage_step(s, 0.0, 0.0)
    assert r.soc == 0.5 and r.violation == 0.0


def test_storage_overflow_clamped(curves):
    s = default_storage(curves, soc=0.89)
    r = storage_step(s, 400.0, 0.0)
    lo, hi = s.soc_bounds(r.cycles)
    assert r.soc == pytest.approx(hi)
    assert r.violation > 0


def test_storage_complementarity(curves):
    with pytest.raises(ComplementarityError):
        storage_step(default_storage(curves), 10.0, 10.0)


def test_storage_cycle_accounting(curves):
    s = default_storage(curves)
    r = storage_step(s, 300.0, 0.0)
    assert r.cycles == pytest.approx(300.0 / (2 * 3000.0))


def test_capacity_retention(curves):
    s = default_storage(curves)
    assert capacity_retention(s, 0.0) == 3000.0
    f = curves["retention"]
    vals = [capacity_retention(s, t) for t in np.linspace(0, 1000, 101)]
    assert np.all(np.diff(vals) <= 1e-12)
    u = 0.5
    coeff = f.coefficients
    assert capacity_retention(s, 500.0) == pytest.approx(3000 * sum(c * u ** k for k, c in enumerate(coeff)))
    with pytest.raises(CurveDomainError):
        capacity_retention(s, 2000.0)


def test_default_system_layout(system):
    assert [m.turbine.n_units for m in system] == [4, 6, 5]
    assert system[0].chp is not None and system[1].plant.eta_g == pytest.approx(0.7676)
    assert [m.boiler.h_max for m in system] == [1000.0, 600.0, 1000.0]
    assert math.isclose(system[0].chp.eta_orc, 0.1)
