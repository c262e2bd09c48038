import numpy as np
import pytest

from mmgsim.devices import default_system
from mmgsim.profiles import (ARCHETYPES, HEADER, ProfileError, load_csv, renewable_series, synthesize,
                             write_csv)


def test_header_exact():
    assert ",".join(HEADER) == "day,hour,mg1_e,mg1_h,mg2_e,mg2_h,mg3_e,mg3_h,irradiance,temp_c,wind_ms"


def test_night_has_no_sun():
    for p in synthesize(5, seed=0):
        assert p.irradiance[0] == 0.0 and p.irradiance[23] == 0.0


def test_same_seed_same_profiles():
    a, b = synthesize(3, seed=7), synthesize(3, seed=7)
    for x, y in zip(a, b):
        assert np.array_equal(x.electric, y.electric) and np.array_equal(x.wind_ms, y.wind_ms)


def test_mean_load_near_archetype():
    days = synthesize(30, seed=1)
    mean = np.mean([d.electric[:, 0].mean() for d in days])
    target = ARCHETYPES["winter"].electric_mean[0]
    assert abs(mean - target) <= 0.2 * target


def test_peak_load_coverable():
    system = default_system()
    for arch in ARCHETYPES:
        for d in synthesize(30, seed=2, archetype=arch):
            for m in range(3):
                assert d.electric[:, m].max() <= system[m].max_power + 400.0


def test_renewable_coverage_band():
    system = default_system()
    for arch in ARCHETYPES:
        days = synthesize(30, seed=3, archetype=arch)
        ren = sum(sum(renewable_series(d, system)).sum() for d in days)
        load = sum(d.electric.sum() for d in days)
        assert 0.3 <= ren / load <= 0.6


def test_round_trip(tmp_path):
    days = synthesize(2, seed=4)
    path = tmp_path / "p.csv"
    write_csv(days, path)
    back = load_csv(path)
    assert len(back) == 2
    for a, b in zip(days, back):
        assert np.allclose(a.electric, b.electric, atol=5e-7)
        assert np.allclose(a.temp_c, b.temp_c, atol=5e-7)
    write_csv(back, tmp_path / "q.csv")
    assert (tmp_path / "q.csv").read_text() == path.read_text()


def test_short_day_names_day(tmp_path):
    path = tmp_path / "p.csv"
    write_csv(synthesize(1, seed=5), path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(ProfileError, match="day 0"):
        load_csv(path)


def test_negative_load_reports_row(tmp_path):
    path = tmp_path / "p.csv"
    write_csv(synthesize(1, seed=6), path)
    lines = path.read_text().splitlines()
    fields = lines[3].split(",")
    fields[2] = "-1.0"
    lines[3] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ProfileError) as e:
        load_csv(path)
    assert e.value.row == 4


def test_missing_column(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("day,hour,mg1_e\n0,0,1\n")
    with pytest.raises(ProfileError):
        load_csv(path)


def test_unknown_archetype():
    with pytest.raises(KeyError):
        synthesize(1, archetype="monsoon")
