import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from core.errors import ConfigError, InvalidDirection, InvalidHrirSet, UnmatchedDirection
from core.model import (
    Direction,
    HrirSet,
    LateralPolar,
    MetricConfig,
    apply_azimuth_convention,
    from_lateral_polar,
    great_circle_deg,
    match_directions,
    mirror_front_back,
    to_lateral_polar,
)


def test_direction_wraps_azimuth():
    assert Direction(-90.0, 0.0).azimuth_deg == 270.0
    assert Direction(360.0, 10.0).azimuth_deg == 0.0
    assert Direction(725.0, 0.0).azimuth_deg == pytest.approx(5.0)


def test_direction_pole_normalised():
    assert Direction(123.0, 90.0).azimuth_deg == 0.0
    assert Direction(200.0, -90.0).azimuth_deg == 0.0


@pytest.mark.parametrize('az, el, r', [
    (0.0, 91.0, 1.5),
    (0.0, -95.0, 1.5),
    (math.nan, 0.0, 1.5),
    (0.0, 0.0, 0.0),
    (math.inf, 0.0, 1.5),
])
def test_direction_invalid(az, el, r):
    with pytest.raises(InvalidDirection):
        Direction(az, el, r)


def test_lateral_polar_cardinal_points():
    front = to_lateral_polar(Direction(0.0, 0.0))
    assert front.lateral_deg == pytest.approx(0.0)
    assert front.polar_deg == pytest.approx(0.0)

    back = to_lateral_polar(Direction(180.0, 0.0))
    assert back.lateral_deg == pytest.approx(0.0, abs=1e-9)
    assert back.polar_deg == pytest.approx(180.0)

    top = to_lateral_polar(Direction(0.0, 90.0))
    assert top.polar_deg == pytest.approx(90.0)

    bottom = to_lateral_polar(Direction(0.0, -90.0))
    assert bottom.polar_deg == pytest.approx(-90.0)


def test_lateral_polar_interaural_axis_is_degenerate():
    left = to_lateral_polar(Direction(90.0, 0.0))
    assert left.lateral_deg == 90.0
    assert left.polar_deg == 0.0
    assert left.degenerate

    right = to_lateral_polar(Direction(270.0, 0.0))
    assert right.lateral_deg == -90.0


def test_polar_range():
    lp = LateralPolar(10.0, 300.0)
    assert lp.polar_deg == pytest.approx(-60.0)
    with pytest.raises(InvalidDirection):
        LateralPolar(95.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(
    az=st.floats(min_value=0.0, max_value=359.999),
    el=st.floats(min_value=-89.5, max_value=89.5),
)
def test_lateral_polar_round_trip(az, el):
    d = Direction(az, el)
    lp = to_lateral_polar(d)
    assume(abs(lp.lateral_deg) < 89.9)
    back = from_lateral_polar(lp)
    assert great_circle_deg(d, back) < 1e-6


def test_great_circle():
    assert great_circle_deg(Direction(0, 0), Direction(90, 0)) == pytest.approx(90.0)
    assert great_circle_deg(Direction(0, 0), Direction(180, 0)) == pytest.approx(180.0)
    assert great_circle_deg(Direction(10, 90), Direction(250, 90)) == pytest.approx(0.0, abs=1e-9)
    assert great_circle_deg(Direction(0, 0), Direction(0, 1e-6)) == pytest.approx(1e-6, rel=1e-6)


def test_mirror_front_back():
    m = mirror_front_back(Direction(30.0, 10.0))
    assert m.azimuth_deg == pytest.approx(150.0)
    assert m.elevation_deg == 10.0
    # 镜像保持侧向角
    assert to_lateral_polar(m).lateral_deg == pytest.approx(to_lateral_polar(Direction(30.0, 10.0)).lateral_deg)


def _set(directions, length=200):
    impulses = np.zeros((len(directions), 2, length))
    impulses[:, :, 10] = 1.0
    return HrirSet(48000, tuple(directions), impulses)


def test_hrir_set_invariants():
    with pytest.raises(InvalidHrirSet):
        _set([Direction(0, 0)], length=144)
    with pytest.raises(InvalidHrirSet):
        _set([Direction(0, 0), Direction(0.05, 0)])
    with pytest.raises(InvalidHrirSet):
        HrirSet(0, (Direction(0, 0),), np.zeros((1, 2, 200)))
    bad = np.zeros((1, 2, 200))
    bad[0, 0, 3] = np.nan
    with pytest.raises(InvalidHrirSet):
        HrirSet(48000, (Direction(0, 0),), bad)


def test_hrir_set_is_immutable():
    s = _set([Direction(0, 0)])
    with pytest.raises(ValueError):
        s.impulses[0, 0, 0] = 2.0


def test_match_directions_permuted():
    ref = _set([Direction(0, 0), Direction(90, 0), Direction(180, 0)])
    cand = _set([Direction(180.2, 0), Direction(0, 0.1), Direction(90, 0)])
    pairs = match_directions(cand, ref, tol_deg=0.5)
    assert pairs == [(1, 0), (2, 1), (0, 2)]


def test_match_directions_unmatched():
    ref = _set([Direction(0, 0), Direction(90, 0)])
    cand = _set([Direction(0, 0), Direction(92, 0)])
    with pytest.raises(UnmatchedDirection):
        match_directions(cand, ref, tol_deg=0.5)


def test_apply_azimuth_convention():
    s = _set([Direction(90, 0), Direction(30, 10)])
    flipped = apply_azimuth_convention(s, 'clockwise')
    assert flipped.directions[0].azimuth_deg == pytest.approx(270.0)
    assert flipped.directions[1].azimuth_deg == pytest.approx(330.0)
    assert apply_azimuth_convention(s, 'counterclockwise') is s
    with pytest.raises(ConfigError):
        apply_azimuth_convention(s, 'sideways')


def test_metric_config_validation():
    with pytest.raises(ConfigError):
        MetricConfig(epsilon=0.0)
    with pytest.raises(ConfigError):
        MetricConfig(upsample_factor=0)
    with pytest.raises(ConfigError):
        MetricConfig(freq_band_hz=(16000.0, 1000.0))
    cfg = MetricConfig.from_dict({'freq_band_hz': [1000, 16000]})
    assert cfg.freq_band_hz == (1000.0, 16000.0)
