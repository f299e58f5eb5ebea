import numpy as np
import pytest

from core.cues import (
    bin_to_grid,
    compare_sets,
    estimate_itd,
    grid_nodes,
    ild_db,
    log_magnitude,
    lsd_db,
    lsd_frequency_curve,
    magnitude_response_map,
    mean_lsd_db,
    mean_magnitude_map,
    spatial_grid_differences,
)
from core.errors import ConfigError, HeterogeneousGrids, InsufficientSubjects, LengthMismatch
from core.model import Direction, MetricConfig
from models.sphere import BandBoost, Perturbation, SphereModelConfig, generate_sphere_set, perturb_set, woodworth_itd_us

from conftest import pulse_set

GAIN_6DB = 20 * np.log10(2.0)


def test_itd_sign_convention(integer_metric):
    # 右耳晚 10 个样本 → 左耳先到 → 正 ITD
    s = pulse_set([[40, 50]])
    assert estimate_itd(s, 0, integer_metric) == pytest.approx(10 / 48000 * 1e6)


def test_itd_follows_woodworth_on_default_grid():
    cfg = SphereModelConfig()
    s = generate_sphere_set(cfg)
    metric = MetricConfig()
    period_us = 1e6 / cfg.sample_rate_hz
    assert s.n_directions == 24 * 9 + 1
    for d, direction in enumerate(s.directions):
        expected = woodworth_itd_us(cfg, direction)
        assert abs(estimate_itd(s, d, metric) - expected) <= period_us + 0.05 * abs(expected)


def test_ild_sign_and_value(integer_metric):
    s = pulse_set([[40, 40]])
    impulses = np.array(s.impulses)
    impulses[0, 1] *= 2.0
    assert ild_db(s.replace(impulses=impulses), 0, integer_metric) == pytest.approx(GAIN_6DB, abs=1e-6)
    assert ild_db(s, 0, integer_metric) == 0.0


def test_self_comparison_is_zero(shadow_set):
    report = compare_sets(shadow_set, shadow_set, MetricConfig())
    assert report.mean_abs_itd_us == 0.0
    assert report.mean_abs_ild_db == 0.0
    assert report.mean_lsd_db == 0.0
    assert all(rec.lsd_left_db == 0.0 and rec.lsd_right_db == 0.0 for rec in report.records)


def test_right_ear_gain_shows_in_ild_and_right_lsd(sphere_set):
    cand, _ = perturb_set(sphere_set, Perturbation(ear_gain_db=(0.0, GAIN_6DB)))
    report = compare_sets(cand, sphere_set, MetricConfig())
    for rec in report.records:
        assert rec.ild_abs_err_db == pytest.approx(GAIN_6DB, abs=1e-6)
        assert rec.ild_signed_db == pytest.approx(GAIN_6DB, abs=1e-6)
        assert rec.lsd_right_db == pytest.approx(GAIN_6DB, abs=1e-6)
        assert rec.lsd_left_db == pytest.approx(0.0, abs=1e-9)
        assert rec.itd_abs_err_us == 0.0
    assert report.mean_lsd_db == pytest.approx(GAIN_6DB / 2, abs=1e-6)
    assert report.mean_lsd_right_db == pytest.approx(GAIN_6DB, abs=1e-6)


def test_compare_matches_permuted_directions(sphere_set):
    order = list(reversed(range(sphere_set.n_directions)))
    shuffled = sphere_set.replace(
        directions=tuple(sphere_set.directions[i] for i in order),
        impulses=sphere_set.impulses[order],
    )
    report = compare_sets(shuffled, sphere_set, MetricConfig())
    assert [rec.direction for rec in report.records] == list(sphere_set.directions)
    assert report.mean_lsd_db == 0.0


def test_length_mismatch(sphere_set):
    short = sphere_set.replace(impulses=sphere_set.impulses[:, :, :200])
    with pytest.raises(LengthMismatch):
        compare_sets(short, sphere_set, MetricConfig())


def test_band_boost_confined_to_band(sphere_set):
    cfg = MetricConfig()
    cand, ledger = perturb_set(sphere_set, Perturbation(band_boosts=(BandBoost(8000.0, 10000.0, 6.0),)))
    freqs = np.fft.rfftfreq(sphere_set.length, 1.0 / sphere_set.sample_rate_hz)
    inside = (freqs >= 8000.0) & (freqs <= 10000.0)
    diff = log_magnitude(cand.impulses, cfg) - log_magnitude(sphere_set.impulses, cfg)
    assert np.allclose(diff[..., inside], 6.0, atol=1e-6)
    assert np.all(np.abs(diff[..., ~inside]) < 1e-9)

    curve = lsd_frequency_curve([cand], [sphere_set], cfg)
    assert np.allclose(curve.lsd_db, ledger.frequency_lsd(), atol=1e-6)
    assert np.all(curve.lsd_sd_db == 0.0)


def test_lsd_band_restriction(sphere_set):
    cand, _ = perturb_set(sphere_set, Perturbation(band_boosts=(BandBoost(8000.0, 10000.0, 6.0),)))
    in_band = MetricConfig(freq_band_hz=(8000.0, 10000.0))
    out_band = MetricConfig(freq_band_hz=(1000.0, 7000.0))
    assert lsd_db(cand, sphere_set, (0, 0), 'left', in_band) == pytest.approx(6.0, abs=1e-6)
    assert lsd_db(cand, sphere_set, (0, 0), 'right', out_band) == pytest.approx(0.0, abs=1e-9)
    assert mean_lsd_db(cand, sphere_set, in_band) == pytest.approx(6.0, abs=1e-6)
    with pytest.raises(ConfigError):
        lsd_db(cand, sphere_set, (0, 0), 'left', MetricConfig(freq_band_hz=(100.0, 150.0)))
    with pytest.raises(ConfigError):
        lsd_db(cand, sphere_set, (0, 0), 'middle', in_band)


def test_frequency_curve_over_subjects(sphere_set):
    cfg = MetricConfig()
    cands = [perturb_set(sphere_set, Perturbation(ear_gain_db=(g, g)))[0] for g in (1.0, 3.0)]
    curve = lsd_frequency_curve(cands, [sphere_set, sphere_set], cfg, label='gain')
    assert curve.n_subjects == 2
    assert curve.label == 'gain'
    assert curve.freq_bins_hz[-1] == pytest.approx(24000.0)
    assert np.allclose(curve.lsd_db, 2.0, atol=1e-6)
    assert np.allclose(curve.lsd_sd_db, 1.0, atol=1e-6)


def test_frequency_curve_heterogeneous(sphere_set):
    other = pulse_set([[40, 40]], fs=44100)
    with pytest.raises(HeterogeneousGrids):
        lsd_frequency_curve([other, sphere_set], [sphere_set, sphere_set], MetricConfig())
    with pytest.raises(HeterogeneousGrids):
        lsd_frequency_curve([], [], MetricConfig())


def test_grid_nodes():
    nodes = grid_nodes(45.0)
    assert len(nodes) == 26
    assert sum(1 for n in nodes if abs(n.elevation_deg) == 90.0) == 2
    assert len(grid_nodes(30.0)) == 12 * 5 + 2
    with pytest.raises(ConfigError):
        grid_nodes(40.0)


def test_bin_to_grid_tie_goes_to_first_node():
    nodes = grid_nodes(45.0)
    idx = bin_to_grid([Direction(22.5, 0.0), Direction(44.0, 1.0)], nodes)
    assert nodes[idx[0]] == Direction(0.0, 0.0)
    assert nodes[idx[1]] == Direction(45.0, 0.0)


def _gain_reports(base, gains):
    reports = []
    for i, g in enumerate(gains):
        cand, _ = perturb_set(base, Perturbation(ear_gain_db=(0.0, g)))
        reports.append(compare_sets(cand.replace(subject_id=f"S{i}"), base, MetricConfig()))
    return reports


def test_spatial_grid_differences(sphere_set):
    summary = spatial_grid_differences(_gain_reports(sphere_set, [2.0, 3.0, 4.0]), 'ild', 45.0)
    assert summary.n_subjects == 3
    assert len(summary.nodes) == sphere_set.n_directions
    assert summary.excluded == ()
    for node in summary.nodes:
        assert node.n_subjects == 3
        assert node.mean_diff == pytest.approx(3.0, abs=1e-6)
        assert node.t_statistic == pytest.approx(3.0 / (1.0 / np.sqrt(3)), rel=1e-6)
        assert node.p_adjusted >= node.p_value
        assert node.tier >= 1
    assert len(summary.significant()) == len(summary.nodes)


def test_spatial_zero_variance_nodes(sphere_set):
    summary = spatial_grid_differences(_gain_reports(sphere_set, [0.0, 0.0, 0.0]), 'itd', 45.0)
    assert all(n.p_value == 1.0 and n.t_statistic == 0.0 for n in summary.nodes)
    assert summary.significant() == []


def test_spatial_requires_three_subjects(sphere_set):
    with pytest.raises(InsufficientSubjects):
        spatial_grid_differences(_gain_reports(sphere_set, [1.0, 2.0]), 'ild')
    with pytest.raises(ConfigError):
        spatial_grid_differences(_gain_reports(sphere_set, [1.0, 2.0, 3.0]), 'loudness')


def test_magnitude_maps(sphere_set):
    cfg = MetricConfig()
    horizontal = magnitude_response_map(sphere_set, 'left', 'horizontal', cfg)
    assert horizontal.angles_deg.tolist() == [0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0]
    assert horizontal.freq_hz[-1] <= 20000.0
    assert horizontal.magnitude_db.shape == (8, horizontal.freq_hz.size)
    assert np.allclose(horizontal.magnitude_db, 0.0, atol=1e-6)

    median = magnitude_response_map(sphere_set, 'right', 'median', cfg)
    # 极角范围 (−90, 270]
    assert np.allclose(median.angles_deg, [-45.0, 0.0, 45.0, 90.0, 135.0, 180.0, 225.0])

    mean = mean_magnitude_map([sphere_set, sphere_set], 0, 'horizontal', cfg)
    assert mean.n_sets == 2
    assert np.allclose(mean.magnitude_db, horizontal.magnitude_db)

    with pytest.raises(ConfigError):
        magnitude_response_map(sphere_set, 'left', 'frontal', cfg)
