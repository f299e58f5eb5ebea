import math

import numpy as np
import pytest

from core.behavior import (
    BehaviorConfig,
    ParticipantSummary,
    classify_confusion,
    condition_tests,
    group_summary,
    log_trial_metrics,
    lsd_correlation_table,
    participant_summary,
    plane_correlation,
    quadrant_of,
    summarize_log,
    table_condition_tests,
    trial_metrics,
    wrap_180,
)
from core.errors import ConfigError, DegenerateShape, EmptyInput, InsufficientSubjects, NoTrials
from core.model import Direction, LateralPolar, mirror_front_back
from models.sphere import ResponseModel, localisation_grid, simulate_responses
from utils.logs import ResponseLog, Trial

OFF_AXIS_TARGETS = [Direction(az, el) for az in (30.0, 60.0, 120.0, 150.0) for el in (0.0, 30.0)]


def _log(pairs, participant='P1', condition='c'):
    return ResponseLog(tuple(
        Trial(participant, condition, i + 1, target, response) for i, (target, response) in enumerate(pairs)
    ))


def test_wrap_180():
    assert wrap_180(-340.0) == 20.0
    assert wrap_180(180.0) == 180.0
    assert wrap_180(-180.0) == 180.0
    assert wrap_180(-10.0) == -10.0


def test_quadrant_boundaries():
    assert quadrant_of(LateralPolar(0.0, 0.0)) == 'front_up'
    assert quadrant_of(LateralPolar(0.0, -10.0)) == 'front_down'
    assert quadrant_of(LateralPolar(0.0, 90.0)) == 'back_up'
    assert quadrant_of(LateralPolar(0.0, 180.0)) == 'back_down'
    assert quadrant_of(LateralPolar(0.0, -90.0)) == 'front_down'


def test_confusion_classes():
    target = Direction(30.0, 0.0)
    assert classify_confusion(target, Direction(40.0, 10.0)) == 'precision'
    assert classify_confusion(target, Direction(150.0, 0.0)) == 'front_back'
    assert classify_confusion(target, Direction(30.0, 60.0)) == 'in_cone'
    assert classify_confusion(target, Direction(270.0, 0.0)) == 'off_cone'


def test_trial_metrics_values():
    m = trial_metrics(Direction(0.0, 0.0), Direction(10.0, 0.0))
    assert m.great_circle_deg == pytest.approx(10.0)
    assert m.lateral_error_deg == pytest.approx(10.0)
    assert m.polar_error_deg == pytest.approx(0.0, abs=1e-9)
    assert m.confusion_class == 'precision'
    assert not m.is_quadrant_error
    assert m.near_axis is False


def test_horizontal_back_response_is_quadrant_error():
    m = trial_metrics(Direction(30.0, 0.0), Direction(150.0, 0.0))
    assert m.quadrant_target == 'front_up'
    # 极角恰为 180，按边界规则归入 back_down
    assert m.quadrant_response == 'back_down'
    assert m.is_quadrant_error
    assert m.confusion_class == 'front_back'


def test_quadrant_rules_differ():
    target, response = Direction(0.0, 0.0), Direction(0.0, -10.0)
    assert trial_metrics(target, response).is_quadrant_error
    loose = BehaviorConfig(quadrant_rule='polar_error_90')
    assert not trial_metrics(target, response, loose).is_quadrant_error
    with pytest.raises(ConfigError):
        BehaviorConfig(quadrant_rule='loose')


def test_near_axis_targets_flagged():
    assert trial_metrics(Direction(90.0, 0.0), Direction(90.0, 0.0)).near_axis


def test_mirrored_responses_are_all_confusions():
    log = _log([(t, mirror_front_back(t)) for t in OFF_AXIS_TARGETS])
    summary = participant_summary(log, 'P1', 'c')
    assert summary.front_back_rate == 100.0
    assert summary.quadrant_error_rate == 100.0
    assert math.isnan(summary.polar_accuracy_local_deg)
    assert summary.n_locations == len(OFF_AXIS_TARGETS)


def test_perfect_responses_are_zero():
    log = _log([(t, t) for t in OFF_AXIS_TARGETS] * 2)
    summary = participant_summary(log, 'P1', 'c')
    for metric in ('great_circle_deg', 'lateral_accuracy_deg', 'lateral_precision_deg',
                   'polar_accuracy_deg', 'polar_precision_deg', 'front_back_rate', 'quadrant_error_rate'):
        assert summary.metric(metric) == pytest.approx(0.0, abs=1e-9)
    assert summary.polar_accuracy_local_deg == pytest.approx(0.0, abs=1e-9)
    assert summary.n_trials == 2 * len(OFF_AXIS_TARGETS)


def test_precision_is_population_sd_per_location():
    target = Direction(30.0, 0.0)
    log = _log([(target, Direction(20.0, 0.0)), (target, Direction(40.0, 0.0))])
    summary = participant_summary(log, 'P1', 'c')
    assert summary.lateral_accuracy_deg == pytest.approx(10.0)
    assert summary.lateral_precision_deg == pytest.approx(10.0)


def test_no_trials():
    with pytest.raises(NoTrials):
        participant_summary(_log([(OFF_AXIS_TARGETS[0], OFF_AXIS_TARGETS[0])]), 'P2', 'c')
    with pytest.raises(EmptyInput):
        group_summary([])


@pytest.fixture
def simulated_log():
    return simulate_responses(
        localisation_grid(),
        ['P1', 'P2', 'P3', 'P4'],
        {'measured': ResponseModel(noise_deg=6.0, front_back_rate=0.02),
         'generic': ResponseModel(noise_deg=15.0, front_back_rate=0.2)},
        repetitions=2,
        seed=5,
    )


def test_summaries_from_simulated_log(simulated_log):
    rows = summarize_log(simulated_log)
    assert len(rows) == 8
    assert all(r.n_locations == 33 and r.n_trials == 66 for r in rows)
    group = group_summary(rows)
    assert {g.condition for g in group} == {'measured', 'generic'}
    by_key = {(g.condition, g.metric): g for g in group}
    assert by_key[('generic', 'great_circle_deg')].median > by_key[('measured', 'great_circle_deg')].median
    assert all(g.p25 <= g.median <= g.p75 for g in group)

    tests = condition_tests(rows, 'great_circle_deg')
    assert tests.conditions == ['measured', 'generic']
    assert tests.omnibus is not None
    assert len(tests.pairwise) == 1
    assert len(tests.normality) == 2
    assert tests.rows()[0]['stage'] == 'normality'


def test_condition_tests_normal_path():
    table = {
        'P1': {'a': 1.0, 'b': 1.4, 'c': 3.1},
        'P2': {'a': 2.0, 'b': 2.5, 'c': 4.2},
        'P3': {'a': 3.0, 'b': 3.3, 'c': 5.0},
        'P4': {'a': 4.0, 'b': 4.6, 'c': 6.3},
        'P5': {'a': 5.0, 'b': 5.2, 'c': 7.1},
        'P6': {'a': 6.0, 'b': 6.5, 'c': 8.0},
    }
    result = table_condition_tests(table, 'x', ['a', 'b', 'c'])
    assert result.all_normal
    assert result.omnibus.test == 'rm_anova'
    assert [r.test for r in result.pairwise] == ['tukey_hsd'] * 3
    assert result.omnibus.p_value < 0.05


def test_condition_tests_non_normal_path():
    table = {
        'P1': {'a': 1.0, 'b': 2.0, 'c': 3.0},
        'P2': {'a': 2.0, 'b': 3.5, 'c': 4.0},
        'P3': {'a': 3.0, 'b': 4.1, 'c': 5.5},
        'P4': {'a': 4.0, 'b': 5.2, 'c': 6.0},
        'P5': {'a': 50.0, 'b': 52.0, 'c': 55.0},
        'P6': {'a': 1.0, 'b': 2.0},
    }
    result = table_condition_tests(table, 'x', ['a', 'b', 'c'])
    assert not result.all_normal
    assert result.participants == ['P1', 'P2', 'P3', 'P4', 'P5']
    assert 'P6' in result.trail[0]
    assert result.omnibus.test == 'friedman'
    assert [r.correction for r in result.pairwise] == ['holm'] * 3
    assert all(r.p_adjusted >= r.p_value for r in result.pairwise)


def test_condition_tests_preconditions():
    with pytest.raises(InsufficientSubjects):
        table_condition_tests({'P1': {'a': 1, 'b': 2}, 'P2': {'a': 2, 'b': 3}}, 'x', ['a', 'b'])
    with pytest.raises(DegenerateShape):
        table_condition_tests({p: {'a': float(i)} for i, p in enumerate('ABCD')}, 'x', ['a'])


def test_plane_correlation_perfect():
    metrics = log_trial_metrics(_log([(t, t) for t in localisation_grid()]))
    horizontal = plane_correlation(metrics, 'horizontal')
    median = plane_correlation(metrics, 'median')
    assert horizontal.statistic == pytest.approx(1.0)
    assert median.statistic == pytest.approx(1.0)
    assert horizontal.n == 12
    with pytest.raises(ConfigError):
        plane_correlation(metrics, 'frontal')


def _summary(participant, condition, great_circle):
    return ParticipantSummary(
        participant, condition, 10, 5,
        great_circle_deg=great_circle,
        lateral_accuracy_deg=5.0,
        lateral_precision_deg=5.0,
        polar_accuracy_deg=10.0,
        polar_precision_deg=10.0,
        front_back_rate=0.0,
        quadrant_error_rate=0.0,
    )


def test_lsd_correlation_table():
    lsd = {'P1': 3.0, 'P2': 4.0, 'P3': 5.0, 'P4': 6.0}
    rows = []
    for i, p in enumerate(lsd):
        rows.append(_summary(p, 'measured', 20.0))
        rows.append(_summary(p, 'generic', 20.0 + 2.0 * i))
    results = {r.extra['metric']: r for r in lsd_correlation_table(lsd, rows, 'generic', 'measured')}
    assert results['great_circle_deg'].statistic == pytest.approx(1.0)
    assert results['great_circle_deg'].n == 4
    assert np.isnan(results['front_back_rate'].statistic)
    assert 'error' in results['front_back_rate'].extra
