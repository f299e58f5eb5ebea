from itertools import product

import numpy as np
import pandas as pd
import pytest
from scipy import stats as sp_stats
from statsmodels.stats.anova import AnovaRM

from core.errors import (
    AllZeroDifferences,
    ConstantInput,
    DegenerateShape,
    EmptyInput,
    InsufficientSubjects,
    OutOfRangeN,
    ShapeMismatch,
    ZeroVariance,
)
from core.stats import (
    bh_fdr_adjust,
    cluster_permutation_freq,
    friedman,
    holm_adjust,
    median_iqr,
    pearson,
    rm_anova_one_way,
    shapiro_wilk,
    significance_tier,
    t_test_one_sample,
    t_test_one_sample_or_degenerate,
    t_test_paired,
    tukey_hsd,
    wilcoxon_signed_rank,
)


def test_median_iqr():
    assert median_iqr([1, 2, 3, 4]) == (2.5, 1.75, 3.25)
    assert median_iqr([7.0]) == (7.0, 7.0, 7.0)
    with pytest.raises(EmptyInput):
        median_iqr([])


def test_shapiro_wilk(rng):
    x = rng.standard_normal(200)
    res = shapiro_wilk(x)
    w, p = sp_stats.shapiro(x)
    assert res.statistic == pytest.approx(w)
    assert res.p_value == pytest.approx(p)
    assert res.n == 200
    with pytest.raises(OutOfRangeN):
        shapiro_wilk([1.0, 2.0])


def test_t_test_one_sample():
    res = t_test_one_sample([1, 2, 3, 4, 5])
    assert res.statistic == pytest.approx(4.242640687, rel=1e-9)
    assert res.df == (4,)
    assert res.p_value == pytest.approx(sp_stats.ttest_1samp([1, 2, 3, 4, 5], 0.0).pvalue)
    with pytest.raises(ZeroVariance):
        t_test_one_sample([2.0, 2.0, 2.0])
    with pytest.raises(InsufficientSubjects):
        t_test_one_sample([1.0])


def test_t_test_degenerate():
    assert t_test_one_sample_or_degenerate([0.0, 0.0]).p_value == 1.0
    res = t_test_one_sample_or_degenerate([-1.5, -1.5, -1.5])
    assert res.statistic == -np.inf
    assert res.p_value == 0.0
    assert res.extra['degenerate']


def test_t_test_paired():
    x = [3.0, 4.0, 6.0, 8.0]
    y = [1.0, 3.0, 3.0, 4.0]
    res = t_test_paired(x, y)
    assert res.statistic == pytest.approx(sp_stats.ttest_rel(x, y).statistic)
    with pytest.raises(ShapeMismatch):
        t_test_paired([1, 2, 3], [1, 2])


def _wilcoxon_brute_force(d):
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    ranks = sp_stats.rankdata(np.abs(d))
    w = min(ranks[d > 0].sum(), ranks[d < 0].sum())
    count = 0
    for signs in product((0, 1), repeat=d.size):
        if np.dot(signs, ranks) <= w + 1e-9:
            count += 1
    return min(1.0, 2.0 * count / 2 ** d.size)


@pytest.mark.parametrize('seed', range(6))
def test_wilcoxon_exact_matches_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 5 + seed
    # 取整制造并列和零差值
    x = np.round(rng.normal(0.5, 1.0, n), 1)
    y = np.round(rng.normal(0.0, 1.0, n), 1)
    y[0] = x[0]
    res = wilcoxon_signed_rank(x, y)
    assert res.extra['method'] == 'exact'
    assert res.extra['zeros_dropped'] >= 1
    assert res.p_value == pytest.approx(_wilcoxon_brute_force(x - y), abs=1e-12)


def test_wilcoxon_all_positive():
    res = wilcoxon_signed_rank(np.arange(1, 11) + 0.5, np.zeros(10))
    assert res.statistic == 0.0
    assert res.p_value == pytest.approx(2.0 / 1024)


def test_wilcoxon_normal_approximation(rng):
    x = rng.normal(0.0, 1.0, 40)
    y = rng.normal(0.3, 1.0, 40)
    res = wilcoxon_signed_rank(x, y)
    assert res.extra['method'] == 'normal'
    assert 0.0 < res.p_value <= 1.0
    assert res.statistic == pytest.approx(sp_stats.wilcoxon(x, y).statistic)


def test_wilcoxon_errors():
    with pytest.raises(AllZeroDifferences):
        wilcoxon_signed_rank([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ShapeMismatch):
        wilcoxon_signed_rank([1.0, 2.0], [1.0])


def test_friedman():
    res = friedman([[1, 2, 3], [1, 2, 3]])
    assert res.statistic == pytest.approx(4.0)
    assert res.df == (2,)
    assert res.p_value == pytest.approx(np.exp(-2.0))


def test_friedman_ties_match_scipy(rng):
    m = np.round(rng.normal(size=(8, 4)))
    res = friedman(m)
    expected = sp_stats.friedmanchisquare(*m.T)
    assert res.statistic == pytest.approx(expected.statistic, rel=1e-9)
    assert res.p_value == pytest.approx(expected.pvalue, rel=1e-9)


def test_friedman_all_equal():
    res = friedman([[1, 1, 1], [2, 2, 2], [3, 3, 3]])
    assert res.statistic == 0.0
    assert res.p_value == 1.0


def test_friedman_two_conditions():
    res = friedman([[1, 2], [1, 2], [2, 1]])
    assert res.statistic == pytest.approx(1.0 / 3.0)
    tied = friedman([[1, 2], [1, 2], [3, 3]])
    assert tied.statistic == pytest.approx(2.0)
    assert tied.p_value == pytest.approx(sp_stats.chi2.sf(2.0, 1))


def test_matrix_shape_checks():
    with pytest.raises(DegenerateShape):
        friedman([[1, 2, 3]])
    with pytest.raises(DegenerateShape):
        rm_anova_one_way([[1], [2], [3]])
    with pytest.raises(DegenerateShape):
        rm_anova_one_way([[1, np.nan], [2, 3]])


def test_rm_anova_matches_statsmodels(rng):
    m = rng.normal(size=(6, 3)) + np.array([0.0, 0.5, 1.5])
    res = rm_anova_one_way(m)
    long = pd.DataFrame(
        [(s, c, m[s, c]) for s in range(6) for c in range(3)],
        columns=['subject', 'condition', 'value'],
    )
    table = AnovaRM(long, 'value', 'subject', within=['condition']).fit().anova_table
    assert res.statistic == pytest.approx(table['F Value'].iloc[0], rel=1e-9)
    assert res.p_value == pytest.approx(table['Pr > F'].iloc[0], rel=1e-9)
    assert res.df == (2, 10)


def test_tukey_hsd(rng):
    m = rng.normal(size=(8, 3)) + np.array([0.0, 0.0, 3.0])
    results = tukey_hsd(m, ['a', 'b', 'c'])
    assert [r.extra['pair'] for r in results] == ['a vs b', 'a vs c', 'b vs c']
    assert all(r.correction == 'tukey' for r in results)
    by_pair = {r.extra['pair']: r for r in results}
    assert by_pair['a vs c'].p_value < by_pair['a vs b'].p_value
    identical = tukey_hsd(np.column_stack([m[:, 0], m[:, 0]]))
    assert identical[0].statistic == 0.0
    assert identical[0].p_value == 1.0


def test_holm_and_bh():
    assert np.allclose(holm_adjust([0.01, 0.04]), [0.02, 0.04])
    assert np.allclose(bh_fdr_adjust([0.01, 0.02, 0.03, 0.04]), [0.04] * 4)
    assert np.all(holm_adjust([0.5, 0.9, 0.7]) <= 1.0)
    assert holm_adjust([]).size == 0


def test_pearson(rng):
    x = rng.normal(size=20)
    y = 0.5 * x + rng.normal(size=20)
    res = pearson(x, y)
    expected = sp_stats.pearsonr(x, y)
    assert res.statistic == pytest.approx(expected[0], rel=1e-9)
    assert res.p_value == pytest.approx(expected[1], rel=1e-6)
    assert pearson([1, 2, 3], [2, 4, 6]).p_value == 0.0
    with pytest.raises(ConstantInput):
        pearson([1, 2, 3], [5, 5, 5])
    with pytest.raises(InsufficientSubjects):
        pearson([1, 2], [3, 4])


def test_significance_tier():
    assert [significance_tier(p) for p in (0.2, 0.04, 0.005, 0.0001)] == [0, 1, 2, 3]


def _injected(rng, n_subjects=16, n_bins=200):
    a = rng.normal(size=(n_subjects, n_bins))
    b = rng.normal(size=(n_subjects, n_bins))
    a[:, 100:121] += 5.0
    return a, b


def test_cluster_finds_injected_effect(rng):
    a, b = _injected(rng)
    res = cluster_permutation_freq(a, b, n_perm=199, seed=3, labels=('cand', 'ref'))
    hit = [c for c in res.clusters if c.start_bin <= 110 <= c.stop_bin]
    assert len(hit) == 1
    cluster = hit[0]
    assert cluster.start_bin <= 100 and cluster.stop_bin >= 120
    assert cluster.stop_bin - cluster.start_bin < 30
    assert cluster.sign == 1
    assert cluster.winner == 'cand'
    assert cluster.p_value == pytest.approx(1 / 200)
    assert cluster in res.significant(0.05)
    assert all(0.0 < c.p_adjusted <= 1.0 for c in res.clusters)
    assert res.t_values.shape == (200,)


def test_cluster_independent_of_jobs(rng):
    a, b = _injected(rng, n_subjects=8, n_bins=60)
    serial = cluster_permutation_freq(a, b, n_perm=50, seed=11)
    parallel = cluster_permutation_freq(a, b, n_perm=50, seed=11, n_jobs=2)
    assert [c.p_value for c in serial.clusters] == [c.p_value for c in parallel.clusters]
    again = cluster_permutation_freq(a, b, n_perm=50, seed=11)
    assert serial.clusters == again.clusters


def test_cluster_identical_inputs(rng):
    a = rng.normal(size=(5, 30))
    res = cluster_permutation_freq(a, a.copy(), n_perm=20)
    assert res.clusters == ()


def test_cluster_input_checks(rng):
    a = rng.normal(size=(2, 30))
    with pytest.raises(InsufficientSubjects):
        cluster_permutation_freq(a, a, n_perm=10)
    with pytest.raises(ShapeMismatch):
        cluster_permutation_freq(rng.normal(size=(4, 30)), rng.normal(size=(4, 31)), n_perm=10)


def test_cluster_injected_ten_db_at_default_permutations():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(20, 256))
    b = rng.normal(size=(20, 256))
    a[:, 100:121] += 10.0
    res = cluster_permutation_freq(a, b, n_perm=999, seed=0)
    hit = [c for c in res.clusters if c.start_bin <= 100 and c.stop_bin >= 120]
    assert len(hit) == 1
    assert hit[0].p_value == pytest.approx(1 / 1000)
    assert hit[0].p_adjusted < 0.05


@pytest.mark.slow
def test_cluster_false_positive_rate_is_calibrated():
    n_runs = 500
    rejections = 0
    for run in range(n_runs):
        rng = np.random.default_rng([2024, run])
        a = rng.normal(size=(12, 256))
        b = rng.normal(size=(12, 256))
        res = cluster_permutation_freq(a, b, n_perm=999, seed=run)
        if any(c.p_adjusted < 0.05 for c in res.clusters):
            rejections += 1
    lo, hi = sp_stats.binom.interval(0.99, n_runs, 0.05)
    assert lo <= rejections <= hi
