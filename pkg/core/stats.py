#!/usr/bin/env python3
"""
统计模块 - 描述统计、正态性、重复测量检验、事后比较、多重比较校正、
相关分析和频率维度的聚类置换检验
"""

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import ndimage
from scipy import stats as sp_stats
from statsmodels.stats.multitest import multipletests

from .errors import (
    AllZeroDifferences,
    ConstantInput,
    DegenerateShape,
    EmptyInput,
    InsufficientSubjects,
    OutOfRangeN,
    ShapeMismatch,
    ZeroVariance,
)

# Wilcoxon 精确分布的最大样本数
WILCOXON_EXACT_MAX_N = 25
SIGNIFICANCE_TIERS = (0.05, 0.01, 0.001)


@dataclass(frozen=True)
class StatResult:
    """一次统计检验的结果"""

    test: str
    statistic: float
    p_value: float
    n: int
    df: Optional[Tuple[float, ...]] = None
    p_adjusted: Optional[float] = None
    correction: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'test': self.test,
            'statistic': self.statistic,
            'df': list(self.df) if self.df is not None else None,
            'p_value': self.p_value,
            'p_adjusted': self.p_adjusted,
            'correction': self.correction,
            'n': self.n,
            **{k: v for k, v in self.extra.items() if isinstance(v, (str, int, float, bool, type(None)))},
        }


@dataclass(frozen=True)
class Cluster:
    """一个频率聚类（bin 区间为闭区间）"""

    start_bin: int
    stop_bin: int
    sign: int
    mass: float
    p_value: float
    p_adjusted: float
    winner: str


@dataclass(frozen=True)
class ClusterResult:
    """聚类置换检验结果"""

    clusters: Tuple[Cluster, ...]
    t_values: np.ndarray
    n_permutations: int
    seed: int
    alpha_cluster: float
    n_subjects: int
    labels: Tuple[str, str]

    def significant(self, alpha: float = 0.05) -> List[Cluster]:
        return [c for c in self.clusters if c.p_adjusted < alpha]


def significance_tier(p: float) -> int:
    """0 = 不显著，1: p < 0.05，2: p < 0.01，3: p < 0.001"""
    return sum(1 for threshold in SIGNIFICANCE_TIERS if p < threshold)


def _as_1d(values: Sequence[float]) -> np.ndarray:
    return np.asarray(values, dtype=np.float64).ravel()


# ==================== 描述统计 ====================

def median_iqr(values: Sequence[float]) -> Tuple[float, float, float]:
    """
    中位数与四分位数（线性插值，type-7）

    Returns:
        (median, p25, p75)
    """
    x = _as_1d(values)
    if x.size == 0:
        raise EmptyInput("median_iqr 需要至少一个值")
    p25, med, p75 = np.percentile(x, [25, 50, 75])
    return float(med), float(p25), float(p75)


# ==================== 正态性 ====================

def shapiro_wilk(values: Sequence[float]) -> StatResult:
    """Shapiro–Wilk 正态性检验（Royston 近似，3 ≤ n ≤ 5000）"""
    x = _as_1d(values)
    if not 3 <= x.size <= 5000:
        raise OutOfRangeN(f"Shapiro–Wilk 要求 3 ≤ n ≤ 5000，实际 n = {x.size}")
    if np.ptp(x) == 0:
        # 常数样本：scipy 会告警，按完全正态处理
        return StatResult('shapiro_wilk', 1.0, 1.0, int(x.size))
    w, p = sp_stats.shapiro(x)
    return StatResult('shapiro_wilk', float(w), float(p), int(x.size))


# ==================== t 检验 ====================

def t_test_one_sample(values: Sequence[float], mu0: float = 0.0) -> StatResult:
    """
    单样本 t 检验（双侧）

    t = (mean − mu0) / (sd / √n)，sd 为样本标准差（ddof = 1）
    """
    x = _as_1d(values)
    n = x.size
    if n < 2:
        raise InsufficientSubjects(f"单样本 t 检验至少需要 2 个值，实际 {n}")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise ZeroVariance("样本方差为零，t 统计量无定义")
    t = (float(np.mean(x)) - mu0) / (sd / math.sqrt(n))
    p = float(2.0 * sp_stats.t.sf(abs(t), n - 1))
    return StatResult('t_one_sample', t, min(p, 1.0), n, df=(n - 1,))


def t_test_one_sample_or_degenerate(values: Sequence[float], mu0: float = 0.0) -> StatResult:
    """
    方差为零时不报错的单样本 t 检验（空间图逐节点使用）

    常数样本：均值等于 mu0 → t = 0, p = 1；否则 t = ±inf, p = 0。
    """
    try:
        return t_test_one_sample(values, mu0)
    except ZeroVariance:
        x = _as_1d(values)
        diff = float(np.mean(x)) - mu0
        if diff == 0.0:
            return StatResult('t_one_sample', 0.0, 1.0, int(x.size), df=(x.size - 1,), extra={'degenerate': True})
        return StatResult(
            't_one_sample', math.copysign(math.inf, diff), 0.0, int(x.size),
            df=(x.size - 1,), extra={'degenerate': True},
        )


def t_test_paired(x: Sequence[float], y: Sequence[float]) -> StatResult:
    """配对 t 检验（即差值的单样本 t 检验）"""
    a, b = _as_1d(x), _as_1d(y)
    if a.shape != b.shape:
        raise ShapeMismatch(f"配对样本长度不一致: {a.size} vs {b.size}")
    result = t_test_one_sample(a - b)
    return StatResult('t_paired', result.statistic, result.p_value, result.n, df=result.df)


# ==================== 秩检验 ====================

def _wilcoxon_exact_p(doubled_ranks: np.ndarray, w_doubled: int) -> float:
    """
    精确双侧 p：2 · #{符号组合 | W+ ≤ W} / 2^n，上限 1

    秩乘 2 后全部为整数（中位秩只会出现 .5），用计数多项式逐个秩卷积，
    结果与 2^n 枚举完全一致。
    """
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in doubled_ranks.astype(np.int64):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[:total + 1 - r]
        counts = counts + shifted
    n = doubled_ranks.size
    at_most = int(counts[:w_doubled + 1].sum())
    return min(1.0, 2.0 * at_most / 2 ** n)


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> StatResult:
    """
    Wilcoxon 符号秩检验（配对，双侧）

    丢弃零差值，中位秩处理并列；W = min(W+, W−)。
    n ≤ 25 用精确分布（整数动态规划），否则用 scipy.stats.wilcoxon 的正态近似。
    """
    a, b = _as_1d(x), _as_1d(y)
    if a.shape != b.shape:
        raise ShapeMismatch(f"配对样本长度不一致: {a.size} vs {b.size}")
    d = a - b
    zeros = int(np.sum(d == 0))
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences("所有配对差值都为零")

    ranks = sp_stats.rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    if n <= WILCOXON_EXACT_MAX_N:
        p = _wilcoxon_exact_p(np.rint(ranks * 2), int(round(w * 2)))
        method = 'exact'
    else:
        # 零差值已丢弃；scipy 的正态近似含连续性与并列校正
        res = sp_stats.wilcoxon(d, zero_method='wilcox', correction=True, alternative='two-sided', method='approx')
        p = min(1.0, float(res.pvalue))
        method = 'normal'

    return StatResult(
        'wilcoxon_signed_rank', w, p, n,
        extra={'w_plus': w_plus, 'w_minus': w_minus, 'zeros_dropped': zeros, 'method': method},
    )


def _check_matrix(matrix: Sequence[Sequence[float]]) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 2 or m.shape[1] < 2:
        raise DegenerateShape(f"需要 受试者 × 条件 且两维都 ≥ 2 的矩阵，实际形状 {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DegenerateShape("矩阵含有缺失或非有限值")
    return m


def friedman(matrix: Sequence[Sequence[float]]) -> StatResult:
    """
    Friedman 检验（受试者 × 条件），含并列校正

    k ≥ 3 时用 scipy.stats.friedmanchisquare；只有两个条件时 scipy 不接受，
    按同一公式计算：
    χ²_F = [12 / (n k (k+1)) Σ R_j² − 3 n (k+1)] / [1 − Σ(t³ − t) / (n (k³ − k))]
    """
    m = _check_matrix(matrix)
    n, k = m.shape
    ranks = np.apply_along_axis(sp_stats.rankdata, 1, m)
    extra = {'mean_ranks': ranks.mean(axis=0).tolist()}

    if np.all(np.ptp(m, axis=1) == 0):
        # 每个受试者所有条件都相同
        return StatResult('friedman', 0.0, 1.0, n, df=(k - 1,), extra=extra)

    if k >= 3:
        res = sp_stats.friedmanchisquare(*m.T)
        return StatResult('friedman', float(res.statistic), float(res.pvalue), n, df=(k - 1,), extra=extra)

    rank_sums = ranks.sum(axis=0)
    chi2 = 12.0 / (n * k * (k + 1)) * float(np.sum(rank_sums ** 2)) - 3.0 * n * (k + 1)
    ties = 0.0
    for row in m:
        _, counts = np.unique(row, return_counts=True)
        ties += float(np.sum(counts ** 3 - counts))
    chi2 = max(chi2, 0.0) / (1.0 - ties / (n * (k ** 3 - k)))
    return StatResult('friedman', float(chi2), float(sp_stats.chi2.sf(chi2, k - 1)), n, df=(k - 1,), extra=extra)


# ==================== 重复测量方差分析 ====================

def _rm_anova_terms(m: np.ndarray) -> Dict[str, float]:
    n, k = m.shape
    grand = m.mean()
    ss_cond = n * float(np.sum((m.mean(axis=0) - grand) ** 2))
    ss_subj = k * float(np.sum((m.mean(axis=1) - grand) ** 2))
    ss_total = float(np.sum((m - grand) ** 2))
    ss_error = max(ss_total - ss_cond - ss_subj, 0.0)
    df_cond = k - 1
    df_error = (k - 1) * (n - 1)
    return {
        'ss_condition': ss_cond,
        'ss_subject': ss_subj,
        'ss_error': ss_error,
        'df_condition': df_cond,
        'df_error': df_error,
        'ms_condition': ss_cond / df_cond,
        'ms_error': ss_error / df_error,
    }


def rm_anova_one_way(matrix: Sequence[Sequence[float]]) -> StatResult:
    """
    单因素重复测量方差分析（受试者作为区组）

    F = MS_condition / MS_error，df = (k−1, (k−1)(n−1))
    """
    m = _check_matrix(matrix)
    terms = _rm_anova_terms(m)
    df = (terms['df_condition'], terms['df_error'])

    if terms['ss_condition'] <= 1e-12 * max(1.0, float(np.sum(m ** 2))):
        f_value, p = 0.0, 1.0
    elif terms['ms_error'] == 0.0:
        f_value, p = math.inf, 0.0
    else:
        f_value = terms['ms_condition'] / terms['ms_error']
        p = float(sp_stats.f.sf(f_value, *df))
    return StatResult('rm_anova', float(f_value), p, m.shape[0], df=df, extra=dict(terms))


def tukey_hsd(matrix: Sequence[Sequence[float]], labels: Optional[Sequence[str]] = None) -> List[StatResult]:
    """
    重复测量设计下的 Tukey HSD 两两比较

    q = |mean_i − mean_j| / √(MS_error / n)，p 来自学生化极差分布。
    """
    m = _check_matrix(matrix)
    n, k = m.shape
    labels = list(labels) if labels is not None else [str(j) for j in range(k)]
    terms = _rm_anova_terms(m)
    se = math.sqrt(terms['ms_error'] / n)
    means = m.mean(axis=0)

    results = []
    for i, j in combinations(range(k), 2):
        diff = float(means[i] - means[j])
        if abs(diff) <= 1e-12 * max(1.0, abs(float(means[i])), abs(float(means[j]))):
            q, p = 0.0, 1.0
        elif se == 0.0:
            q, p = math.inf, 0.0
        else:
            q = abs(diff) / se
            p = float(sp_stats.studentized_range.sf(q, k, terms['df_error']))
        results.append(StatResult(
            'tukey_hsd', q, min(max(p, 0.0), 1.0), n,
            df=(k, terms['df_error']),
            p_adjusted=min(max(p, 0.0), 1.0),
            correction='tukey',
            extra={'pair': f"{labels[i]} vs {labels[j]}", 'mean_diff': diff},
        ))
    return results


# ==================== 多重比较校正 ====================

def holm_adjust(pvalues: Sequence[float]) -> np.ndarray:
    """Holm 逐步下降校正（单调、上限 1）"""
    p = _as_1d(pvalues)
    if p.size == 0:
        return p
    return multipletests(p, method='holm')[1]


def bh_fdr_adjust(pvalues: Sequence[float]) -> np.ndarray:
    """Benjamini–Hochberg 逐步上升 FDR 校正"""
    p = _as_1d(pvalues)
    if p.size == 0:
        return p
    return multipletests(p, method='fdr_bh')[1]


# ==================== 相关 ====================

def pearson(x: Sequence[float], y: Sequence[float]) -> StatResult:
    """
    Pearson 相关（双侧）

    p 由 t = r √((n−2)/(1−r²)) 得到，|r| = 1 时 p = 0。
    """
    a, b = _as_1d(x), _as_1d(y)
    if a.shape != b.shape:
        raise ShapeMismatch(f"相关分析两组长度不一致: {a.size} vs {b.size}")
    n = a.size
    if n < 3:
        raise InsufficientSubjects(f"Pearson 相关至少需要 3 对数据，实际 {n}")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise ConstantInput("Pearson 相关的输入不能是常数")

    r = float(np.clip(np.corrcoef(a, b)[0, 1], -1.0, 1.0))
    if abs(r) >= 1.0 - 1e-15:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * sp_stats.t.sf(abs(t), n - 2))
    return StatResult('pearson', r, min(p, 1.0), n, df=(n - 2,))


# ==================== 聚类置换检验 ====================

def _paired_t_rows(diffs: np.ndarray, signs: np.ndarray) -> np.ndarray:
    """
    每一行符号翻转下各 bin 的配对 t 值

    翻转不改变平方和，所以只需重新计算均值。
    diffs: (S, K)，signs: (P, S) → (P, K)
    """
    n = diffs.shape[0]
    sum_sq = np.sum(diffs ** 2, axis=0)
    means = signs @ diffs / n
    var = (sum_sq[None, :] - n * means ** 2) / (n - 1)
    var = np.maximum(var, 0.0)
    sd = np.sqrt(var)
    with np.errstate(divide='ignore', invalid='ignore'):
        t = means / (sd / math.sqrt(n))
    t = np.where(sd > 0, t, np.where(means == 0, 0.0, np.sign(means) * np.inf))
    return t


# 只在同一行内相邻的 bin 才连通
_ROW_STRUCTURE = np.array([[0, 0, 0], [1, 1, 1], [0, 0, 0]])


def _cluster_masses(t_rows: np.ndarray, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    每一行（每次置换）的聚类质量 Σ|t|，同号相邻 bin 组成一个聚类

    Returns:
        (每行的最大质量, 所有行的全部聚类质量)
    """
    n_rows = t_rows.shape[0]
    best = np.zeros(n_rows)
    pooled = [np.zeros(0)]
    abs_t = np.abs(t_rows)
    for sign_mask in (t_rows > threshold, t_rows < -threshold):
        labels, n_labels = ndimage.label(sign_mask, structure=_ROW_STRUCTURE)
        if n_labels == 0:
            continue
        index = np.arange(1, n_labels + 1)
        masses = ndimage.sum_labels(abs_t, labels, index=index)
        rows = np.array([s[0].start for s in ndimage.find_objects(labels)])
        np.maximum.at(best, rows, masses)
        pooled.append(np.asarray(masses, dtype=np.float64))
    return best, np.concatenate(pooled)


def _null_chunk(
    diffs: np.ndarray, seed: int, iterations: Sequence[int], threshold: float
) -> Tuple[np.ndarray, np.ndarray]:
    n_subjects = diffs.shape[0]
    signs = np.empty((len(iterations), n_subjects))
    for row, i in enumerate(iterations):
        # 每次迭代的随机流只由 (seed, i) 决定，与并行分块无关
        rng = np.random.default_rng([seed, i])
        signs[row] = rng.integers(0, 2, size=n_subjects) * 2 - 1
    return _cluster_masses(_paired_t_rows(diffs, signs), threshold)


def _observed_clusters(t: np.ndarray, threshold: float) -> List[Tuple[int, int, int, float]]:
    found = []
    for sign, mask in ((1, t > threshold), (-1, t < -threshold)):
        labels, n_labels = ndimage.label(mask)
        for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
            start, stop = sl[0].start, sl[0].stop - 1
            mass = float(np.sum(np.abs(t[start:stop + 1])))
            found.append((start, stop, sign, mass))
    found.sort(key=lambda c: c[0])
    return found


def cluster_permutation_freq(
    a: Sequence[Sequence[float]],
    b: Sequence[Sequence[float]],
    alpha_cluster: float = 0.05,
    n_perm: int = 999,
    seed: int = 0,
    labels: Tuple[str, str] = ('a', 'b'),
    n_jobs: int = 1,
) -> ClusterResult:
    """
    频率维度的配对聚类置换检验

    每个 bin 计算配对 t；原始 p < alpha_cluster 的同号相邻 bin 组成聚类，
    质量为 Σ|t|。零分布来自对差值逐受试者随机翻转符号后的最大聚类质量。
    原始 p = (1 + #{null 最大质量 ≥ mass}) / (n_perm + 1)。
    校正 p：每个聚类先对所有置换的全部聚类质量（含观测）取秩得到单聚类 p，
    再在本次比较的聚类之间做 BH 校正。

    Args:
        a, b: 受试者 × bin 矩阵（例如两个条件的 LSD 曲线）
        alpha_cluster: 成簇阈值
        n_perm: 置换次数
        seed: 随机种子
        labels: 两个条件的名字，用于标注每个聚类中 LSD 更高的一方
        n_jobs: 并行进程数（结果与并行度无关）
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2:
        raise ShapeMismatch(f"两组矩阵形状不一致或不是二维: {x.shape} vs {y.shape}")
    n_subjects = x.shape[0]
    if n_subjects < 3:
        raise InsufficientSubjects(f"聚类置换检验至少需要 3 个受试者，实际 {n_subjects}")

    diffs = x - y
    threshold = float(sp_stats.t.ppf(1.0 - alpha_cluster / 2.0, n_subjects - 1))
    t_obs = _paired_t_rows(diffs, np.ones((1, n_subjects)))[0]
    observed = _observed_clusters(t_obs, threshold)

    clusters: Tuple[Cluster, ...] = ()
    if observed:
        chunks = np.array_split(np.arange(n_perm), max(1, n_jobs))
        if n_jobs > 1:
            parts = Parallel(n_jobs=n_jobs)(
                delayed(_null_chunk)(diffs, seed, chunk.tolist(), threshold) for chunk in chunks if len(chunk)
            )
        else:
            parts = [_null_chunk(diffs, seed, chunk.tolist(), threshold) for chunk in chunks if len(chunk)]
        null_max = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
        masses = np.array([mass for _, _, _, mass in observed])
        # 池中包含观测数据自身的聚类
        pool = np.concatenate([masses] + [p[1] for p in parts])

        raw = [(1.0 + float(np.sum(null_max >= mass))) / (n_perm + 1.0) for mass in masses]
        per_cluster = [float(np.sum(pool >= mass)) / pool.size for mass in masses]
        adjusted = bh_fdr_adjust(per_cluster)
        built = []
        for (start, stop, sign, mass), p, p_adj in zip(observed, raw, adjusted):
            mean_a = float(np.mean(x[:, start:stop + 1]))
            mean_b = float(np.mean(y[:, start:stop + 1]))
            built.append(Cluster(start, stop, sign, mass, p, float(p_adj), labels[0] if mean_a > mean_b else labels[1]))
        clusters = tuple(built)

    return ClusterResult(
        clusters=clusters,
        t_values=t_obs,
        n_permutations=n_perm,
        seed=seed,
        alpha_cluster=alpha_cluster,
        n_subjects=n_subjects,
        labels=tuple(labels),
    )
