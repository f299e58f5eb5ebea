#!/usr/bin/env python3
"""
线索指标模块 - ITD、ILD、LSD，频率维度 LSD 曲线，空间网格统计和幅度响应图

符号约定：
    ITD = (onset_R − onset_L) / fs，正值表示左耳先到
    ILD = 10·log10((E_R + ε) / (E_L + ε))，正值表示右耳更响
"""

import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, HeterogeneousGrids, InsufficientSubjects, LengthMismatch
from .model import (
    DEFAULT_MATCH_TOLERANCE_DEG,
    Direction,
    HrirSet,
    MetricConfig,
    angular_distance_matrix,
    match_directions,
    to_lateral_polar,
)
from .preprocess import subsample_onset
from .stats import bh_fdr_adjust, significance_tier, t_test_one_sample_or_degenerate

EARS = ('left', 'right')
GRID_METRICS = ('itd', 'ild', 'lsd')
PLANES = ('horizontal', 'median')
MAP_MAX_FREQ_HZ = 20000.0
# 网格最近节点并列的判定容差（度）
_TIE_TOLERANCE_DEG = 1e-9


# ==================== 数据类型 ====================

@dataclass(frozen=True)
class CueRecord:
    """单个方向的候选 vs 参考线索误差"""

    direction: Direction
    itd_cand_us: float
    itd_ref_us: float
    itd_signed_us: float
    itd_abs_err_us: float
    ild_cand_db: float
    ild_ref_db: float
    ild_signed_db: float
    ild_abs_err_db: float
    lsd_left_db: float
    lsd_right_db: float
    lsd_signed_mean_db: float

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row.pop('direction')
        return {
            'azimuth_deg': self.direction.azimuth_deg,
            'elevation_deg': self.direction.elevation_deg,
            **row,
        }


@dataclass(frozen=True)
class CueReport:
    """一次候选 vs 参考比较的完整结果"""

    subject_id: str
    label: str
    reference_label: str
    records: Tuple[CueRecord, ...]
    mean_abs_itd_us: float
    mean_abs_ild_db: float
    mean_lsd_db: float
    mean_lsd_left_db: float
    mean_lsd_right_db: float

    def aggregates(self) -> Dict[str, Any]:
        return {
            'subject_id': self.subject_id,
            'condition': self.label,
            'reference': self.reference_label,
            'n_directions': len(self.records),
            'mean_abs_itd_us': self.mean_abs_itd_us,
            'mean_abs_ild_db': self.mean_abs_ild_db,
            'mean_lsd_db': self.mean_lsd_db,
            'mean_lsd_left_db': self.mean_lsd_left_db,
            'mean_lsd_right_db': self.mean_lsd_right_db,
        }


@dataclass(frozen=True)
class FrequencyLsdCurve:
    """一个条件的逐频点 LSD 曲线（跨受试者均值和标准差）"""

    label: str
    freq_bins_hz: np.ndarray
    lsd_db: np.ndarray
    lsd_sd_db: np.ndarray
    per_subject: np.ndarray            # (受试者, 频点)
    subject_ids: Tuple[str, ...] = ()

    @property
    def n_subjects(self) -> int:
        return int(self.per_subject.shape[0])


@dataclass(frozen=True)
class GridNodeResult:
    """空间网格上一个节点的统计结果"""

    node: Direction
    n_subjects: int
    mean_diff: float
    t_statistic: float
    p_value: float
    p_adjusted: float
    tier: int

    def to_row(self) -> Dict[str, Any]:
        return {
            'azimuth_deg': self.node.azimuth_deg,
            'elevation_deg': self.node.elevation_deg,
            'n_subjects': self.n_subjects,
            'mean_diff': self.mean_diff,
            't': self.t_statistic,
            'p': self.p_value,
            'p_fdr': self.p_adjusted,
            'tier': self.tier,
        }


@dataclass(frozen=True)
class SpatialGridSummary:
    """空间网格差异汇总"""

    metric: str
    label: str
    grid_step_deg: float
    alpha: float
    nodes: Tuple[GridNodeResult, ...]
    excluded: Tuple[Direction, ...] = ()
    n_subjects: int = 0

    def significant(self) -> List[GridNodeResult]:
        return [n for n in self.nodes if n.p_adjusted < self.alpha]


@dataclass(frozen=True)
class MagnitudeMap:
    """单耳在一个平面上的对数幅度响应（角度 × 频率）"""

    plane: str
    ear: str
    label: str
    angles_deg: np.ndarray
    freq_hz: np.ndarray
    magnitude_db: np.ndarray
    n_sets: int = 1


# ==================== 单方向指标 ====================

def _ear_index(ear) -> int:
    if ear in (0, 1):
        return int(ear)
    if ear in EARS:
        return EARS.index(ear)
    raise ConfigError(f"未知的耳朵: {ear!r}（应为 left/right 或 0/1）")


def estimate_itd(hrir_set: HrirSet, d: int, cfg: MetricConfig, restore_removed: bool = False) -> float:
    """
    阈值法估计 ITD（亚样本起始点，见 subsample_onset）

    Args:
        hrir_set: HRIR 集合
        d: 方向下标
        cfg: 指标参数
        restore_removed: 对 no-ITD 集合，把 itd_shifts 记录的移位还原回去，
            得到去除之前的 ITD

    Returns:
        ITD（微秒，正值 = 左耳先到）
    """
    onset_l = subsample_onset(hrir_set.impulses[d, 0], cfg)
    onset_r = subsample_onset(hrir_set.impulses[d, 1], cfg)
    if restore_removed and hrir_set.itd_shifts is not None:
        onset_l -= float(hrir_set.itd_shifts[d, 0])
        onset_r -= float(hrir_set.itd_shifts[d, 1])
    return (onset_r - onset_l) / hrir_set.sample_rate_hz * 1e6


def _energy(x: np.ndarray) -> np.ndarray:
    return np.mean(np.square(x), axis=-1)


def ild_db(hrir_set: HrirSet, d: int, cfg: MetricConfig) -> float:
    """宽带 ILD：右耳与左耳平均能量之比（dB）"""
    e_l, e_r = _energy(hrir_set.impulses[d])
    return float(10.0 * np.log10((e_r + cfg.epsilon) / (e_l + cfg.epsilon)))


def _band_mask(freqs: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    if cfg.freq_band_hz is None:
        return np.ones(freqs.shape, dtype=bool)
    lo, hi = cfg.freq_band_hz
    mask = (freqs >= lo) & (freqs <= hi)
    if not np.any(mask):
        raise ConfigError(f"频带 {lo:g}–{hi:g} Hz 内没有频点")
    return mask


def log_magnitude(impulses: np.ndarray, cfg: MetricConfig) -> np.ndarray:
    """20·log10(|DFT| + ε)，最后一维为 0 到 Nyquist 的频点"""
    return 20.0 * np.log10(np.abs(np.fft.rfft(impulses, axis=-1)) + cfg.epsilon)


def _log_difference(cand: HrirSet, ref: HrirSet, pairs: Sequence[Tuple[int, int]], cfg: MetricConfig) -> np.ndarray:
    if cand.length != ref.length:
        raise LengthMismatch(f"候选长度 {cand.length} 与参考长度 {ref.length} 不一致")
    c_idx = [c for c, _ in pairs]
    r_idx = [r for _, r in pairs]
    return log_magnitude(cand.impulses[c_idx], cfg) - log_magnitude(ref.impulses[r_idx], cfg)


def lsd_db(cand: HrirSet, ref: HrirSet, pair: Tuple[int, int], ear, cfg: MetricConfig) -> float:
    """
    对数谱失真：频点上对数幅度差的均方根

    Args:
        cand: 候选集合
        ref: 参考集合
        pair: (候选下标, 参考下标)
        ear: 'left'/'right' 或 0/1
        cfg: 指标参数（freq_band_hz 限定频点）

    Returns:
        LSD（dB，≥ 0）
    """
    e = _ear_index(ear)
    diff = _log_difference(cand, ref, [pair], cfg)[0, e]
    mask = _band_mask(np.fft.rfftfreq(cand.length, 1.0 / cand.sample_rate_hz), cfg)
    return float(np.sqrt(np.mean(diff[mask] ** 2)))


def lsd_signed_db(cand: HrirSet, ref: HrirSet, pair: Tuple[int, int], ear, cfg: MetricConfig) -> float:
    """有符号 LSD：频点上对数幅度差的平均值（用于热图）"""
    e = _ear_index(ear)
    diff = _log_difference(cand, ref, [pair], cfg)[0, e]
    mask = _band_mask(np.fft.rfftfreq(cand.length, 1.0 / cand.sample_rate_hz), cfg)
    return float(np.mean(diff[mask]))


# ==================== 整集比较 ====================

def compare_sets(
    cand: HrirSet,
    ref: HrirSet,
    cfg: MetricConfig,
    tol_deg: float = DEFAULT_MATCH_TOLERANCE_DEG
) -> CueReport:
    """
    比较候选集合与参考集合的全部线索

    ITD 对 no-ITD 集合会还原 itd_shifts，比较的是去除之前的到达时间差。
    LSD 总体均值对耳朵和方向取 1/(2D) 平均。

    Args:
        cand: 候选集合
        ref: 参考集合
        cfg: 指标参数
        tol_deg: 方向匹配容差

    Returns:
        CueReport，方向顺序与参考一致
    """
    pairs = match_directions(cand, ref, tol_deg)
    diff = _log_difference(cand, ref, pairs, cfg)
    mask = _band_mask(np.fft.rfftfreq(cand.length, 1.0 / cand.sample_rate_hz), cfg)
    banded = diff[..., mask]
    lsd = np.sqrt(np.mean(banded ** 2, axis=-1))                 # (D, 2)
    lsd_signed = np.mean(banded, axis=(1, 2))                     # (D,)

    records = []
    for row, (c, r) in enumerate(pairs):
        itd_c = estimate_itd(cand, c, cfg, restore_removed=True)
        itd_r = estimate_itd(ref, r, cfg, restore_removed=True)
        ild_c = ild_db(cand, c, cfg)
        ild_r = ild_db(ref, r, cfg)
        records.append(CueRecord(
            direction=ref.directions[r],
            itd_cand_us=itd_c,
            itd_ref_us=itd_r,
            itd_signed_us=itd_c - itd_r,
            itd_abs_err_us=abs(itd_c - itd_r),
            ild_cand_db=ild_c,
            ild_ref_db=ild_r,
            ild_signed_db=ild_c - ild_r,
            ild_abs_err_db=abs(ild_c - ild_r),
            lsd_left_db=float(lsd[row, 0]),
            lsd_right_db=float(lsd[row, 1]),
            lsd_signed_mean_db=float(lsd_signed[row]),
        ))

    n = len(records)
    left = [rec.lsd_left_db for rec in records]
    right = [rec.lsd_right_db for rec in records]
    return CueReport(
        subject_id=cand.subject_id or ref.subject_id,
        label=cand.label,
        reference_label=ref.label,
        records=tuple(records),
        mean_abs_itd_us=math.fsum(rec.itd_abs_err_us for rec in records) / n,
        mean_abs_ild_db=math.fsum(rec.ild_abs_err_db for rec in records) / n,
        mean_lsd_db=math.fsum(left + right) / (2 * n),
        mean_lsd_left_db=math.fsum(left) / n,
        mean_lsd_right_db=math.fsum(right) / n,
    )


def mean_lsd_db(
    cand: HrirSet,
    ref: HrirSet,
    cfg: MetricConfig,
    tol_deg: float = DEFAULT_MATCH_TOLERANCE_DEG
) -> float:
    """对耳朵和方向平均的 LSD，只算 LSD、不估计 ITD（相关分析用 1–16 kHz 频带）"""
    pairs = match_directions(cand, ref, tol_deg)
    diff = _log_difference(cand, ref, pairs, cfg)
    mask = _band_mask(np.fft.rfftfreq(cand.length, 1.0 / cand.sample_rate_hz), cfg)
    return float(np.mean(np.sqrt(np.mean(diff[..., mask] ** 2, axis=-1))))


def lsd_frequency_curve(
    cands: Sequence[HrirSet],
    refs: Sequence[HrirSet],
    cfg: MetricConfig,
    label: str = '',
    tol_deg: float = DEFAULT_MATCH_TOLERANCE_DEG
) -> FrequencyLsdCurve:
    """
    逐频点 LSD 曲线

    每个受试者：每个频点上对耳朵和方向求对数幅度差的均方根；
    再对受试者求均值和标准差（总体标准差）。曲线覆盖 0 到 Nyquist 全部频点。

    Args:
        cands: 每个受试者的候选集合
        refs: 对应的参考集合（同顺序）
        cfg: 指标参数
        label: 条件名

    Returns:
        FrequencyLsdCurve
    """
    if not cands or len(cands) != len(refs):
        raise HeterogeneousGrids(f"候选 {len(cands)} 个与参考 {len(refs)} 个不能一一对应")
    fs = refs[0].sample_rate_hz
    n = refs[0].length
    for s in list(cands) + list(refs):
        if s.sample_rate_hz != fs or s.length != n:
            raise HeterogeneousGrids(
                f"{s.subject_id or '?'}/{s.label or '?'}: 采样率 {s.sample_rate_hz} / 长度 {s.length}，"
                f"期望 {fs} / {n}"
            )

    rows = []
    for cand, ref in zip(cands, refs):
        diff = _log_difference(cand, ref, match_directions(cand, ref, tol_deg), cfg)
        rows.append(np.sqrt(np.mean(diff ** 2, axis=(0, 1))))
    per_subject = np.vstack(rows)

    return FrequencyLsdCurve(
        label=label or cands[0].label,
        freq_bins_hz=np.fft.rfftfreq(n, 1.0 / fs),
        lsd_db=per_subject.mean(axis=0),
        lsd_sd_db=per_subject.std(axis=0),
        per_subject=per_subject,
        subject_ids=tuple(c.subject_id for c in cands),
    )


# ==================== 空间网格 ====================

def grid_nodes(step_deg: float = 45.0) -> Tuple[Direction, ...]:
    """
    规则网格：仰角 −90…90、方位角 0…360 按 step_deg 取点，两极各一个节点

    Returns:
        按 (方位角, 仰角) 升序排列的节点
    """
    if not 0 < step_deg <= 90 or not math.isclose(90.0 / step_deg, round(90.0 / step_deg)):
        raise ConfigError(f"网格步长必须能整除 90°: {step_deg}")
    n_el = int(round(90.0 / step_deg))
    n_az = int(round(360.0 / step_deg))
    nodes = {Direction(0.0, -90.0), Direction(0.0, 90.0)}
    for i in range(-n_el + 1, n_el):
        for j in range(n_az):
            nodes.add(Direction(j * step_deg, i * step_deg))
    return tuple(sorted(nodes, key=lambda d: (d.azimuth_deg, d.elevation_deg)))


def bin_to_grid(directions: Sequence[Direction], nodes: Sequence[Direction]) -> np.ndarray:
    """每个方向归到大圆距离最近的节点；并列时取排序靠前（方位角、仰角较小）的节点"""
    dist = angular_distance_matrix(directions, nodes)
    nearest = dist.min(axis=1, keepdims=True)
    return np.argmax(dist <= nearest + _TIE_TOLERANCE_DEG, axis=1)


_METRIC_FIELDS = {
    'itd': 'itd_signed_us',
    'ild': 'ild_signed_db',
    'lsd': 'lsd_signed_mean_db',
}


def spatial_grid_differences(
    reports: Sequence[CueReport],
    metric: str = 'ild',
    grid_step_deg: float = 45.0,
    alpha: float = 0.05
) -> SpatialGridSummary:
    """
    按网格节点统计有符号线索差异

    每个受试者先在节点内对方向求平均，节点上对受试者做双侧单样本 t 检验（vs 0），
    全部节点一起做 BH 校正。只有一个受试者的节点被排除并单独列出。

    Args:
        reports: 每个受试者一个 CueReport（同一条件）
        metric: 'itd' | 'ild' | 'lsd'
        grid_step_deg: 网格步长
        alpha: 显著性水平

    Returns:
        SpatialGridSummary
    """
    if metric not in GRID_METRICS:
        raise ConfigError(f"未知的空间指标: {metric}（可选 {', '.join(GRID_METRICS)}）")
    if len(reports) < 3:
        raise InsufficientSubjects(f"空间网格统计至少需要 3 个受试者，实际 {len(reports)}")

    nodes = grid_nodes(grid_step_deg)
    attr = _METRIC_FIELDS[metric]
    per_node: Dict[int, List[float]] = {}
    for report in reports:
        bins = bin_to_grid([rec.direction for rec in report.records], nodes)
        values = np.array([getattr(rec, attr) for rec in report.records])
        for node in np.unique(bins):
            per_node.setdefault(int(node), []).append(float(np.mean(values[bins == node])))

    tested = []
    excluded = []
    for node in sorted(per_node):
        values = per_node[node]
        if len(values) < 2:
            excluded.append(nodes[node])
        else:
            tested.append((node, values, t_test_one_sample_or_degenerate(values)))

    adjusted = bh_fdr_adjust([res.p_value for _, _, res in tested])
    results = []
    for (node, values, res), p_adj in zip(tested, adjusted):
        p_adj = max(float(p_adj), res.p_value)
        results.append(GridNodeResult(
            node=nodes[node],
            n_subjects=len(values),
            mean_diff=math.fsum(values) / len(values),
            t_statistic=res.statistic,
            p_value=res.p_value,
            p_adjusted=p_adj,
            tier=significance_tier(p_adj),
        ))

    return SpatialGridSummary(
        metric=metric,
        label=reports[0].label,
        grid_step_deg=grid_step_deg,
        alpha=alpha,
        nodes=tuple(results),
        excluded=tuple(excluded),
        n_subjects=len(reports),
    )


# ==================== 幅度响应图 ====================

def _plane_selection(hrir_set: HrirSet, plane: str, tol_deg: float) -> List[Tuple[float, int]]:
    picked = []
    for idx, d in enumerate(hrir_set.directions):
        if plane == 'horizontal':
            if abs(d.elevation_deg) <= tol_deg:
                picked.append((d.azimuth_deg, idx))
        else:
            lp = to_lateral_polar(d)
            if abs(lp.lateral_deg) <= tol_deg:
                picked.append((lp.polar_deg, idx))
    return sorted(picked)


def magnitude_response_map(
    hrir_set: HrirSet,
    ear,
    plane: str,
    cfg: MetricConfig,
    max_freq_hz: float = MAP_MAX_FREQ_HZ,
    tol_deg: float = DEFAULT_MATCH_TOLERANCE_DEG
) -> MagnitudeMap:
    """
    单耳在水平面（按方位角）或正中面（按极角）上的对数幅度响应

    Args:
        hrir_set: HRIR 集合
        ear: 'left'/'right' 或 0/1
        plane: 'horizontal' | 'median'
        cfg: 指标参数（ε）
        max_freq_hz: 频率上限（默认 20 kHz）
        tol_deg: 判断方向是否在平面上的容差

    Returns:
        MagnitudeMap，angles 升序
    """
    if plane not in PLANES:
        raise ConfigError(f"未知的平面: {plane}（可选 {', '.join(PLANES)}）")
    e = _ear_index(ear)
    picked = _plane_selection(hrir_set, plane, tol_deg)
    if not picked:
        raise HeterogeneousGrids(f"{hrir_set.subject_id or '?'}/{hrir_set.label or '?'} 在 {plane} 平面上没有方向")

    freqs = np.fft.rfftfreq(hrir_set.length, 1.0 / hrir_set.sample_rate_hz)
    keep = freqs <= max_freq_hz
    angles = np.array([a for a, _ in picked])
    mags = log_magnitude(hrir_set.impulses[[i for _, i in picked], e], cfg)[:, keep]
    return MagnitudeMap(
        plane=plane,
        ear=EARS[e],
        label=hrir_set.label,
        angles_deg=angles,
        freq_hz=freqs[keep],
        magnitude_db=mags,
    )


def mean_magnitude_map(
    sets: Sequence[HrirSet],
    ear,
    plane: str,
    cfg: MetricConfig,
    max_freq_hz: float = MAP_MAX_FREQ_HZ
) -> MagnitudeMap:
    """多个受试者的幅度响应图取平均（要求平面上的角度和频点完全一致）"""
    if not sets:
        raise HeterogeneousGrids("没有可平均的集合")
    maps = [magnitude_response_map(s, ear, plane, cfg, max_freq_hz) for s in sets]
    first = maps[0]
    for m in maps[1:]:
        if m.angles_deg.shape != first.angles_deg.shape or not np.allclose(m.angles_deg, first.angles_deg) \
                or m.freq_hz.shape != first.freq_hz.shape:
            raise HeterogeneousGrids(f"{plane} 平面上的方向或频点在受试者之间不一致")
    return MagnitudeMap(
        plane=plane,
        ear=first.ear,
        label=first.label,
        angles_deg=first.angles_deg,
        freq_hz=first.freq_hz,
        magnitude_db=np.mean([m.magnitude_db for m in maps], axis=0),
        n_sets=len(maps),
    )
