#!/usr/bin/env python3
"""
行为定位指标 - 单试次误差、混淆分类、受试者/组汇总、条件间检验、LSD 与成绩的相关

七个指标：
    大圆误差、侧向准确度、侧向精度、极角准确度、极角精度、前后混淆率、象限错误率
"""

import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from utils.logs import ResponseLog, Trial
from .errors import (
    AllZeroDifferences,
    ConfigError,
    ConstantInput,
    DegenerateShape,
    EmptyInput,
    InsufficientSubjects,
    NoTrials,
)
from .model import Direction, LateralPolar, great_circle_deg, mirror_front_back, to_lateral_polar
from .stats import (
    StatResult,
    friedman,
    holm_adjust,
    median_iqr,
    pearson,
    rm_anova_one_way,
    shapiro_wilk,
    tukey_hsd,
    wilcoxon_signed_rank,
)

CONFUSION_CLASSES = ('precision', 'front_back', 'in_cone', 'off_cone')
QUADRANTS = ('front_down', 'front_up', 'back_up', 'back_down')
QUADRANT_RULES = ('strict', 'polar_error_90')

SUMMARY_METRICS = (
    'great_circle_deg',
    'lateral_accuracy_deg',
    'lateral_precision_deg',
    'polar_accuracy_deg',
    'polar_precision_deg',
    'front_back_rate',
    'quadrant_error_rate',
)
# 排除前后混淆后的极角指标
LOCAL_METRICS = ('polar_accuracy_local_deg', 'polar_precision_local_deg')

PLANE_TOLERANCE_DEG = 5.0


@dataclass(frozen=True)
class BehaviorConfig:
    """行为分析参数"""

    cone_deg: float = 45.0
    quadrant_rule: str = 'strict'
    alpha: float = 0.05

    def __post_init__(self):
        if not 0 < self.cone_deg < 180:
            raise ConfigError(f"cone_deg 必须在 (0, 180) 内: {self.cone_deg}")
        if self.quadrant_rule not in QUADRANT_RULES:
            raise ConfigError(f"未知的象限规则: {self.quadrant_rule}（可选 {', '.join(QUADRANT_RULES)}）")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha 必须在 (0, 1) 内: {self.alpha}")

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> 'BehaviorConfig':
        data = dict(data or {})
        return cls(
            cone_deg=float(data.get('cone_deg', 45.0)),
            quadrant_rule=str(data.get('quadrant_rule', 'strict')),
            alpha=float(data.get('alpha', 0.05)),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TrialMetrics:
    """单个试次的全部误差"""

    target: Direction
    response: Direction
    great_circle_deg: float
    lateral_target_deg: float
    lateral_response_deg: float
    lateral_error_deg: float
    polar_target_deg: float
    polar_response_deg: float
    polar_error_deg: float
    confusion_class: str
    quadrant_target: str
    quadrant_response: str
    is_quadrant_error: bool
    near_axis: bool = False
    participant: str = ''
    condition: str = ''
    trial: int = -1

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row.pop('target')
        row.pop('response')
        return {
            'participant': self.participant,
            'condition': self.condition,
            'trial': self.trial,
            'target_az': self.target.azimuth_deg,
            'target_el': self.target.elevation_deg,
            'resp_az': self.response.azimuth_deg,
            'resp_el': self.response.elevation_deg,
            **{k: v for k, v in row.items() if k not in ('participant', 'condition', 'trial')},
        }


@dataclass(frozen=True)
class ParticipantSummary:
    """一个受试者在一个条件下的七项指标（以及排除混淆后的极角指标）"""

    participant: str
    condition: str
    n_trials: int
    n_locations: int
    great_circle_deg: float
    lateral_accuracy_deg: float
    lateral_precision_deg: float
    polar_accuracy_deg: float
    polar_precision_deg: float
    front_back_rate: float
    quadrant_error_rate: float
    polar_accuracy_local_deg: float = math.nan
    polar_precision_local_deg: float = math.nan
    near_axis_trials: int = 0

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)

    def metric(self, name: str) -> float:
        if name not in SUMMARY_METRICS + LOCAL_METRICS:
            raise ConfigError(f"未知的行为指标: {name}")
        return float(getattr(self, name))


@dataclass(frozen=True)
class GroupRow:
    """一个条件、一个指标的组水平描述统计"""

    condition: str
    metric: str
    n_participants: int
    median: float
    p25: float
    p75: float

    def to_row(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ConditionTests:
    """条件间比较：正态性门控 → 总体检验 → 两两比较"""

    metric: str
    conditions: List[str]
    participants: List[str]
    normality: List[StatResult] = field(default_factory=list)
    all_normal: bool = False
    omnibus: Optional[StatResult] = None
    pairwise: List[StatResult] = field(default_factory=list)
    trail: List[str] = field(default_factory=list)

    def rows(self) -> List[Dict[str, Any]]:
        out = []
        for res in self.normality:
            out.append({'metric': self.metric, 'stage': 'normality', **res.to_dict()})
        if self.omnibus is not None:
            out.append({'metric': self.metric, 'stage': 'omnibus', **self.omnibus.to_dict()})
        for res in self.pairwise:
            out.append({'metric': self.metric, 'stage': 'pairwise', **res.to_dict()})
        return out


# ==================== 单试次 ====================

def classify_confusion(target: Direction, response: Direction, cone_deg: float = 45.0) -> str:
    """
    混淆分类（按顺序判断，只取第一个成立的类别）

    precision → front_back → in_cone → off_cone
    """
    if great_circle_deg(target, response) <= cone_deg:
        return 'precision'
    if great_circle_deg(mirror_front_back(target), response) <= cone_deg:
        return 'front_back'
    if abs(to_lateral_polar(response).lateral_deg - to_lateral_polar(target).lateral_deg) <= cone_deg:
        return 'in_cone'
    return 'off_cone'


def quadrant_of(lp: LateralPolar) -> str:
    """
    极角象限

    区间为 [−90, 0)、[0, 90)、[90, 180)、[180, 270]，边界值归入较大的区间。
    水平面后方（极角 180）因此记为 back_down。
    """
    polar = lp.polar_deg
    if polar < 0.0:
        return 'front_down'
    if polar < 90.0:
        return 'front_up'
    if polar < 180.0:
        return 'back_up'
    return 'back_down'


def wrap_180(angle: float) -> float:
    """把角度差折到 (−180, 180]"""
    wrapped = angle % 360.0
    return wrapped - 360.0 if wrapped > 180.0 else wrapped


def trial_metrics(
    target: Direction,
    response: Direction,
    cfg: Optional[BehaviorConfig] = None,
    trial: Optional[Trial] = None
) -> TrialMetrics:
    """
    计算单个试次的全部误差

    Args:
        target: 目标方向
        response: 响应方向
        cfg: 行为分析参数（混淆锥角、象限规则）
        trial: 可选，日志中的试次（带上受试者/条件/编号）

    Returns:
        TrialMetrics
    """
    cfg = cfg or BehaviorConfig()
    lp_t = to_lateral_polar(target)
    lp_r = to_lateral_polar(response)
    polar_error = wrap_180(lp_r.polar_deg - lp_t.polar_deg)
    q_t = quadrant_of(lp_t)
    q_r = quadrant_of(lp_r)
    if cfg.quadrant_rule == 'strict':
        quadrant_error = q_t != q_r
    else:
        quadrant_error = abs(polar_error) > 90.0

    return TrialMetrics(
        target=target,
        response=response,
        great_circle_deg=great_circle_deg(target, response),
        lateral_target_deg=lp_t.lateral_deg,
        lateral_response_deg=lp_r.lateral_deg,
        lateral_error_deg=lp_r.lateral_deg - lp_t.lateral_deg,
        polar_target_deg=lp_t.polar_deg,
        polar_response_deg=lp_r.polar_deg,
        polar_error_deg=polar_error,
        confusion_class=classify_confusion(target, response, cfg.cone_deg),
        quadrant_target=q_t,
        quadrant_response=q_r,
        is_quadrant_error=bool(quadrant_error),
        # 目标与其前后镜像落在同一个锥内，前后混淆无法区分
        near_axis=great_circle_deg(target, mirror_front_back(target)) <= cfg.cone_deg,
        participant=trial.participant if trial else '',
        condition=trial.condition if trial else '',
        trial=trial.trial if trial else -1,
    )


def log_trial_metrics(log: ResponseLog, cfg: Optional[BehaviorConfig] = None) -> List[TrialMetrics]:
    """日志中每个试次的误差，顺序与日志一致"""
    return [trial_metrics(t.target, t.response, cfg, trial=t) for t in log.trials]


# ==================== 受试者与组汇总 ====================

def _location_stats(metrics: Sequence[TrialMetrics]) -> Dict[str, float]:
    lateral = np.array([m.lateral_error_deg for m in metrics])
    polar = np.array([m.polar_error_deg for m in metrics])
    return {
        'great_circle': float(np.median([m.great_circle_deg for m in metrics])),
        'lateral_acc': float(np.median(np.abs(lateral))),
        'lateral_sd': float(np.std(lateral)),
        'polar_acc': float(np.median(np.abs(polar))),
        'polar_sd': float(np.std(polar)),
    }


def _median_over_locations(groups: Mapping[Tuple[float, float], Sequence[TrialMetrics]]) -> Dict[str, float]:
    per_location = [_location_stats(ms) for _, ms in sorted(groups.items())]
    return {k: float(np.median([loc[k] for loc in per_location])) for k in per_location[0]}


def participant_summary(
    log: ResponseLog,
    participant: str,
    condition: str,
    cfg: Optional[BehaviorConfig] = None
) -> ParticipantSummary:
    """
    单个受试者、单个条件的指标汇总

    每个目标位置先取试次中位数（精度为该位置有符号误差的标准差），
    再对位置取中位数；两个比率为全部试次上的百分比。
    极角的 local 变体排除了前后混淆试次，没有剩余试次时为 NaN。

    Raises:
        NoTrials: 该受试者在该条件下没有试次
    """
    trials = log.select(participant, condition)
    if not trials:
        raise NoTrials(f"受试者 {participant} 在条件 {condition} 下没有试次")

    metrics = [trial_metrics(t.target, t.response, cfg, trial=t) for t in trials]
    groups: Dict[Tuple[float, float], List[TrialMetrics]] = {}
    local_groups: Dict[Tuple[float, float], List[TrialMetrics]] = {}
    for m in metrics:
        groups.setdefault(m.target.key(), []).append(m)
        if m.confusion_class != 'front_back':
            local_groups.setdefault(m.target.key(), []).append(m)

    overall = _median_over_locations(groups)
    local = _median_over_locations(local_groups) if local_groups else None
    n = len(metrics)

    return ParticipantSummary(
        participant=participant,
        condition=condition,
        n_trials=n,
        n_locations=len(groups),
        great_circle_deg=overall['great_circle'],
        lateral_accuracy_deg=overall['lateral_acc'],
        lateral_precision_deg=overall['lateral_sd'],
        polar_accuracy_deg=overall['polar_acc'],
        polar_precision_deg=overall['polar_sd'],
        front_back_rate=100.0 * sum(m.confusion_class == 'front_back' for m in metrics) / n,
        quadrant_error_rate=100.0 * sum(m.is_quadrant_error for m in metrics) / n,
        polar_accuracy_local_deg=local['polar_acc'] if local else math.nan,
        polar_precision_local_deg=local['polar_sd'] if local else math.nan,
        near_axis_trials=sum(m.near_axis for m in metrics),
    )


def summarize_log(log: ResponseLog, cfg: Optional[BehaviorConfig] = None) -> List[ParticipantSummary]:
    """日志中每个 (受试者, 条件) 组合的汇总"""
    rows = []
    for participant in log.participants():
        for condition in log.conditions():
            if log.select(participant, condition):
                rows.append(participant_summary(log, participant, condition, cfg))
    return rows


def group_summary(rows: Sequence[ParticipantSummary]) -> List[GroupRow]:
    """
    每个条件、每个指标：受试者中位数的中位数与四分位数

    Raises:
        EmptyInput: 没有任何受试者汇总
    """
    if not rows:
        raise EmptyInput("组汇总需要至少一个受试者")
    conditions = list(dict.fromkeys(r.condition for r in rows))
    out = []
    for condition in conditions:
        subset = [r for r in rows if r.condition == condition]
        for metric in SUMMARY_METRICS + LOCAL_METRICS:
            values = [r.metric(metric) for r in subset]
            values = [v for v in values if not math.isnan(v)]
            if not values:
                continue
            med, p25, p75 = median_iqr(values)
            out.append(GroupRow(condition, metric, len(values), med, p25, p75))
    return out


# ==================== 条件间检验 ====================

def _metric_matrix(
    table: Mapping[str, Mapping[str, float]],
    conditions: Sequence[str]
) -> Tuple[np.ndarray, List[str], List[str], List[str]]:
    conditions = list(conditions)
    complete, dropped = [], []
    for participant, values in table.items():
        if all(c in values and not math.isnan(values[c]) for c in conditions):
            complete.append(participant)
        else:
            dropped.append(participant)
    matrix = np.array([[table[p][c] for c in conditions] for p in complete], dtype=np.float64)
    return matrix.reshape(len(complete), len(conditions)), conditions, complete, dropped


def condition_tests(
    rows: Sequence[ParticipantSummary],
    metric: str,
    alpha: float = 0.05
) -> ConditionTests:
    """
    某个指标的条件间比较

    所有条件的受试者中位数都通过 Shapiro–Wilk（p ≥ alpha）时用重复测量方差分析
    + Tukey HSD；否则用 Friedman + 两两 Wilcoxon + Holm 校正。
    不完整（缺条件或为 NaN）的受试者被剔除并记录在 trail 中。

    Raises:
        InsufficientSubjects: 完整受试者少于 3 个
        DegenerateShape: 条件少于 2 个
    """
    table: Dict[str, Dict[str, float]] = {}
    for r in rows:
        table.setdefault(r.participant, {})[r.condition] = r.metric(metric)
    return table_condition_tests(table, metric, list(dict.fromkeys(r.condition for r in rows)), alpha)


def table_condition_tests(
    table: Mapping[str, Mapping[str, float]],
    metric: str,
    conditions: Sequence[str],
    alpha: float = 0.05
) -> ConditionTests:
    """
    同 condition_tests，输入为 受试者 → 条件 → 值 的表（线索聚合指标也走这里）

    Args:
        table: 受试者 → {条件: 值}
        metric: 指标名（只用于标注结果）
        conditions: 条件顺序
        alpha: 正态性门控和显著性水平
    """
    matrix, conditions, participants, dropped = _metric_matrix(table, conditions)
    result = ConditionTests(metric=metric, conditions=conditions, participants=participants)
    if dropped:
        result.trail.append(f"剔除不完整的受试者: {', '.join(dropped)}")
    if len(conditions) < 2:
        raise DegenerateShape(f"条件间比较至少需要 2 个条件，实际 {len(conditions)}")
    if len(participants) < 3:
        raise InsufficientSubjects(f"条件间比较至少需要 3 个受试者，实际 {len(participants)}")

    for j, condition in enumerate(conditions):
        res = shapiro_wilk(matrix[:, j])
        result.normality.append(StatResult(
            res.test, res.statistic, res.p_value, res.n, extra={'condition': condition},
        ))
    result.all_normal = all(r.p_value >= alpha for r in result.normality)
    result.trail.append(
        "Shapiro–Wilk: " + ', '.join(f"{r.extra['condition']} p={r.p_value:.4g}" for r in result.normality)
    )

    if result.all_normal:
        result.trail.append("全部正态 → 重复测量方差分析 + Tukey HSD")
        result.omnibus = rm_anova_one_way(matrix)
        result.pairwise = tukey_hsd(matrix, conditions)
        return result

    result.trail.append("存在非正态条件 → Friedman + Wilcoxon 符号秩 + Holm")
    result.omnibus = friedman(matrix)
    raw = []
    for i, j in combinations(range(len(conditions)), 2):
        pair = f"{conditions[i]} vs {conditions[j]}"
        try:
            res = wilcoxon_signed_rank(matrix[:, i], matrix[:, j])
            raw.append(StatResult(res.test, res.statistic, res.p_value, res.n, extra={**res.extra, 'pair': pair}))
        except AllZeroDifferences:
            result.trail.append(f"{pair}: 差值全为零，记 p = 1")
            raw.append(StatResult('wilcoxon_signed_rank', 0.0, 1.0, 0, extra={'pair': pair, 'all_zero': True}))

    adjusted = holm_adjust([r.p_value for r in raw])
    result.pairwise = [
        StatResult(r.test, r.statistic, r.p_value, r.n, df=r.df,
                   p_adjusted=float(p_adj), correction='holm', extra=r.extra)
        for r, p_adj in zip(raw, adjusted)
    ]
    return result


# ==================== 相关分析 ====================

def performance_differences(
    rows: Sequence[ParticipantSummary],
    metric: str,
    condition: str,
    baseline: str
) -> Dict[str, float]:
    """每个受试者的成绩差（condition − baseline），缺任一条件的受试者跳过"""
    table: Dict[str, Dict[str, float]] = {}
    for r in rows:
        table.setdefault(r.participant, {})[r.condition] = r.metric(metric)
    return {
        p: values[condition] - values[baseline]
        for p, values in table.items()
        if condition in values and baseline in values
    }


def lsd_performance_correlation(
    lsd_per_participant: Sequence[float],
    perf_diff_per_participant: Sequence[float]
) -> StatResult:
    """LSD 与成绩差之间的 Pearson 相关"""
    return pearson(lsd_per_participant, perf_diff_per_participant)


def lsd_correlation_table(
    lsd_by_participant: Mapping[str, float],
    rows: Sequence[ParticipantSummary],
    condition: str,
    baseline: str
) -> List[StatResult]:
    """
    对每个行为指标计算 LSD 与 (condition − baseline) 成绩差的相关

    常数输入的指标记为 NaN 结果而不是中止整张表。
    """
    results = []
    for metric in SUMMARY_METRICS:
        diffs = performance_differences(rows, metric, condition, baseline)
        common = [p for p in diffs if p in lsd_by_participant]
        extra = {'metric': metric, 'condition': condition, 'baseline': baseline}
        try:
            res = lsd_performance_correlation([lsd_by_participant[p] for p in common], [diffs[p] for p in common])
            results.append(StatResult(res.test, res.statistic, res.p_value, res.n, df=res.df, extra=extra))
        except (ConstantInput, InsufficientSubjects) as e:
            results.append(StatResult('pearson', math.nan, math.nan, len(common), extra={**extra, 'error': str(e)}))
    return results


def plane_correlation(metrics: Sequence[TrialMetrics], plane: str) -> StatResult:
    """
    目标与响应位置在某个平面上的 Pearson 相关

    horizontal: |仰角| ≤ 5° 的目标，比较侧向角
    median:     |侧向角| ≤ 5° 的目标，比较极角
    """
    if plane == 'horizontal':
        picked = [m for m in metrics if abs(m.target.elevation_deg) <= PLANE_TOLERANCE_DEG]
        x = [m.lateral_target_deg for m in picked]
        y = [m.lateral_response_deg for m in picked]
    elif plane == 'median':
        picked = [m for m in metrics if abs(m.lateral_target_deg) <= PLANE_TOLERANCE_DEG]
        x = [m.polar_target_deg for m in picked]
        y = [m.polar_response_deg for m in picked]
    else:
        raise ConfigError(f"未知的平面: {plane}（可选 horizontal, median）")
    res = pearson(x, y)
    return StatResult(res.test, res.statistic, res.p_value, res.n, df=res.df, extra={'plane': plane})
