#!/usr/bin/env python3
"""
数据模型 - 方向、耳间-极坐标、HRIR 集合与几何工具

角度约定：
    方位角 azimuth  ∈ [0, 360)，0 = 正前方，90 = 听者左侧（俯视逆时针，SOFA 约定）
    仰角 elevation  ∈ [-90, 90]
    侧向角 lateral  ∈ [-90, 90]，正值偏左
    极角 polar      ∈ [-90, 270)，0 = 前方水平，90 = 正上方，180 = 后方水平
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, InvalidDirection, InvalidHrirSet, UnmatchedDirection

# 超过这个角度才算两个不同的方向
UNIQUE_TOLERANCE_DEG = 0.1
DEFAULT_MATCH_TOLERANCE_DEG = 0.5
# 浮点误差允许的仰角越界量
_ELEVATION_SLACK = 1e-9
_DEGENERATE_EPS = 1e-12

AZIMUTH_CONVENTIONS = ('counterclockwise', 'clockwise')


def _wrap_azimuth(azimuth: float) -> float:
    wrapped = azimuth % 360.0
    # -1e-17 % 360 == 360.0
    return 0.0 if wrapped >= 360.0 else wrapped


@dataclass(frozen=True)
class Direction:
    """声源方向（垂直-极坐标）"""

    azimuth_deg: float
    elevation_deg: float
    distance_m: float = 1.5

    def __post_init__(self):
        az = float(self.azimuth_deg)
        el = float(self.elevation_deg)
        dist = float(self.distance_m)

        if not (math.isfinite(az) and math.isfinite(el) and math.isfinite(dist)):
            raise InvalidDirection(f"方向包含非有限值: az={az}, el={el}, r={dist}")
        if abs(el) > 90.0 + _ELEVATION_SLACK:
            raise InvalidDirection(f"仰角超出 [-90, 90]: {el}")
        if dist <= 0:
            raise InvalidDirection(f"距离必须为正: {dist}")

        el = max(-90.0, min(90.0, el))
        # 极点统一存成方位角 0
        az = 0.0 if abs(el) == 90.0 else _wrap_azimuth(az)

        object.__setattr__(self, 'azimuth_deg', az)
        object.__setattr__(self, 'elevation_deg', el)
        object.__setattr__(self, 'distance_m', dist)

    def unit_vector(self) -> np.ndarray:
        """单位向量 (x 前, y 左, z 上)"""
        az = math.radians(self.azimuth_deg)
        el = math.radians(self.elevation_deg)
        return np.array([
            math.cos(el) * math.cos(az),
            math.cos(el) * math.sin(az),
            math.sin(el),
        ])

    def key(self, ndigits: int = 6) -> Tuple[float, float]:
        """分组用的键（按位置汇总时使用）"""
        return (round(self.azimuth_deg, ndigits), round(self.elevation_deg, ndigits))

    def __str__(self) -> str:
        return f"(az {self.azimuth_deg:g}°, el {self.elevation_deg:g}°)"


@dataclass(frozen=True)
class LateralPolar:
    """耳间-极坐标"""

    lateral_deg: float
    polar_deg: float
    degenerate: bool = False

    def __post_init__(self):
        lat = float(self.lateral_deg)
        pol = float(self.polar_deg)
        if not (math.isfinite(lat) and math.isfinite(pol)):
            raise InvalidDirection(f"侧向/极角包含非有限值: {lat}, {pol}")
        if abs(lat) > 90.0 + _ELEVATION_SLACK:
            raise InvalidDirection(f"侧向角超出 [-90, 90]: {lat}")
        lat = max(-90.0, min(90.0, lat))
        pol = (pol + 90.0) % 360.0 - 90.0
        if pol >= 270.0:
            pol = -90.0
        object.__setattr__(self, 'lateral_deg', lat)
        object.__setattr__(self, 'polar_deg', pol)


@dataclass(frozen=True)
class MetricConfig:
    """线索指标参数"""

    epsilon: float = 1e-10
    onset_threshold_fraction: float = 0.20
    upsample_factor: int = 10
    freq_band_hz: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon 必须为正: {self.epsilon}")
        if not 0 < self.onset_threshold_fraction < 1:
            raise ConfigError(f"onset_threshold_fraction 必须在 (0, 1) 内: {self.onset_threshold_fraction}")
        if int(self.upsample_factor) != self.upsample_factor or self.upsample_factor < 1:
            raise ConfigError(f"upsample_factor 必须是 ≥1 的整数: {self.upsample_factor}")
        object.__setattr__(self, 'upsample_factor', int(self.upsample_factor))
        if self.freq_band_hz is not None:
            lo, hi = (float(v) for v in self.freq_band_hz)
            if lo < 0 or hi <= lo:
                raise ConfigError(f"频带必须满足 0 ≤ lo < hi: {self.freq_band_hz}")
            object.__setattr__(self, 'freq_band_hz', (lo, hi))

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> 'MetricConfig':
        data = dict(data or {})
        band = data.get('freq_band_hz')
        return cls(
            epsilon=float(data.get('epsilon', cls.epsilon)),
            onset_threshold_fraction=float(data.get('onset_threshold_fraction', cls.onset_threshold_fraction)),
            upsample_factor=data.get('upsample_factor', cls.upsample_factor),
            freq_band_hz=tuple(band) if band else None,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'epsilon': self.epsilon,
            'onset_threshold_fraction': self.onset_threshold_fraction,
            'upsample_factor': self.upsample_factor,
            'freq_band_hz': list(self.freq_band_hz) if self.freq_band_hz else None,
        }


@dataclass(frozen=True, eq=False)
class HrirSet:
    """
    一个受试者/条件的 HRIR 集合

    impulses 形状为 (D, 2, N)，第二维依次为左耳、右耳。
    itd_shifts 仅在 ITD 已去除（no-ITD）时存在，形状 (D, 2)。
    """

    sample_rate_hz: int
    directions: Tuple[Direction, ...]
    impulses: np.ndarray
    itd_shifts: Optional[np.ndarray] = None
    label: str = ''
    subject_id: str = ''
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        fs = self.sample_rate_hz
        if isinstance(fs, float) and fs.is_integer():
            fs = int(fs)
        if not isinstance(fs, (int, np.integer)) or isinstance(fs, bool) or fs <= 0:
            raise InvalidHrirSet(f"采样率必须是正整数: {self.sample_rate_hz}")
        object.__setattr__(self, 'sample_rate_hz', int(fs))

        directions = tuple(self.directions)
        if not directions:
            raise InvalidHrirSet("HRIR 集合至少需要一个方向")
        for d in directions:
            if not isinstance(d, Direction):
                raise InvalidHrirSet(f"方向类型错误: {d!r}")
        object.__setattr__(self, 'directions', directions)

        impulses = np.array(self.impulses, dtype=np.float64)
        if impulses.ndim != 3 or impulses.shape[0] != len(directions) or impulses.shape[1] != 2:
            raise InvalidHrirSet(
                f"impulses 形状应为 ({len(directions)}, 2, N)，实际为 {impulses.shape}"
            )
        if impulses.shape[2] <= 144:
            raise InvalidHrirSet(f"脉冲长度必须大于 144（淡入 16 + 淡出 128），实际为 {impulses.shape[2]}")
        if not np.all(np.isfinite(impulses)):
            raise InvalidHrirSet("impulses 含有非有限值")
        impulses.setflags(write=False)
        object.__setattr__(self, 'impulses', impulses)

        if self.itd_shifts is not None:
            shifts = np.array(self.itd_shifts)
            if shifts.shape != (len(directions), 2) or not np.all(shifts == np.round(shifts)):
                raise InvalidHrirSet(f"itd_shifts 形状应为 ({len(directions)}, 2) 的整数数组")
            shifts = shifts.astype(np.int64)
            shifts.setflags(write=False)
            object.__setattr__(self, 'itd_shifts', shifts)

        if len(directions) > 1:
            dist = angular_distance_matrix(directions, directions)
            iu = np.triu_indices(len(directions), k=1)
            close = dist[iu] < UNIQUE_TOLERANCE_DEG
            if np.any(close):
                k = int(np.argmax(close))
                i, j = iu[0][k], iu[1][k]
                raise InvalidHrirSet(f"方向 {directions[i]} 与 {directions[j]} 相距不足 {UNIQUE_TOLERANCE_DEG}°")

        object.__setattr__(self, 'label', str(self.label))
        object.__setattr__(self, 'subject_id', str(self.subject_id))
        object.__setattr__(self, 'provenance', dict(self.provenance))

    @property
    def n_directions(self) -> int:
        return len(self.directions)

    @property
    def length(self) -> int:
        return int(self.impulses.shape[2])

    @property
    def is_no_itd(self) -> bool:
        return self.itd_shifts is not None

    def replace(self, **changes) -> 'HrirSet':
        """返回修改了部分字段的新集合（重新校验不变量）"""
        return replace(self, **changes)

    def find_direction(self, target: Direction, tol_deg: float = DEFAULT_MATCH_TOLERANCE_DEG) -> Optional[int]:
        """查找容差内最近的方向下标，找不到返回 None"""
        dist = angular_distance_matrix([target], self.directions)[0]
        idx = int(np.argmin(dist))
        return idx if dist[idx] <= tol_deg else None


# ==================== 几何工具 ====================

def unit_vectors(directions: Sequence[Direction]) -> np.ndarray:
    """方向列表 → (D, 3) 单位向量"""
    az = np.radians([d.azimuth_deg for d in directions])
    el = np.radians([d.elevation_deg for d in directions])
    return np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])


def angular_distance_matrix(a: Sequence[Direction], b: Sequence[Direction]) -> np.ndarray:
    """两组方向之间的大圆距离矩阵（度）"""
    va = unit_vectors(a)[:, None, :]
    vb = unit_vectors(b)[None, :, :]
    cross = np.linalg.norm(np.cross(va, vb), axis=-1)
    dot = np.sum(va * vb, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def great_circle_deg(a: Direction, b: Direction) -> float:
    """
    两个方向之间的大圆角距离

    用 atan2(|a×b|, a·b)，小角度也保持精度；极点上所有方位角等价。

    Returns:
        [0, 180] 内的角度（度）
    """
    va = a.unit_vector()
    vb = b.unit_vector()
    return math.degrees(math.atan2(float(np.linalg.norm(np.cross(va, vb))), float(np.dot(va, vb))))


def to_lateral_polar(d: Direction) -> LateralPolar:
    """垂直-极坐标 → 耳间-极坐标；|lateral| = 90 时极角取 0 并标记退化"""
    x, y, z = d.unit_vector()
    radial = math.hypot(x, z)
    if radial < _DEGENERATE_EPS:
        return LateralPolar(math.copysign(90.0, y), 0.0, degenerate=True)

    lateral = math.degrees(math.atan2(y, radial))
    polar = math.degrees(math.atan2(z, x))
    if polar < -90.0:
        polar += 360.0
    return LateralPolar(lateral, polar)


def from_lateral_polar(lp: LateralPolar) -> Direction:
    """耳间-极坐标 → 垂直-极坐标"""
    lat = math.radians(lp.lateral_deg)
    pol = math.radians(lp.polar_deg)
    y = math.sin(lat)
    x = math.cos(lat) * math.cos(pol)
    z = math.cos(lat) * math.sin(pol)
    azimuth = math.degrees(math.atan2(y, x))
    elevation = math.degrees(math.atan2(z, math.hypot(x, y)))
    return Direction(azimuth, elevation)


def mirror_front_back(d: Direction) -> Direction:
    """前后镜像：azimuth ↦ (180 − az) mod 360，仰角不变"""
    return Direction(180.0 - d.azimuth_deg, d.elevation_deg, d.distance_m)


def match_directions(
    cand: HrirSet,
    ref: HrirSet,
    tol_deg: float = DEFAULT_MATCH_TOLERANCE_DEG
) -> List[Tuple[int, int]]:
    """
    把每个参考方向与容差内最近的候选方向配对（单射）

    Args:
        cand: 候选 HRIR 集合
        ref: 参考（实测）HRIR 集合
        tol_deg: 匹配容差（度）

    Returns:
        [(候选下标, 参考下标), ...]，按参考下标排序
    """
    dist = angular_distance_matrix(ref.directions, cand.directions)

    nearest = dist.min(axis=1)
    missing = np.flatnonzero(nearest > tol_deg)
    if missing.size:
        raise UnmatchedDirection(ref.directions[int(missing[0])], tol_deg)

    # 超出容差的配对给一个远大于任何合法总代价的惩罚
    penalty = 1e6 + 180.0 * dist.shape[0]
    cost = np.where(dist <= tol_deg, dist, penalty)
    rows, cols = linear_sum_assignment(cost)

    assigned = dict(zip(rows.tolist(), cols.tolist()))
    pairs = []
    for r in range(len(ref.directions)):
        c = assigned.get(r)
        if c is None or dist[r, c] > tol_deg:
            raise UnmatchedDirection(ref.directions[r], tol_deg)
        pairs.append((c, r))
    return pairs


def apply_azimuth_convention(hrir_set: HrirSet, convention: str) -> HrirSet:
    """
    把读入的方位角换算到逆时针约定

    Args:
        hrir_set: 读入的集合
        convention: 'counterclockwise'（不变）或 'clockwise'（方位角取反）
    """
    if convention not in AZIMUTH_CONVENTIONS:
        raise ConfigError(f"未知的方位角约定: {convention}")
    if convention == 'counterclockwise':
        return hrir_set
    flipped = tuple(
        Direction(-d.azimuth_deg, d.elevation_deg, d.distance_m) for d in hrir_set.directions
    )
    return hrir_set.replace(directions=flipped)
