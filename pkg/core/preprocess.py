#!/usr/bin/env python3
"""
预处理模块 - 对齐、加窗、电平归一化、去除 ITD

处理顺序：方向对齐 → 时间加窗 → 电平归一化 → ITD 去除
"""

from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np
from scipy.signal import resample_poly

from .errors import ConfigError, FrontalDirectionMissing, LengthTooShort, SilentImpulse, ZeroFrontalEnergy
from .model import DEFAULT_MATCH_TOLERANCE_DEG, Direction, HrirSet, MetricConfig, match_directions

PIPELINE_ORDER = ('align', 'window', 'normalise', 'remove_itd')


@dataclass(frozen=True)
class PreprocessConfig:
    """预处理参数"""

    fade_in_samples: int = 16
    fade_out_samples: int = 128
    target_length: Optional[int] = None        # None = 使用参考集合的长度
    frontal_direction: Direction = field(default_factory=lambda: Direction(0.0, 0.0))
    itd_padding_ms: float = 0.8
    match_tolerance_deg: float = DEFAULT_MATCH_TOLERANCE_DEG
    metric: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if self.fade_in_samples < 1 or self.fade_out_samples < 1:
            raise ConfigError("淡入/淡出长度必须 ≥ 1")
        if self.target_length is not None and self.fade_in_samples + self.fade_out_samples > self.target_length:
            raise ConfigError(
                f"淡入 {self.fade_in_samples} + 淡出 {self.fade_out_samples} 超过目标长度 {self.target_length}"
            )
        if self.itd_padding_ms < 0:
            raise ConfigError(f"itd_padding_ms 不能为负: {self.itd_padding_ms}")
        if self.match_tolerance_deg <= 0:
            raise ConfigError(f"match_tolerance_deg 必须为正: {self.match_tolerance_deg}")

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]], metric: Optional[MetricConfig] = None) -> 'PreprocessConfig':
        data = dict(data or {})
        frontal = data.get('frontal_direction') or {}
        target = data.get('target_length')
        return cls(
            fade_in_samples=int(data.get('fade_in_samples', 16)),
            fade_out_samples=int(data.get('fade_out_samples', 128)),
            target_length=int(target) if target else None,
            frontal_direction=Direction(
                float(frontal.get('azimuth_deg', 0.0)),
                float(frontal.get('elevation_deg', 0.0)),
            ),
            itd_padding_ms=float(data.get('itd_padding_ms', 0.8)),
            match_tolerance_deg=float(data.get('match_tolerance_deg', DEFAULT_MATCH_TOLERANCE_DEG)),
            metric=metric or MetricConfig(),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            'fade_in_samples': self.fade_in_samples,
            'fade_out_samples': self.fade_out_samples,
            'target_length': self.target_length,
            'frontal_direction': {
                'azimuth_deg': self.frontal_direction.azimuth_deg,
                'elevation_deg': self.frontal_direction.elevation_deg,
            },
            'itd_padding_ms': self.itd_padding_ms,
            'match_tolerance_deg': self.match_tolerance_deg,
        }


def pad_samples(sample_rate_hz: int, itd_padding_ms: float) -> int:
    """固定前置留白的样本数（48 kHz、0.8 ms → round(38.4) = 38）"""
    return int(round(itd_padding_ms * sample_rate_hz / 1000.0))


def window_weights(length: int, fade_in: int, fade_out: int) -> np.ndarray:
    """
    窗函数：sin² 淡入 + cos² 淡出，中间为 1

    w[n] = sin²(πn / (2·fade_in)),           n ∈ [0, fade_in)
    w[L - fade_out + k] = cos²(πk / (2·fade_out)), k ∈ [0, fade_out)
    """
    if fade_in + fade_out > length:
        raise ConfigError(f"淡入 {fade_in} + 淡出 {fade_out} 超过长度 {length}")
    w = np.ones(length)
    n = np.arange(fade_in)
    w[:fade_in] = np.sin(np.pi * n / (2 * fade_in)) ** 2
    k = np.arange(fade_out)
    w[length - fade_out:] = np.cos(np.pi * k / (2 * fade_out)) ** 2
    return w


def window_hrirs(hrir_set: HrirSet, cfg: PreprocessConfig) -> HrirSet:
    """
    截断到目标长度并加窗

    Args:
        hrir_set: 输入集合
        cfg: 预处理参数

    Returns:
        加窗后的新集合
    """
    target = cfg.target_length or hrir_set.length
    if hrir_set.length < target:
        raise LengthTooShort(f"脉冲长度 {hrir_set.length} 小于目标长度 {target}")

    w = window_weights(target, cfg.fade_in_samples, cfg.fade_out_samples)
    windowed = hrir_set.impulses[:, :, :target] * w

    provenance = dict(hrir_set.provenance)
    provenance['window'] = {
        'target_length': target,
        'fade_in_samples': cfg.fade_in_samples,
        'fade_out_samples': cfg.fade_out_samples,
    }
    return hrir_set.replace(impulses=windowed, provenance=provenance)


def frontal_rms(hrir_set: HrirSet, cfg: PreprocessConfig) -> float:
    """正前方方向左右耳 RMS 的平均值"""
    idx = hrir_set.find_direction(cfg.frontal_direction, cfg.match_tolerance_deg)
    if idx is None:
        raise FrontalDirectionMissing(
            f"{hrir_set.subject_id or '?'}/{hrir_set.label or '?'} 缺少正前方方向 {cfg.frontal_direction}"
        )
    pair = hrir_set.impulses[idx]
    rms = np.sqrt(np.mean(pair ** 2, axis=-1))
    return float((rms[0] + rms[1]) / 2.0)


def normalise_level(hrir_set: HrirSet, cfg: PreprocessConfig, reference_rms: float) -> Tuple[HrirSet, float]:
    """
    整体缩放，使正前方的平均 RMS 等于参考值

    Returns:
        (缩放后的集合, 缩放系数)
    """
    current = frontal_rms(hrir_set, cfg)
    if current == 0.0:
        raise ZeroFrontalEnergy(f"{hrir_set.subject_id or '?'}/{hrir_set.label or '?'} 正前方脉冲能量为零")

    scale = reference_rms / current
    provenance = dict(hrir_set.provenance)
    provenance['level_scale'] = scale
    return hrir_set.replace(impulses=hrir_set.impulses * scale, provenance=provenance), scale


def detect_onset(impulse: np.ndarray, cfg: MetricConfig) -> float:
    """
    阈值法检测起始点

    在原始采样网格上找第一个 |幅度| ≥ onset_threshold_fraction × 峰值 的样本。
    整数起始点保持精确，亚样本细化见 subsample_onset。

    Args:
        impulse: 单耳脉冲
        cfg: 指标参数

    Returns:
        起始点（样本，≥ 0）
    """
    x = np.abs(np.asarray(impulse, dtype=np.float64))
    peak = np.max(x) if x.size else 0.0
    if peak == 0.0:
        raise SilentImpulse("脉冲全为零，无法检测起始点")
    return float(np.argmax(x >= cfg.onset_threshold_fraction * peak))


def subsample_onset(impulse: np.ndarray, cfg: MetricConfig) -> float:
    """
    亚样本起始点（只用于 ITD 估计，不用于移位）

    先取原始网格上的起始样本 i，再把 (i−1, i] 这一段做 upsample_factor 倍
    带限上采样，取细网格上第一个过阈值的点。上采样的预振铃不会越过 i−1。

    Returns:
        起始点（样本，≥ 0）；upsample_factor = 1 或 i = 0 时等于 detect_onset
    """
    onset = detect_onset(impulse, cfg)
    factor = cfg.upsample_factor
    i = int(onset)
    if factor == 1 or i == 0:
        return onset

    x = np.asarray(impulse, dtype=np.float64)
    fine = np.abs(resample_poly(x, factor, 1))
    threshold = cfg.onset_threshold_fraction * np.max(np.abs(x))
    window = fine[(i - 1) * factor + 1:i * factor + 1]
    hits = np.flatnonzero(window >= threshold)
    if hits.size == 0:
        return onset
    return (i - 1) + (hits[0] + 1) / factor


def remove_itd(hrir_set: HrirSet, cfg: PreprocessConfig) -> HrirSet:
    """
    去除 ITD：把每只耳朵的起始点移到固定留白位置

    每个方向、每只耳朵循环移位 k = round(pad − onset)，绕回的样本置零，
    k 记录在 itd_shifts 中。

    Returns:
        no-ITD 集合
    """
    pad = pad_samples(hrir_set.sample_rate_hz, cfg.itd_padding_ms)
    n = hrir_set.length
    out = np.empty_like(hrir_set.impulses)
    shifts = np.zeros((hrir_set.n_directions, 2), dtype=np.int64)

    for d in range(hrir_set.n_directions):
        for ear in range(2):
            x = hrir_set.impulses[d, ear]
            try:
                onset = detect_onset(x, cfg.metric)
            except SilentImpulse:
                raise SilentImpulse(
                    f"{hrir_set.subject_id or '?'}/{hrir_set.label or '?'} 方向 {hrir_set.directions[d]} "
                    f"{'左' if ear == 0 else '右'}耳脉冲全为零"
                )
            k = int(round(pad - onset))
            shifted = np.roll(x, k)
            if k > 0:
                shifted[:min(k, n)] = 0.0
            elif k < 0:
                shifted[max(n + k, 0):] = 0.0
            out[d, ear] = shifted
            shifts[d, ear] = k

    if hrir_set.itd_shifts is not None:
        shifts = shifts + hrir_set.itd_shifts

    provenance = dict(hrir_set.provenance)
    provenance['itd_removal'] = {
        'pad_samples': pad,
        'itd_padding_ms': cfg.itd_padding_ms,
        'onset_threshold_fraction': cfg.metric.onset_threshold_fraction,
    }
    return hrir_set.replace(impulses=out, itd_shifts=shifts, provenance=provenance)


def align_to_reference(hrir_set: HrirSet, reference_set: HrirSet, cfg: PreprocessConfig) -> HrirSet:
    """按参考集合的方向顺序重排（方向采用参考的坐标）"""
    pairs = match_directions(hrir_set, reference_set, cfg.match_tolerance_deg)
    order = [c for c, _ in pairs]
    shifts = hrir_set.itd_shifts[order] if hrir_set.itd_shifts is not None else None
    return hrir_set.replace(
        directions=reference_set.directions,
        impulses=hrir_set.impulses[order],
        itd_shifts=shifts,
    )


def preprocess_pipeline(hrir_set: HrirSet, reference_set: HrirSet, cfg: PreprocessConfig) -> HrirSet:
    """
    完整预处理链

    Args:
        hrir_set: 待处理集合
        reference_set: 参考集合（提供方向、长度和正前方 RMS）
        cfg: 预处理参数

    Returns:
        加窗、归一化、去 ITD 后的集合，方向顺序与参考一致
    """
    if cfg.target_length is None:
        cfg = replace(cfg, target_length=reference_set.length)

    aligned = align_to_reference(hrir_set, reference_set, cfg)
    windowed = window_hrirs(aligned, cfg)
    normalised, _ = normalise_level(windowed, cfg, frontal_rms(reference_set, cfg))
    result = remove_itd(normalised, cfg)

    provenance = dict(result.provenance)
    provenance['pipeline'] = list(PIPELINE_ORDER)
    provenance['reference'] = f"{reference_set.subject_id}/{reference_set.label}"
    return result.replace(provenance=provenance)

