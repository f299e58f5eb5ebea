#!/usr/bin/env python3
"""
球头模型 - 线索已知的合成 HRIR 集合、可记账的扰动，以及模拟的定位响应
"""

import math
from dataclasses import dataclass
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigError, DelayExceedsLength, SpecOutOfRange
from core.model import DEFAULT_MATCH_TOLERANCE_DEG, Direction, HrirSet, LateralPolar, from_lateral_polar, to_lateral_polar
from utils.logs import ResponseLog, Trial

GAIN_LAWS = ('unity', 'cosine_shadow')
EAR_SELECTORS = ('both', 'left', 'right')
MAX_GAIN_DB = 40.0


@dataclass(frozen=True)
class SphereModelConfig:
    """球头模型参数"""

    head_radius_m: float = 0.0875
    speed_of_sound_m_s: float = 343.0
    sample_rate_hz: int = 48000
    impulse_length: int = 256
    base_delay_samples: int = 48
    azimuth_step_deg: float = 15.0
    elevation_step_deg: float = 15.0
    elevation_min_deg: float = -45.0
    elevation_max_deg: float = 90.0
    gain_law: str = 'unity'
    shadow_db: float = 10.0
    noise_level: float = 0.0
    noise_seed: Optional[int] = None
    subject_id: str = 'S01'
    label: str = 'measured'

    def __post_init__(self):
        if self.head_radius_m <= 0 or self.speed_of_sound_m_s <= 0:
            raise ConfigError("头半径和声速必须为正")
        if self.sample_rate_hz <= 0 or self.impulse_length <= 144:
            raise ConfigError(f"采样率必须为正且脉冲长度必须大于 144: {self.sample_rate_hz}, {self.impulse_length}")
        if self.gain_law not in GAIN_LAWS:
            raise ConfigError(f"未知的增益律: {self.gain_law}（可选 {', '.join(GAIN_LAWS)}）")
        if not 0 < self.azimuth_step_deg <= 360 or not 0 < self.elevation_step_deg <= 180:
            raise ConfigError("网格步长必须为正")
        if not -90 <= self.elevation_min_deg <= self.elevation_max_deg <= 90:
            raise ConfigError(f"仰角范围非法: [{self.elevation_min_deg}, {self.elevation_max_deg}]")
        if self.noise_level < 0:
            raise ConfigError(f"noise_level 不能为负: {self.noise_level}")

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> 'SphereModelConfig':
        data = dict(data or {})
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def grid(self) -> Tuple[Direction, ...]:
        """方向网格；两极只取一个点"""
        directions = []
        n_el = int(math.floor((self.elevation_max_deg - self.elevation_min_deg) / self.elevation_step_deg + 1e-9)) + 1
        n_az = int(round(360.0 / self.azimuth_step_deg))
        for i in range(n_el):
            el = self.elevation_min_deg + i * self.elevation_step_deg
            if abs(el) == 90.0:
                directions.append(Direction(0.0, el))
                continue
            for j in range(n_az):
                directions.append(Direction(j * self.azimuth_step_deg, el))
        if not directions:
            raise ConfigError("方向网格为空")
        return tuple(directions)


def woodworth_itd_us(cfg: SphereModelConfig, d: Direction) -> float:
    """
    Woodworth 球头 ITD：(a/c)(sin θ + θ)，θ 为侧向角绝对值

    Returns:
        ITD（微秒，声源偏左为正）
    """
    lateral = math.radians(to_lateral_polar(d).lateral_deg)
    theta = abs(lateral)
    itd = cfg.head_radius_m / cfg.speed_of_sound_m_s * (math.sin(theta) + theta) * 1e6
    return math.copysign(itd, lateral) if theta > 0 else 0.0


def _ear_delays(cfg: SphereModelConfig, d: Direction) -> Tuple[int, int]:
    k = int(round(woodworth_itd_us(cfg, d) * cfg.sample_rate_hz / 1e6))
    left = cfg.base_delay_samples - k // 2
    return left, left + k


def _ear_gains(cfg: SphereModelConfig, d: Direction) -> Tuple[float, float]:
    if cfg.gain_law == 'unity':
        return 1.0, 1.0
    # 声源方向与耳轴夹角的余弦等于 sin(lateral)
    s = math.sin(math.radians(to_lateral_polar(d).lateral_deg))
    left_db = -cfg.shadow_db * (1.0 - s) / 2.0
    right_db = -cfg.shadow_db * (1.0 + s) / 2.0
    return 10 ** (left_db / 20.0), 10 ** (right_db / 20.0)


def generate_sphere_set(cfg: SphereModelConfig) -> HrirSet:
    """
    生成球头 HRIR 集合

    每个方向、每只耳朵是一个单位脉冲：固定基础延迟加上对半拆分的 Woodworth ITD
    （整数样本），再乘以增益律给出的系数。noise_level > 0 时叠加种子固定的高斯噪声。

    Raises:
        DelayExceedsLength: 某个延迟落在脉冲长度之外
    """
    directions = cfg.grid()
    impulses = np.zeros((len(directions), 2, cfg.impulse_length))
    for i, d in enumerate(directions):
        delays = _ear_delays(cfg, d)
        gains = _ear_gains(cfg, d)
        for ear in range(2):
            if not 0 <= delays[ear] < cfg.impulse_length:
                raise DelayExceedsLength(
                    f"方向 {d} {'左' if ear == 0 else '右'}耳延迟 {delays[ear]} 超出脉冲长度 {cfg.impulse_length}"
                )
            impulses[i, ear, delays[ear]] = gains[ear]

    if cfg.noise_level > 0:
        rng = np.random.default_rng(cfg.noise_seed if cfg.noise_seed is not None else 0)
        impulses = impulses + cfg.noise_level * rng.standard_normal(impulses.shape)

    return HrirSet(
        sample_rate_hz=cfg.sample_rate_hz,
        directions=directions,
        impulses=impulses,
        label=cfg.label,
        subject_id=cfg.subject_id,
        provenance={
            'generator': 'sphere',
            'head_radius_m': cfg.head_radius_m,
            'speed_of_sound_m_s': cfg.speed_of_sound_m_s,
            'base_delay_samples': cfg.base_delay_samples,
            'gain_law': cfg.gain_law,
            'noise_level': cfg.noise_level,
            'noise_seed': cfg.noise_seed,
        },
    )


# ==================== 扰动 ====================

@dataclass(frozen=True)
class DirectionGain:
    azimuth_deg: float
    elevation_deg: float
    gain_db: float
    ear: str = 'both'


@dataclass(frozen=True)
class BandBoost:
    lo_hz: float
    hi_hz: float
    gain_db: float
    ear: str = 'both'


@dataclass(frozen=True)
class Perturbation:
    """
    扰动说明

    ear_gain_db: 左右耳整体增益
    direction_gains: 指定方向的附加增益
    band_boosts: 指定频带的附加增益（按 DFT 频点施加）
    delay_samples: 左右耳整数样本延迟（正值推后，移出的位置补零）
    gain_jitter_db: 每个方向、每只耳朵随机增益的标准差（由 seed 决定）
    """

    ear_gain_db: Tuple[float, float] = (0.0, 0.0)
    direction_gains: Tuple[DirectionGain, ...] = ()
    band_boosts: Tuple[BandBoost, ...] = ()
    delay_samples: Tuple[int, int] = (0, 0)
    gain_jitter_db: float = 0.0

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> 'Perturbation':
        data = dict(data or {})
        return cls(
            ear_gain_db=tuple(float(v) for v in data.get('ear_gain_db', (0.0, 0.0))),
            direction_gains=tuple(DirectionGain(**g) for g in data.get('direction_gains', ())),
            band_boosts=tuple(BandBoost(**b) for b in data.get('band_boosts', ())),
            delay_samples=tuple(int(v) for v in data.get('delay_samples', (0, 0))),
            gain_jitter_db=float(data.get('gain_jitter_db', 0.0)),
        )


@dataclass(frozen=True)
class PerturbationLedger:
    """扰动引起的线索变化（按方向，顺序与集合一致）"""

    itd_delta_us: np.ndarray          # (D,)，estimate_itd 的符号约定
    ild_delta_db: np.ndarray          # (D,)
    bin_gain_db: np.ndarray           # (D, 2, K)，每个频点施加的增益
    freq_bins_hz: np.ndarray
    delay_samples: Tuple[int, int] = (0, 0)

    def lsd_db(self, ear: int) -> np.ndarray:
        """每个方向的 LSD（脉冲幅度远大于 ε 时与 lsd_db 完全一致）"""
        return np.sqrt(np.mean(self.bin_gain_db[:, ear] ** 2, axis=-1))

    def frequency_lsd(self) -> np.ndarray:
        """逐频点 LSD：对方向和耳朵求均方根"""
        return np.sqrt(np.mean(self.bin_gain_db ** 2, axis=(0, 1)))


def _ears(selector: str) -> List[int]:
    if selector not in EAR_SELECTORS:
        raise SpecOutOfRange(f"未知的耳朵选择: {selector}（可选 {', '.join(EAR_SELECTORS)}）")
    return {'both': [0, 1], 'left': [0], 'right': [1]}[selector]


def _check_gain(value: float, what: str):
    if not math.isfinite(value) or abs(value) > MAX_GAIN_DB:
        raise SpecOutOfRange(f"{what} 增益 {value} dB 超出 ±{MAX_GAIN_DB:g} dB")


def _two_sided_energy(spectrum: np.ndarray, n: int) -> np.ndarray:
    """由单边谱按 Parseval 求时域平均能量"""
    weights = np.full(spectrum.shape[-1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return np.sum(weights * np.abs(spectrum) ** 2, axis=-1) / (n * n)


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(x)
    if k >= 0:
        out[k:] = x[:len(x) - k]
    else:
        out[:k] = x[-k:]
    return out


def perturb_set(hrir_set: HrirSet, spec: Perturbation, seed: int = 0) -> Tuple[HrirSet, PerturbationLedger]:
    """
    对集合施加扰动并记录引起的线索变化

    增益在频域按频点施加（整体增益对每个频点相同），延迟在时域按整数样本平移。

    Args:
        hrir_set: 输入集合
        spec: 扰动说明
        seed: gain_jitter_db 的随机种子

    Returns:
        (扰动后的集合, 账本)

    Raises:
        SpecOutOfRange: 增益过大、频带非法、方向不存在或延迟会截掉非零样本
    """
    n = hrir_set.length
    fs = hrir_set.sample_rate_hz
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    gains = np.zeros((hrir_set.n_directions, 2, freqs.size))

    for ear, g in enumerate(spec.ear_gain_db):
        _check_gain(g, '整体')
        gains[:, ear, :] += g

    for dg in spec.direction_gains:
        _check_gain(dg.gain_db, '方向')
        idx = hrir_set.find_direction(Direction(dg.azimuth_deg, dg.elevation_deg), DEFAULT_MATCH_TOLERANCE_DEG)
        if idx is None:
            raise SpecOutOfRange(f"集合中没有方向 (az {dg.azimuth_deg:g}°, el {dg.elevation_deg:g}°)")
        for ear in _ears(dg.ear):
            gains[idx, ear, :] += dg.gain_db

    for band in spec.band_boosts:
        _check_gain(band.gain_db, '频带')
        if not 0 <= band.lo_hz < band.hi_hz <= fs / 2.0:
            raise SpecOutOfRange(f"频带 {band.lo_hz:g}–{band.hi_hz:g} Hz 超出 [0, {fs / 2.0:g}]")
        mask = (freqs >= band.lo_hz) & (freqs <= band.hi_hz)
        for ear in _ears(band.ear):
            gains[:, ear, mask] += band.gain_db

    if spec.gain_jitter_db < 0 or spec.gain_jitter_db > MAX_GAIN_DB:
        raise SpecOutOfRange(f"gain_jitter_db 超出 [0, {MAX_GAIN_DB:g}]: {spec.gain_jitter_db}")
    if spec.gain_jitter_db > 0:
        rng = np.random.default_rng(seed)
        gains += spec.gain_jitter_db * rng.standard_normal((hrir_set.n_directions, 2))[:, :, None]

    delayed = np.array(hrir_set.impulses)
    for ear, k in enumerate(spec.delay_samples):
        if k == 0:
            continue
        if abs(k) >= n:
            raise SpecOutOfRange(f"延迟 {k} 样本超出脉冲长度 {n}")
        lost = delayed[:, ear, n - k:] if k > 0 else delayed[:, ear, :-k]
        if np.any(lost != 0):
            raise SpecOutOfRange(f"{'左' if ear == 0 else '右'}耳延迟 {k} 样本会截掉非零样本")
        for d in range(hrir_set.n_directions):
            delayed[d, ear] = _shift(delayed[d, ear], k)

    spectra = np.fft.rfft(delayed, axis=-1)
    scaled = spectra * 10 ** (gains / 20.0)
    if spec.band_boosts:
        out = np.fft.irfft(scaled, n=n, axis=-1)
    else:
        # 宽带增益直接在时域相乘，未扰动的样本保持逐位不变
        out = delayed * 10 ** (gains[:, :, :1] / 20.0)

    with np.errstate(divide='ignore', invalid='ignore'):
        before = _two_sided_energy(spectra, n)
        after = _two_sided_energy(scaled, n)
        ild_delta = 10 * np.log10(after[:, 1] / after[:, 0]) - 10 * np.log10(before[:, 1] / before[:, 0])

    delay_l, delay_r = spec.delay_samples
    ledger = PerturbationLedger(
        itd_delta_us=np.full(hrir_set.n_directions, (delay_r - delay_l) / fs * 1e6),
        ild_delta_db=ild_delta,
        bin_gain_db=gains,
        freq_bins_hz=freqs,
        delay_samples=(int(delay_l), int(delay_r)),
    )

    provenance = dict(hrir_set.provenance)
    provenance['perturbation'] = {'seed': seed, 'delay_samples': list(spec.delay_samples),
                                  'ear_gain_db': list(spec.ear_gain_db)}
    return hrir_set.replace(impulses=out, provenance=provenance), ledger


# ==================== 行为实验模拟 ====================

def localisation_grid() -> Tuple[Direction, ...]:
    """
    行为实验的 33 个声源位置

    16 个方位角覆盖整圈：
        正方向（0/90/180/270）：仰角 −30、0、30、60，外加头顶一个点
        对角方向（45/135/225/315）：仰角 ±30
        其余方位角（30、60、…）：只在水平面
    """
    positions = [Direction(0.0, 90.0)]
    for az in range(0, 360, 15):
        if az % 90 == 0:
            positions += [Direction(az, el) for el in (-30.0, 0.0, 30.0, 60.0)]
        elif az % 45 == 0:
            positions += [Direction(az, el) for el in (-30.0, 30.0)]
        elif az % 30 == 0:
            positions.append(Direction(az, 0.0))
    return tuple(sorted(positions, key=lambda d: (d.azimuth_deg, d.elevation_deg)))


@dataclass(frozen=True)
class ResponseModel:
    """模拟受试者在一个条件下的响应误差"""

    noise_deg: float = 10.0
    front_back_rate: float = 0.05
    lateral_bias_deg: float = 0.0
    polar_bias_deg: float = 0.0

    def __post_init__(self):
        if self.noise_deg < 0:
            raise ConfigError(f"noise_deg 不能为负: {self.noise_deg}")
        if not 0 <= self.front_back_rate <= 1:
            raise ConfigError(f"front_back_rate 必须在 [0, 1] 内: {self.front_back_rate}")

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> 'ResponseModel':
        data = dict(data or {})
        known = {k: float(v) for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _simulate_response(target: Direction, model: ResponseModel, rng: np.random.Generator) -> Direction:
    lp = to_lateral_polar(target)
    polar = lp.polar_deg
    if rng.random() < model.front_back_rate:
        polar = 180.0 - polar
    lateral = lp.lateral_deg + model.lateral_bias_deg + model.noise_deg * rng.standard_normal()
    polar = polar + model.polar_bias_deg + model.noise_deg * rng.standard_normal()
    lateral = float(np.clip(lateral, -89.9, 89.9))
    return from_lateral_polar(LateralPolar(lateral, polar))


def simulate_responses(
    targets: Sequence[Direction],
    participants: Sequence[str],
    conditions: Mapping[str, ResponseModel],
    repetitions: int = 3,
    seed: int = 0
) -> ResponseLog:
    """
    模拟定位实验日志

    每个 (受试者, 条件) 的随机流只由 (seed, 受试者序号, 条件序号) 决定；
    每次重复内目标顺序随机打乱，试次编号从 1 开始连续。

    Args:
        targets: 声源位置
        participants: 受试者编号
        conditions: 条件名 → 响应模型
        repetitions: 每个位置的重复次数
        seed: 随机种子

    Returns:
        ResponseLog
    """
    if repetitions < 1:
        raise ConfigError(f"repetitions 必须 ≥ 1: {repetitions}")
    trials = []
    for p_idx, participant in enumerate(participants):
        for c_idx, (condition, model) in enumerate(conditions.items()):
            rng = np.random.default_rng([seed, p_idx, c_idx])
            number = 1
            for _ in range(repetitions):
                for t_idx in rng.permutation(len(targets)):
                    target = targets[int(t_idx)]
                    trials.append(Trial(participant, condition, number, target,
                                        _simulate_response(target, model, rng)))
                    number += 1
    return ResponseLog(tuple(trials))
