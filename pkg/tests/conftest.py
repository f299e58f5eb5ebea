"""共用测试夹具：球头模型合成集合"""

from dataclasses import replace

import numpy as np
import pytest

from core.model import Direction, HrirSet, MetricConfig
from core.preprocess import PreprocessConfig
from models.sphere import SphereModelConfig, generate_sphere_set


@pytest.fixture
def sphere_cfg() -> SphereModelConfig:
    """45° 步长的小网格（25 个方向）"""
    return SphereModelConfig(azimuth_step_deg=45.0, elevation_step_deg=45.0, elevation_min_deg=-45.0)


@pytest.fixture
def sphere_set(sphere_cfg) -> HrirSet:
    return generate_sphere_set(sphere_cfg)


@pytest.fixture
def shadow_set(sphere_cfg) -> HrirSet:
    return generate_sphere_set(replace(sphere_cfg, gain_law='cosine_shadow'))


@pytest.fixture
def integer_metric() -> MetricConfig:
    """整数样本起始点（不上采样）"""
    return MetricConfig(upsample_factor=1)


@pytest.fixture
def integer_preprocess(integer_metric) -> PreprocessConfig:
    return PreprocessConfig(metric=integer_metric)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def pulse_set(onsets, directions=None, length=256, fs=48000, amplitude=1.0, label='', subject_id='') -> HrirSet:
    """每个方向、每只耳朵在给定位置放一个脉冲；onsets 形状 (D, 2)"""
    onsets = np.asarray(onsets, dtype=int)
    if directions is None:
        directions = [Direction(45.0 * i, 0.0) for i in range(onsets.shape[0])]
    impulses = np.zeros((len(directions), 2, length))
    for d in range(len(directions)):
        for ear in range(2):
            impulses[d, ear, onsets[d, ear]] = amplitude
    return HrirSet(fs, tuple(directions), impulses, label=label, subject_id=subject_id)
