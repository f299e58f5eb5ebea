#!/usr/bin/env python3
"""
SOFA (AES69) SimpleFreeFieldHRIR 导入适配器（只读）
"""

import math
from pathlib import Path
from typing import Any, Union

import numpy as np

from core.errors import IoFailure, MissingInput, MissingVariable, UnsupportedConvention
from core.model import Direction, HrirSet, apply_azimuth_convention

SUPPORTED_CONVENTION = 'SimpleFreeFieldHRIR'


def _text(value: Any) -> str:
    if isinstance(value, bytes):
        return value.decode('utf-8', errors='replace')
    if isinstance(value, np.ndarray):
        return _text(value.tolist()[0] if value.size else '')
    return str(value)


def _variable(f, name: str) -> np.ndarray:
    if name not in f:
        raise MissingVariable(f"SOFA 文件缺少变量 {name}")
    return np.array(f[name])


def _directions(positions: np.ndarray, coord_type: str):
    if coord_type == 'cartesian':
        out = []
        for x, y, z in positions:
            r = math.sqrt(x * x + y * y + z * z)
            out.append(Direction(math.degrees(math.atan2(y, x)), math.degrees(math.atan2(z, math.hypot(x, y))), r))
        return tuple(out)
    return tuple(Direction(float(az), float(el), float(r)) for az, el, r in positions)


def import_sofa(path: Union[str, Path], convention_hint: str = 'counterclockwise') -> HrirSet:
    """
    读取 SimpleFreeFieldHRIR 格式的 SOFA 文件

    Args:
        path: .sofa 文件路径
        convention_hint: 文件方位角约定（'counterclockwise' 或 'clockwise'）

    Returns:
        HrirSet（方位角已换算为逆时针约定）

    Raises:
        UnsupportedConvention: 约定不是 SimpleFreeFieldHRIR，或接收点不是 2 个
        MissingVariable: 缺少 Data.IR / Data.SamplingRate / SourcePosition
    """
    import h5py

    path = Path(path)
    if not path.exists():
        raise MissingInput(path)

    try:
        f = h5py.File(path, 'r')
    except OSError as e:
        raise IoFailure(f"无法打开 SOFA 文件 {path}: {e}")

    with f:
        convention = _text(f.attrs.get('SOFAConventions', b''))
        if convention != SUPPORTED_CONVENTION:
            raise UnsupportedConvention(f"{path}: 不支持的 SOFA 约定 {convention!r}（只支持 {SUPPORTED_CONVENTION}）")

        ir = _variable(f, 'Data.IR').astype(np.float64)
        if ir.ndim != 3 or ir.shape[1] != 2:
            raise UnsupportedConvention(f"{path}: 需要 2 个接收点，Data.IR 形状为 {ir.shape}")

        rate = _variable(f, 'Data.SamplingRate').ravel()
        if rate.size == 0:
            raise MissingVariable(f"{path}: Data.SamplingRate 为空")
        units = _text(f['Data.SamplingRate'].attrs.get('Units', b'hertz')).lower()
        fs = float(rate[0]) * (1000.0 if units.startswith('kilo') else 1.0)

        positions = _variable(f, 'SourcePosition').astype(np.float64)
        if positions.ndim == 1:
            positions = np.tile(positions, (ir.shape[0], 1))
        coord_type = _text(f['SourcePosition'].attrs.get('Type', b'spherical')).lower()
        subject = _text(f.attrs.get('ListenerShortName', b''))
        title = _text(f.attrs.get('Title', b''))

    hrir_set = HrirSet(
        sample_rate_hz=int(round(fs)),
        directions=_directions(positions, coord_type),
        impulses=ir,
        subject_id=subject,
        label=title,
        provenance={'source': str(path), 'convention': SUPPORTED_CONVENTION, 'azimuth_convention': convention_hint},
    )
    return apply_azimuth_convention(hrir_set, convention_hint)
