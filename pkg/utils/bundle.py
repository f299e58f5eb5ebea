#!/usr/bin/env python3
"""
HRIR bundle 文件读写

文件结构：
    HRIRB1\\n                魔数行
    YAML 头                  以空行结束
    payload                  float32 小端，按 方向 → (左, 右) → 样本 排列

头字段：
    format_version, sample_rate_hz, subject_id, label, n_directions, impulse_length,
    byte_order (little), sample_encoding (float32),
    directions ([[azimuth_deg, elevation_deg, distance_m], ...]),
    itd_shifts ([[左, 右], ...] 或 null), provenance (映射)
"""

from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import yaml

from core.errors import InputError, IoFailure, MalformedHeader, PayloadSizeMismatch, UnsupportedVersion
from core.model import Direction, HrirSet

MAGIC = b'HRIRB1\n'
FORMAT_VERSION = 1
_TERMINATOR = b'\n\n'
_REQUIRED = (
    'format_version', 'sample_rate_hz', 'subject_id', 'label', 'n_directions',
    'impulse_length', 'byte_order', 'sample_encoding', 'directions',
)


def _plain(value: Any) -> Any:
    """把 numpy 标量/数组、元组转换成 YAML 能安全输出的基本类型"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _header(hrir_set: HrirSet) -> Dict[str, Any]:
    return {
        'format_version': FORMAT_VERSION,
        'sample_rate_hz': hrir_set.sample_rate_hz,
        'subject_id': hrir_set.subject_id,
        'label': hrir_set.label,
        'n_directions': hrir_set.n_directions,
        'impulse_length': hrir_set.length,
        'byte_order': 'little',
        'sample_encoding': 'float32',
        'directions': [[d.azimuth_deg, d.elevation_deg, d.distance_m] for d in hrir_set.directions],
        'itd_shifts': hrir_set.itd_shifts.tolist() if hrir_set.itd_shifts is not None else None,
        'provenance': _plain(hrir_set.provenance),
    }


def encode_bundle(hrir_set: HrirSet) -> bytes:
    """编码为 bundle 字节串（相同输入 → 相同字节）"""
    text = yaml.safe_dump(_header(hrir_set), sort_keys=False, allow_unicode=True, width=1 << 20)
    if '\n\n' in text:
        raise IoFailure(f"头信息含有空行（subject_id/label/provenance 中不能有换行）: {hrir_set.subject_id}/{hrir_set.label}")
    payload = np.ascontiguousarray(hrir_set.impulses, dtype='<f4').tobytes()
    return MAGIC + text.encode('utf-8') + b'\n' + payload


def write_bundle(hrir_set: HrirSet, path: Union[str, Path]) -> Path:
    """
    写出 bundle 文件

    Returns:
        写出的文件路径

    Raises:
        IoFailure: 无法写入
    """
    path = Path(path)
    data = encode_bundle(hrir_set)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise IoFailure(f"无法写入 {path}: {e}")
    return path


def _field(header: Dict[str, Any], name: str, kind):
    try:
        return kind(header[name])
    except (TypeError, ValueError) as e:
        raise MalformedHeader(f"头字段 {name} 非法: {header[name]!r} ({e})")


def decode_bundle(data: bytes, source: str = '<bytes>') -> HrirSet:
    """从字节串解码 bundle"""
    if not data.startswith(MAGIC):
        raise MalformedHeader(f"{source}: 偏移 0 处缺少魔数 {MAGIC!r}")

    end = data.find(_TERMINATOR, len(MAGIC) - 1)
    if end < 0:
        raise MalformedHeader(f"{source}: 找不到头结束的空行")
    header_bytes = data[len(MAGIC):end + 1]
    payload_offset = end + len(_TERMINATOR)

    try:
        header = yaml.safe_load(header_bytes.decode('utf-8'))
    except UnicodeDecodeError as e:
        raise MalformedHeader(f"{source}: 偏移 {len(MAGIC) + e.start} 处头信息不是 UTF-8")
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        offset = len(MAGIC) + (mark.index if mark is not None else 0)
        raise MalformedHeader(f"{source}: 偏移 {offset} 附近头信息无法解析: {e}")

    if not isinstance(header, dict):
        raise MalformedHeader(f"{source}: 头信息必须是映射")
    missing = [k for k in _REQUIRED if k not in header]
    if missing:
        raise MalformedHeader(f"{source}: 缺少头字段 {', '.join(missing)}")

    version = header['format_version']
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"{source}: 不支持的 format_version {version!r}（支持 {FORMAT_VERSION}）")
    if header['byte_order'] != 'little':
        raise MalformedHeader(f"{source}: 头字段 byte_order 必须为 little，实际 {header['byte_order']!r}")
    if header['sample_encoding'] != 'float32':
        raise MalformedHeader(f"{source}: 头字段 sample_encoding 必须为 float32，实际 {header['sample_encoding']!r}")

    n_dirs = _field(header, 'n_directions', int)
    length = _field(header, 'impulse_length', int)
    if n_dirs < 1 or length < 1:
        raise MalformedHeader(f"{source}: n_directions={n_dirs}、impulse_length={length} 必须为正")

    table = header['directions']
    if not isinstance(table, list) or len(table) != n_dirs:
        raise MalformedHeader(
            f"{source}: 头字段 directions 应有 {n_dirs} 行，实际 {len(table) if isinstance(table, list) else type(table).__name__}"
        )
    try:
        directions = tuple(Direction(*[float(v) for v in row]) for row in table)
    except (TypeError, ValueError, InputError) as e:
        raise MalformedHeader(f"{source}: 头字段 directions 非法: {e}")

    expected = n_dirs * 2 * length * 4
    actual = len(data) - payload_offset
    if actual != expected:
        raise PayloadSizeMismatch(
            f"{source}: payload 从偏移 {payload_offset} 起应为 {expected} 字节（{n_dirs}×2×{length}×4），实际 {actual}"
        )
    impulses = np.frombuffer(data, dtype='<f4', offset=payload_offset).reshape(n_dirs, 2, length)

    shifts = header.get('itd_shifts')
    provenance = header.get('provenance') or {}
    if not isinstance(provenance, dict):
        raise MalformedHeader(f"{source}: 头字段 provenance 必须是映射")

    try:
        return HrirSet(
            sample_rate_hz=_field(header, 'sample_rate_hz', int),
            directions=directions,
            impulses=impulses.astype(np.float64),
            itd_shifts=np.array(shifts, dtype=np.int64) if shifts is not None else None,
            label=str(header['label'] if header['label'] is not None else ''),
            subject_id=str(header['subject_id'] if header['subject_id'] is not None else ''),
            provenance=provenance,
        )
    except (TypeError, ValueError) as e:
        raise MalformedHeader(f"{source}: 头字段 itd_shifts 非法: {e}")


def read_bundle(path: Union[str, Path]) -> HrirSet:
    """
    读取 bundle 文件

    Raises:
        MalformedHeader / PayloadSizeMismatch / UnsupportedVersion: 文件内容非法（信息中给出偏移或字段）
        IoFailure: 无法读取
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"无法读取 {path}: {e}")
    return decode_bundle(data, source=str(path))
