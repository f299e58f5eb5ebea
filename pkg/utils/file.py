#!/usr/bin/env python3
"""
文件操作工具 - 配置、批处理清单、表格/JSON 输出、摘要和运行记录
"""

import copy
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml

from core.errors import ConfigError, IoFailure, MissingInput
from core.model import AZIMUTH_CONVENTIONS

OUTPUT_DIR_ENV = 'HRTF_EVAL_OUTPUT_DIR'
TOOL_VERSION = '1.0.0'


def load_config(config_path: Optional[Union[str, Path]] = None) -> Dict[str, Any]:
    """
    加载配置文件

    Args:
        config_path: 配置文件路径，默认为 ../config/config.yaml（相对于本模块目录）
    """
    if config_path is None:
        config_path = Path(__file__).parent.parent / "config" / "config.yaml"
    config_path = Path(config_path)
    if not config_path.exists():
        raise MissingInput(config_path)

    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"配置文件 {config_path} 解析失败: {e}")
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件 {config_path} 顶层必须是映射")
    return data


def merge_config(base: Mapping[str, Any], override: Optional[Mapping[str, Any]]) -> Dict[str, Any]:
    """递归合并：override 中的键覆盖 base，嵌套映射逐层合并"""
    merged = copy.deepcopy(dict(base))
    for key, value in (override or {}).items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = merge_config(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def resolve_config(
    config: Mapping[str, Any],
    manifest_analysis: Optional[Mapping[str, Any]] = None,
    cli_overrides: Optional[Mapping[str, Any]] = None
) -> Dict[str, Any]:
    """
    按优先级合成最终配置

    config.yaml < 清单 analysis 块 < 命令行参数 < 环境变量（只影响输出目录）
    """
    resolved = merge_config(config, manifest_analysis)
    resolved = merge_config(resolved, cli_overrides)
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        resolved.setdefault('output', {})['output_dir'] = env_out
    return resolved


# ==================== 批处理清单 ====================

@dataclass(frozen=True)
class ConditionEntry:
    name: str
    path: Path


@dataclass(frozen=True)
class SubjectEntry:
    subject_id: str
    reference: Path
    conditions: tuple


@dataclass(frozen=True)
class Manifest:
    """批处理清单（路径已解析为绝对路径）"""

    path: Path
    reference_label: str
    subjects: tuple
    analysis: Dict[str, Any] = field(default_factory=dict)
    responses: Optional[Path] = None
    azimuth_convention: str = 'counterclockwise'

    def condition_names(self) -> List[str]:
        """按首次出现顺序"""
        names: Dict[str, None] = {}
        for s in self.subjects:
            for c in s.conditions:
                names.setdefault(c.name, None)
        return list(names)

    def all_inputs(self) -> List[Path]:
        paths = []
        for s in self.subjects:
            paths.append(s.reference)
            paths.extend(c.path for c in s.conditions)
        return paths


def _resolve(base: Path, value: Any, what: str) -> Path:
    if not value:
        raise ConfigError(f"清单缺少 {what}")
    p = Path(str(value))
    return p if p.is_absolute() else (base / p).resolve()


def load_manifest(path: Union[str, Path], check_paths: bool = True) -> Manifest:
    """
    读取批处理清单

    Args:
        path: 清单 YAML 文件
        check_paths: 是否检查引用的文件都存在

    Returns:
        Manifest

    Raises:
        MissingInput: 清单本身或引用的文件不存在
        ConfigError: 结构非法或条件名重复
    """
    path = Path(path).resolve()
    data = load_config(path)
    base = path.parent

    reference_label = str(data.get('reference_label', 'measured'))
    convention = str(data.get('azimuth_convention', 'counterclockwise'))
    if convention not in AZIMUTH_CONVENTIONS:
        raise ConfigError(f"未知的方位角约定: {convention}")

    raw_subjects = data.get('subjects')
    if not isinstance(raw_subjects, list) or not raw_subjects:
        raise ConfigError(f"清单 {path} 需要非空的 subjects 列表")

    subjects = []
    seen_ids = set()
    for i, raw in enumerate(raw_subjects):
        if not isinstance(raw, dict):
            raise ConfigError(f"subjects[{i}] 必须是映射")
        sid = str(raw.get('id', '')).strip()
        if not sid:
            raise ConfigError(f"subjects[{i}] 缺少 id")
        if sid in seen_ids:
            raise ConfigError(f"受试者 id 重复: {sid}")
        seen_ids.add(sid)

        conditions = []
        names = set()
        for j, cond in enumerate(raw.get('conditions') or []):
            name = str((cond or {}).get('name', '')).strip()
            if not name:
                raise ConfigError(f"subjects[{i}].conditions[{j}] 缺少 name")
            if name in names or name == reference_label:
                raise ConfigError(f"受试者 {sid} 的条件名重复: {name}")
            names.add(name)
            conditions.append(ConditionEntry(name, _resolve(base, cond.get('path'), f"{sid}/{name} 的 path")))
        subjects.append(SubjectEntry(sid, _resolve(base, raw.get('reference'), f"{sid} 的 reference"), tuple(conditions)))

    responses = data.get('responses')
    manifest = Manifest(
        path=path,
        reference_label=reference_label,
        subjects=tuple(subjects),
        analysis=dict(data.get('analysis') or {}),
        responses=_resolve(base, responses, 'responses') if responses else None,
        azimuth_convention=convention,
    )

    if check_paths:
        for p in manifest.all_inputs():
            if not p.exists():
                raise MissingInput(p)
    return manifest


def write_manifest(data: Mapping[str, Any], path: Union[str, Path]) -> Path:
    """写出清单 YAML（键顺序保持不变）"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(_plain(data), f, sort_keys=False, allow_unicode=True)
    except OSError as e:
        raise IoFailure(f"无法写入 {path}: {e}")
    return path


# ==================== 输出 ====================

def _plain(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ('inf' if value > 0 else '-inf')
    return value


def save_table(rows: Sequence[Mapping[str, Any]], path: Union[str, Path], columns: Optional[Sequence[str]] = None) -> Path:
    """
    写 CSV 表（浮点数用最短往返十进制表示）

    Args:
        rows: 每行一个映射
        path: 输出路径
        columns: 列顺序（默认取第一行的键）
    """
    path = Path(path)
    frame = pd.DataFrame(list(rows), columns=list(columns) if columns else None)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\n', na_rep='nan')
    except OSError as e:
        raise IoFailure(f"无法写入 {path}: {e}")
    return path


def save_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(_plain(data), f, ensure_ascii=False, indent=2, sort_keys=False)
            f.write('\n')
    except OSError as e:
        raise IoFailure(f"无法写入 {path}: {e}")
    return path


def file_digest(path: Union[str, Path]) -> str:
    """文件内容的 SHA-256"""
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunRecord:
    """一次命令运行的记录"""

    command: str
    manifest: Optional[str]
    config: Dict[str, Any]
    seed: int
    tool_version: str = TOOL_VERSION
    started_at: str = field(default_factory=lambda: datetime.now().isoformat(timespec='seconds'))
    timings_s: Dict[str, float] = field(default_factory=dict)
    outputs: List[Dict[str, str]] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    def add_output(self, path: Union[str, Path], root: Optional[Path] = None):
        path = Path(path)
        shown = path.relative_to(root) if root is not None and path.is_relative_to(root) else path
        self.outputs.append({'path': str(shown), 'sha256': file_digest(path)})

    def add_outputs(self, paths: Iterable[Union[str, Path]], root: Optional[Path] = None):
        for p in paths:
            self.add_output(p, root)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        record = asdict(self)
        record['outputs'] = sorted(record['outputs'], key=lambda o: o['path'])
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as f:
                yaml.safe_dump(_plain(record), f, sort_keys=False, allow_unicode=True)
        except OSError as e:
            raise IoFailure(f"无法写入 {path}: {e}")
        return path
