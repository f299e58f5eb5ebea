#!/usr/bin/env python3
"""
响应日志读写

格式：UTF-8 逗号分隔文本，固定表头
    participant,condition,trial,target_az,target_el,resp_az,resp_el
角度为十进制度数，小数点为 "."。
"""

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import pandas as pd

from core.errors import DuplicateTrial, InvalidDirection, IoFailure, MissingInput, ParseError
from core.model import Direction

LOG_COLUMNS = ['participant', 'condition', 'trial', 'target_az', 'target_el', 'resp_az', 'resp_el']


@dataclass(frozen=True)
class Trial:
    """一次定位试次"""

    participant: str
    condition: str
    trial: int
    target: Direction
    response: Direction

    @property
    def key(self) -> Tuple[str, str, int]:
        return (self.participant, self.condition, self.trial)


@dataclass(frozen=True)
class ResponseLog:
    """一份行为实验响应日志"""

    trials: Tuple[Trial, ...]
    source: str = ''

    def __post_init__(self):
        seen = set()
        for t in self.trials:
            if t.key in seen:
                raise DuplicateTrial(f"重复试次: participant={t.participant}, condition={t.condition}, trial={t.trial}")
            seen.add(t.key)
        object.__setattr__(self, 'trials', tuple(self.trials))

    def __len__(self) -> int:
        return len(self.trials)

    def participants(self) -> List[str]:
        """按首次出现顺序"""
        return list(dict.fromkeys(t.participant for t in self.trials))

    def conditions(self) -> List[str]:
        """按首次出现顺序"""
        return list(dict.fromkeys(t.condition for t in self.trials))

    def select(self, participant: str, condition: str) -> List[Trial]:
        return [t for t in self.trials if t.participant == participant and t.condition == condition]


def _parse_number(text: str, line: int, column: str, kind=float):
    try:
        return kind(text)
    except (TypeError, ValueError):
        raise ParseError(line, f"{column} 不是合法的数值: {text!r}")


def _line_of(exc: Exception) -> int:
    match = re.search(r'line (\d+)', str(exc))
    return int(match.group(1)) if match else 0


def _is_blank(row: Tuple) -> bool:
    return all(pd.isna(v) or not str(v).strip() for v in row)


def read_response_log(path: Union[str, Path]) -> ResponseLog:
    """
    读取响应日志

    Args:
        path: 日志文件路径

    Returns:
        校验过的 ResponseLog

    Raises:
        ParseError: 表头、数值或方向非法（带行号，表头为第 1 行）
        DuplicateTrial: (participant, condition, trial) 重复
    """
    path = Path(path)
    if not path.exists():
        raise MissingInput(path)

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8', skipinitialspace=True,
                            skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        raise ParseError(1, "文件为空，缺少表头")
    except pd.errors.ParserError as e:
        raise ParseError(_line_of(e), f"列数不正确: {e}")
    except UnicodeDecodeError as e:
        raise ParseError(0, f"不是 UTF-8 编码: {e}")
    except OSError as e:
        raise IoFailure(f"无法读取 {path}: {e}")

    header = [c.strip() for c in frame.columns]
    if header != LOG_COLUMNS:
        raise ParseError(1, f"表头应为 {','.join(LOG_COLUMNS)}，实际为 {','.join(header)}")

    trials = []
    seen: Dict[Tuple[str, str, int], int] = {}
    for offset, row in enumerate(frame.itertuples(index=False, name=None)):
        # 空行留在 frame 中，行号与文件一致
        if _is_blank(row):
            continue
        line = offset + 2
        participant, condition, trial_text = (str(v).strip() for v in row[:3])
        if not participant or not condition:
            raise ParseError(line, "participant 和 condition 不能为空")
        trial = _parse_number(trial_text, line, 'trial', int)
        values = [_parse_number(str(v).strip(), line, col) for v, col in zip(row[3:], LOG_COLUMNS[3:])]
        try:
            target = Direction(values[0], values[1])
            response = Direction(values[2], values[3])
        except InvalidDirection as e:
            raise ParseError(line, str(e))

        key = (participant, condition, trial)
        if key in seen:
            raise DuplicateTrial(
                f"第 {line} 行与第 {seen[key]} 行重复: participant={participant}, condition={condition}, trial={trial}"
            )
        seen[key] = line
        trials.append(Trial(participant, condition, trial, target, response))

    return ResponseLog(tuple(trials), source=str(path))


def write_response_log(log: ResponseLog, path: Union[str, Path]) -> Path:
    """
    写出响应日志（read_response_log 的逆操作）

    Returns:
        写出的文件路径
    """
    path = Path(path)
    frame = pd.DataFrame(
        [
            (t.participant, t.condition, t.trial,
             t.target.azimuth_deg, t.target.elevation_deg,
             t.response.azimuth_deg, t.response.elevation_deg)
            for t in log.trials
        ],
        columns=LOG_COLUMNS,
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, encoding='utf-8', lineterminator='\n')
    except OSError as e:
        raise IoFailure(f"无法写入 {path}: {e}")
    return path


LSD_TABLE_COLUMNS = ['participant', 'condition', 'lsd_db']


def read_lsd_table(path: Union[str, Path]) -> Dict[str, Dict[str, float]]:
    """
    读取每个受试者的 LSD 表（compare 输出的 lsd_table.csv）

    Returns:
        条件 → {受试者: LSD}
    """
    path = Path(path)
    if not path.exists():
        raise MissingInput(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ParseError(_line_of(e) or 1, f"LSD 表无法解析: {e}")

    missing = [c for c in LSD_TABLE_COLUMNS if c not in frame.columns]
    if missing:
        raise ParseError(1, f"LSD 表缺少列 {', '.join(missing)}")

    table: Dict[str, Dict[str, float]] = {}
    for offset, (participant, condition, value) in enumerate(frame[LSD_TABLE_COLUMNS].itertuples(index=False, name=None)):
        table.setdefault(condition.strip(), {})[participant.strip()] = _parse_number(value.strip(), offset + 2, 'lsd_db')
    return table
