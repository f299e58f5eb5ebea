"""核心业务逻辑模块"""

from .errors import HrtfEvalError, InputError, InvariantViolation, StatisticsError
from .model import Direction, HrirSet, LateralPolar, MetricConfig

__all__ = [
    'Direction',
    'HrirSet',
    'LateralPolar',
    'MetricConfig',
    'HrtfEvalError',
    'InputError',
    'StatisticsError',
    'InvariantViolation',
]
