#!/usr/bin/env python3
"""
错误类型 - 所有模块共用的异常层次

InputError        → 输入数据/配置问题（命令行退出码 2）
StatisticsError   → 统计前提条件不满足
InvariantViolation → 内部一致性错误（退出码 3）
"""


class HrtfEvalError(Exception):
    """工具包所有异常的基类"""

    exit_code = 3


# ==================== 输入错误 ====================

class InputError(HrtfEvalError):
    """输入数据或配置错误"""

    exit_code = 2


class InvalidDirection(InputError):
    pass


class InvalidHrirSet(InputError):
    pass


class UnmatchedDirection(InputError):
    """参考方向在容差内找不到候选方向"""

    def __init__(self, direction, tol_deg: float):
        self.direction = direction
        self.tol_deg = tol_deg
        super().__init__(f"参考方向 {direction} 在 {tol_deg}° 内没有匹配的候选方向")


class ConfigError(InputError):
    pass


class MissingInput(InputError):
    """清单中引用的文件不存在"""

    def __init__(self, path):
        self.path = path
        super().__init__(f"输入文件不存在: {path}")


class IoFailure(InputError):
    pass


class MalformedHeader(InputError):
    pass


class PayloadSizeMismatch(InputError):
    pass


class UnsupportedVersion(InputError):
    pass


class UnsupportedConvention(InputError):
    pass


class MissingVariable(InputError):
    pass


class ParseError(InputError):
    """响应日志解析错误（带行号）"""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"第 {line} 行: {message}")


class DuplicateTrial(InputError):
    pass


class LengthTooShort(InputError):
    pass


class FrontalDirectionMissing(InputError):
    pass


class ZeroFrontalEnergy(InputError):
    pass


class SilentImpulse(InputError):
    pass


class LengthMismatch(InputError):
    pass


class SampleRateMismatch(InputError):
    pass


class HeterogeneousGrids(InputError):
    pass


class DelayExceedsLength(InputError):
    pass


class SpecOutOfRange(InputError):
    pass


class NoTrials(InputError):
    pass


# ==================== 统计错误 ====================

class StatisticsError(HrtfEvalError):
    """统计检验的前提条件不满足"""

    exit_code = 2


class EmptyInput(StatisticsError):
    pass


class OutOfRangeN(StatisticsError):
    pass


class ZeroVariance(StatisticsError):
    pass


class AllZeroDifferences(StatisticsError):
    pass


class DegenerateShape(StatisticsError):
    pass


class ConstantInput(StatisticsError):
    pass


class InsufficientSubjects(StatisticsError):
    pass


class ShapeMismatch(StatisticsError):
    pass


# ==================== 内部错误 ====================

class InvariantViolation(HrtfEvalError):
    """内部不变量被破坏"""

    exit_code = 3
