"""
工具函数模块
"""

import logging
import math
from fractions import Fraction
from numbers import Integral, Real
from typing import Any, Iterable, Union

import numpy as np

logger = logging.getLogger(__name__)

Number = Union[Fraction, float]


def to_number(value: Any) -> Number:
    """
    转换为精确有理数或浮点数

    整数与 "num/den" 字符串转为 Fraction，浮点数保持浮点。

    Args:
        value: 待转换的值

    Returns:
        Fraction 或 float
    """
    if isinstance(value, bool):
        raise TypeError("boolean is not a number")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (Integral, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as e:
            raise ValueError(f"invalid rational literal {value!r}") from e
    if isinstance(value, (Real, np.floating)):
        return float(value)
    raise TypeError(f"unsupported numeric type {type(value).__name__}")


def is_exact(values: Iterable[Any]) -> bool:
    """全部为 Fraction 时返回 True"""
    return all(isinstance(v, Fraction) for v in values)


def number_to_json(value: Number) -> Union[str, float, int]:
    """
    数值的 JSON 表示

    Fraction 输出 "num/den"（整数直接输出），浮点数原样输出。
    """
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return value.numerator
        return f"{value.numerator}/{value.denominator}"
    return float(value)


def binomial_sigma(mean: float, n: int) -> float:
    """
    ±1 变量样本均值的标准误差

    Args:
        mean: 期望值估计
        n: 样本数

    Returns:
        sqrt((1 - mean^2) / n)，n 为 0 时返回 inf
    """
    if n <= 0:
        return math.inf
    return math.sqrt(max(1.0 - float(mean) ** 2, 0.0) / n)


def format_duration(seconds: float) -> str:
    """
    格式化时间

    Args:
        seconds: 秒数

    Returns:
        格式化后的字符串
    """
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    elif seconds < 60:
        return f"{seconds:.2f}s"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = int(seconds % 60)
        return f"{minutes}m{secs}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        return f"{hours}h{minutes}m"


def format_value(value: Any, digits: int = 6) -> str:
    """日志输出用的数值格式"""
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value} (~{float(value):.{digits}f})"
    return f"{float(value):.{digits}f}"
