"""
错误处理模块
"""

from typing import Optional
import logging

logger = logging.getLogger(__name__)


class BellSimError(Exception):
    """工具包基础异常"""
    pass


class SpreadsheetError(BellSimError):
    """表格形状、取值或空洞错误"""
    pass


class SamplingError(BellSimError):
    """抽样数量超过可用行数"""
    pass


class ModelValidationError(BellSimError):
    """隐变量模型校验错误"""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class QuantumValidationError(BellSimError):
    """量子对象（向量、算符、态）校验错误"""
    pass


class PostSelectionError(BellSimError):
    """后选择后保留质量为零"""

    def __init__(self, message: str, setting: Optional[str] = None):
        self.setting = setting
        super().__init__(message)


class ConfigurationError(BellSimError):
    """配置错误"""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InvariantViolation(BellSimError):
    """断言的定理不成立"""

    def __init__(self, name: str, message: str):
        self.name = name
        super().__init__(f"[{name}] {message}")


def handle_error(error: Exception, context: Optional[str] = None) -> None:
    """
    统一错误处理

    Args:
        error: 异常对象
        context: 上下文信息
    """
    error_msg = f"{context}: {str(error)}" if context else str(error)

    if isinstance(error, SpreadsheetError):
        logger.error(f"[Spreadsheet] {error_msg}")
    elif isinstance(error, SamplingError):
        logger.error(f"[Sampling] {error_msg}")
    elif isinstance(error, ModelValidationError):
        logger.error(f"[Model] {error_msg}")
    elif isinstance(error, QuantumValidationError):
        logger.error(f"[Quantum] {error_msg}")
    elif isinstance(error, PostSelectionError):
        logger.error(f"[Post-selection] {error_msg}")
    elif isinstance(error, ConfigurationError):
        logger.error(f"[Configuration] {error_msg}")
    elif isinstance(error, InvariantViolation):
        logger.error(f"[Invariant] {error_msg}")
    else:
        logger.error(f"[Unknown Error] {error_msg}")
