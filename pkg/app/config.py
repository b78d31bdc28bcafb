"""
配置管理模块

配置优先级：命令行参数 > 环境变量 > YAML 文件 > 默认值
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict

import yaml
from pydantic import ValidationError

from .exceptions import ConfigurationError
from .models import ScenarioConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "BELLSIM_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def load_yaml_config(config_path: str = "config.yaml") -> Dict[str, Any]:
    """
    加载 YAML 配置文件

    Args:
        config_path: 配置文件路径

    Returns:
        配置字典
    """
    config_file = Path(config_path)
    if config_file.exists():
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            logger.warning(f"Failed to load {config_path}: {e}")
    return {}


def env(name: str, default: Any) -> Any:
    """读取带前缀的环境变量"""
    return os.getenv(ENV_PREFIX + name, default)


class Config:
    """应用配置类"""

    def __init__(self, config_file: str = "config.yaml"):
        """
        初始化配置

        Args:
            config_file: YAML 配置文件路径（可选）
        """
        yaml_config = load_yaml_config(config_file)

        # 运行配置
        runtime = yaml_config.get("runtime", {})
        self.SEED = int(env("SEED", runtime.get("seed", 1)))
        self.THREADS = int(env("THREADS", runtime.get("threads", 4)))
        self.CHUNK_SIZE = int(env("CHUNK_SIZE", runtime.get("chunk_size", 1000)))
        self.OUTPUT_DIR = env("OUT", runtime.get("output_dir", "output"))
        self.SCENARIO = env("SCENARIO", runtime.get("scenario", "reproduce"))
        self.SCENARIO_CONFIG = env("CONFIG", runtime.get("scenario_config", ""))

        # 数值容差
        tolerances = yaml_config.get("tolerances", {})
        self.FLOAT_TOL = float(tolerances.get("float", 1e-12))
        self.LP_TOL = float(tolerances.get("lp", 1e-9))

        # Metrics 配置
        metrics = yaml_config.get("metrics", {})
        self.METRICS_ENABLED = str(env(
            "METRICS_ENABLED",
            metrics.get("enabled", True)
        )).lower() == "true"
        self.METRICS_FILE = metrics.get("filename", "metrics.prom")

        # 日志配置
        logging_config = yaml_config.get("logging", {})
        self.LOG_LEVEL = str(env(
            "LOG_LEVEL",
            logging_config.get("level", "INFO")
        )).upper()
        self.LOG_FORMAT = logging_config.get(
            "format", "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

    def validate(self):
        """验证配置"""
        if self.THREADS < 1:
            raise ConfigurationError("must be >= 1", path="runtime.threads")
        if self.CHUNK_SIZE < 1:
            raise ConfigurationError("must be >= 1", path="runtime.chunk_size")
        if self.SEED < 0:
            raise ConfigurationError("must be a non-negative integer", path="runtime.seed")
        if self.LOG_LEVEL not in LOG_LEVELS:
            raise ConfigurationError(
                f"must be one of {', '.join(LOG_LEVELS)}", path="logging.level"
            )

    def to_dict(self) -> Dict[str, Any]:
        """导出配置为字典"""
        return {
            "runtime": {
                "seed": self.SEED,
                "threads": self.THREADS,
                "chunk_size": self.CHUNK_SIZE,
                "output_dir": self.OUTPUT_DIR,
                "scenario": self.SCENARIO,
                "scenario_config": self.SCENARIO_CONFIG
            },
            "tolerances": {
                "float": self.FLOAT_TOL,
                "lp": self.LP_TOL
            },
            "metrics": {
                "enabled": self.METRICS_ENABLED,
                "filename": self.METRICS_FILE
            },
            "logging": {
                "level": self.LOG_LEVEL
            }
        }


# 创建全局配置实例
config = Config(os.getenv(ENV_PREFIX + "APP_CONFIG", "config.yaml"))


def load_scenario(path: str, **overrides: Any) -> ScenarioConfig:
    """
    读取场景配置文件

    Args:
        path: YAML 文件路径
        overrides: 命令行覆盖项（值为 None 的忽略）

    Returns:
        ScenarioConfig
    """
    config_file = Path(path)
    if not config_file.exists():
        raise ConfigurationError(f"scenario config {path} not found", path="--config")
    try:
        with open(config_file, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"invalid YAML: {e}", path=str(path)) from e
    if not isinstance(data, dict):
        raise ConfigurationError("scenario config must be a mapping", path=str(path))
    return scenario_from_dict(data, **overrides)


def scenario_from_dict(data: Dict[str, Any], **overrides: Any) -> ScenarioConfig:
    """校验场景字典；错误带点分键路径"""
    merged = dict(data)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ScenarioConfig.model_validate(merged)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(first["msg"], path=".".join(str(p) for p in first["loc"])) from e
