"""
Prometheus Metrics 导出模块

每次运行使用独立的 CollectorRegistry，结束时写成文本文件；
运行耗时只记录在这里，报告 JSON 保持逐字节可复现。
"""

import logging
from pathlib import Path
from typing import Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, Info, write_to_textfile

from . import __version__
from .config import config
from .models import RunReport

logger = logging.getLogger(__name__)


class MetricsExporter:
    """Prometheus Metrics 导出器"""

    def __init__(self, registry: Optional[CollectorRegistry] = None):
        self.registry = registry or CollectorRegistry()

        # CHSH 与其他报告数值
        self.report_value = Gauge(
            'bellsim_report_value',
            '报告中的数值',
            ['scenario', 'name'],
            registry=self.registry
        )

        # 核对结果
        self.checks_passed = Counter(
            'bellsim_checks_passed_total',
            '通过的核对数',
            ['scenario'],
            registry=self.registry
        )

        self.checks_failed = Counter(
            'bellsim_checks_failed_total',
            '未通过的核对数',
            ['scenario'],
            registry=self.registry
        )

        # 残差
        self.residual = Gauge(
            'bellsim_residual',
            '拟合与数值残差',
            ['scenario', 'name'],
            registry=self.registry
        )

        # 耗时
        self.run_duration = Histogram(
            'bellsim_scenario_duration_seconds',
            '场景运行耗时 (秒)',
            ['scenario'],
            buckets=(0.1, 0.5, 1, 2, 5, 10, 30, 60, 120, 300),
            registry=self.registry
        )

        # 运行信息
        self.run_info = Info(
            'bellsim_run',
            '运行信息',
            registry=self.registry
        )

    def record(self, report: RunReport, duration: float):
        """
        记录一次运行

        Args:
            report: 运行报告
            duration: 墙钟耗时（秒）
        """
        scenario = report.scenario
        self.run_info.info({
            'version': __version__,
            'scenario': scenario,
            'seed': str(report.seed),
            'threads': str(config.THREADS),
        })
        for name, value in report.values.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                self.report_value.labels(scenario=scenario, name=name).set(value)
        for check in report.checks:
            counter = self.checks_passed if check.passed else self.checks_failed
            counter.labels(scenario=scenario).inc()
        for name, value in report.residuals.items():
            self.residual.labels(scenario=scenario, name=name).set(value)
        self.run_duration.labels(scenario=scenario).observe(duration)
        logger.debug(f"Metrics recorded for {scenario}: {len(report.checks)} checks")

    def write(self, output_dir: str) -> Path:
        """写出 Prometheus 文本文件"""
        path = Path(output_dir) / config.METRICS_FILE
        write_to_textfile(str(path), self.registry)
        logger.info(f"Metrics written to {path}")
        return path
