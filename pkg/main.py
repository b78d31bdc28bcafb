"""
Bell/CHSH 模拟工具包 - 命令行入口

功能:
- 读取场景配置（YAML）并校验
- 运行指定场景或完整复现
- 写出 report.json、绘图数据 CSV 与 metrics.prom
- 退出码: 0 全部核对通过，2 用法/配置错误，3 有核对未通过
"""

import argparse
import io
import logging
import sys
from typing import List, Optional

from app import __version__
from app.config import config, load_scenario, scenario_from_dict
from app.exceptions import BellSimError, ConfigurationError, ModelValidationError, SamplingError, handle_error
from app.runner import run

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVARIANT = 3

SCENARIOS = ("spreadsheet", "quantum", "chvm", "collision", "gill", "end-to-end", "reproduce")


def setup_logging(level: Optional[str] = None):
    """配置日志系统，确保中文正常显示"""
    try:
        if hasattr(sys.stdout, 'buffer'):
            sys.stdout = io.TextIOWrapper(sys.stdout.buffer, encoding='utf-8', errors='replace', line_buffering=True)
        if hasattr(sys.stderr, 'buffer'):
            sys.stderr = io.TextIOWrapper(sys.stderr.buffer, encoding='utf-8', errors='replace', line_buffering=True)
    except (AttributeError, ValueError) as e:
        print(f"Warning: Failed to set UTF-8 encoding: {e}")

    level = getattr(logging, level or config.LOG_LEVEL)
    handler = logging.StreamHandler(sys.stdout)
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(config.LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))

    root_logger = logging.getLogger()
    root_logger.setLevel(level)
    root_logger.handlers.clear()
    root_logger.addHandler(handler)


def parse_seed(value: str) -> int:
    try:
        seed = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {value!r}")
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed {value} outside [0, 2^64)")
    return seed


def parse_threads(value: str) -> int:
    try:
        threads = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid thread count {value!r}")
    if threads < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return threads


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bellsim",
        description="Bell/CHSH 不等式、量子关联、情境隐变量模型与碰撞实验的确定性模拟",
    )
    parser.add_argument("--config", help="场景配置文件 (YAML)，默认取 BELLSIM_CONFIG")
    parser.add_argument("--seed", type=parse_seed, help="主随机种子 (U64)，默认取 BELLSIM_SEED")
    parser.add_argument("--out", help="输出目录，默认取 BELLSIM_OUT")
    parser.add_argument("--scenario", choices=SCENARIOS, help="场景名，覆盖配置文件")
    parser.add_argument("--threads", type=parse_threads, help="线程数（不影响结果）")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    logger = logging.getLogger(__name__)

    try:
        config.validate()
        config_path = args.config or config.SCENARIO_CONFIG
        overrides = {"scenario": args.scenario, "seed": args.seed}
        if config_path:
            scenario = load_scenario(config_path, **overrides)
        else:
            scenario = scenario_from_dict(
                {"scenario": config.SCENARIO, "seed": config.SEED}, **overrides
            )
        logger.info(f"bellsim {__version__}: scenario {scenario.scenario}, seed {scenario.seed}")
        report = run(scenario, output_dir=args.out, threads=args.threads)
    except (ConfigurationError, ModelValidationError, SamplingError) as e:
        handle_error(e, "usage")
        return EXIT_USAGE
    except BellSimError as e:
        handle_error(e, "run")
        return EXIT_INVARIANT

    if not report.passed:
        for name in report.failures:
            print(f"FAILED {name}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
