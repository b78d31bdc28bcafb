"""
文件读写模块

表格 CSV、关联 JSON、情境模型 JSON、事件流 CSV、碰撞实验日志 CSV、
绘图数据 CSV 与运行报告 JSON。所有读取都严格校验并报告行号或键路径。
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Union

from pydantic import ValidationError

from .collision import SETTINGS
from .exceptions import ModelValidationError, SpreadsheetError
from .models import (
    COLUMNS,
    HOLE,
    ContextualModel,
    CorrelationSet,
    RunReport,
    SettingPair,
    SignVariant,
    Spreadsheet,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_CELL_VALUES = {"1": 1, "+1": 1, "-1": -1, "": HOLE}


def error_path(error: ValidationError) -> str:
    """pydantic 错误的点分路径"""
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"])


def error_message(error: ValidationError) -> str:
    return error.errors()[0]["msg"]


# ========================
# 表格
# ========================

def read_spreadsheet(path: PathLike) -> Spreadsheet:
    """
    读取 N×4 表格 CSV

    表头必须为 A,Ap,B,Bp；单元格为 +1/1/-1，空单元格表示空洞。
    """
    rows: List[List[int]] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise SpreadsheetError(f"{path}: empty file")
        if [h.strip() for h in header] != list(COLUMNS):
            raise SpreadsheetError(f"{path}: line 1: expected header {','.join(COLUMNS)}, got {','.join(header)}")
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != 4:
                raise SpreadsheetError(f"{path}: line {line_no}: expected 4 cells, got {len(record)}")
            row = []
            for cell in record:
                key = cell.strip()
                if key not in _CELL_VALUES:
                    raise SpreadsheetError(f"{path}: line {line_no}: invalid cell {cell!r}")
                row.append(_CELL_VALUES[key])
            rows.append(row)
    logger.debug(f"Read {len(rows)} rows from {path}")
    return Spreadsheet.from_rows(rows)


def write_spreadsheet(path: PathLike, sheet: Spreadsheet):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in sheet.cells.tolist():
            writer.writerow(["" if c == HOLE else c for c in row])


# ========================
# 关联与模型
# ========================

def _read_json(path: PathLike, error_cls):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise error_cls(f"invalid JSON at line {e.lineno}: {e.msg}", str(path)) from e


def read_correlations(path: PathLike) -> CorrelationSet:
    """读取关联 JSON（variant、S 为输出字段，读取时忽略）"""
    data = _read_json(path, ModelValidationError)
    if not isinstance(data, dict):
        raise ModelValidationError("expected a JSON object", str(path))
    data = {k: v for k, v in data.items() if k not in ("variant", "S")}
    counts = data.get("counts")
    if isinstance(counts, dict):
        data["counts"] = {k: v for k, v in counts.items() if v is not None} or None
    try:
        return CorrelationSet.model_validate(data)
    except ValidationError as e:
        raise ModelValidationError(error_message(e), error_path(e)) from e


def write_correlations(path: PathLike, corr: CorrelationSet, variant: Optional[SignVariant] = None):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(corr.to_json_dict(variant), f, indent=2, sort_keys=True)
        f.write("\n")


def contextual_model_from_dict(data: Any) -> ContextualModel:
    """校验模型字典，错误信息带键路径"""
    if not isinstance(data, dict):
        raise ModelValidationError("expected a JSON object")
    try:
        return ContextualModel.model_validate(data)
    except ValidationError as e:
        raise ModelValidationError(error_message(e), error_path(e)) from e


def read_contextual_model(path: PathLike) -> ContextualModel:
    """
    读取情境模型 JSON

    概率可写为 "num/den" 字符串（精确）或浮点数；结果表为整数数组。
    """
    model = contextual_model_from_dict(_read_json(path, ModelValidationError))
    logger.info(f"Loaded contextual model k={model.k}, m={model.m} from {path}")
    return model


def write_contextual_model(path: PathLike, model: ContextualModel):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(model.model_dump(mode="json"), f, indent=2)
        f.write("\n")


# ========================
# 事件流与实验日志
# ========================

def write_events(path: PathLike, events) -> int:
    """事件流 CSV: trial,setting,outA,outB"""
    names = [pair.value for pair in SettingPair]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trial", "setting", "outA", "outB"])
        writer.writerows(
            (i, names[s], a, b)
            for i, (s, a, b) in enumerate(zip(events.setting.tolist(), events.out_a.tolist(), events.out_b.tolist()))
        )
    return len(events)


def write_trial_log(path: PathLike, run) -> int:
    """碰撞实验日志 CSV: trial,v,v1,v2,setting,outA,outB"""
    v = run.v.tolist()
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["trial", "v", "v1", "v2", "setting", "outA", "outB"])
        writer.writerows(
            (i, repr(speed), repr(2 * speed / 5), repr(3 * speed / 5), SETTINGS[s].value, a, b)
            for i, (speed, s, a, b) in enumerate(zip(v, run.setting.tolist(), run.out_a.tolist(), run.out_b.tolist()))
        )
    return run.n_trials


def write_series(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """绘图数据：只输出 (x, y, ...) 序列"""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


# ========================
# 报告
# ========================

def write_report(path: PathLike, report: RunReport):
    """键排序、固定缩进，相同输入得到逐字节相同的文件"""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path: PathLike) -> RunReport:
    with open(path, "r", encoding="utf-8") as f:
        return RunReport.model_validate(json.load(f))
