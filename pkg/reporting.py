"""
Report envelopes and atomic JSON/CSV emission
"""

import dataclasses
import json
import logging
import math
import os
import tempfile
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from errors import LabError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
# excluded when comparing reports for determinism
TIMESTAMP_FIELD = "created_at"


def jsonable(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become "inf", "-inf" or "nan" """
    if hasattr(obj, "to_dict") and not isinstance(obj, (pd.DataFrame, pd.Series)):
        return jsonable(obj.to_dict())
    if isinstance(obj, Enum):
        return obj.value
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, pd.DataFrame):
        return jsonable(obj.to_dict(orient="records"))
    return obj


def report_envelope(command: str, config: Any, result: Any) -> Dict[str, Any]:
    """Wrap a result with the schema version, resolved config, its hash and the master seed"""
    resolved = None if config is None else config.resolved()
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        TIMESTAMP_FIELD: datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "master_seed": None if resolved is None else resolved["run"]["master_seed"],
        "config": resolved,
        "config_hash": None if config is None else config.config_hash(),
        "result": jsonable(result),
    }


def _atomic_write(path: Path, write) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                write(f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise LabError(f"could not write {path}: {e}") from e
    return path


def write_json_atomic(path: Union[str, Path], payload: Any) -> Path:
    body = jsonable(payload)
    written = _atomic_write(Path(path), lambda f: json.dump(body, f, indent=2, sort_keys=True,
                                                             ensure_ascii=False, allow_nan=False))
    logger.info(f"Saved report to {written}")
    return written


def write_frame_atomic(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    written = _atomic_write(Path(path), lambda f: frame.to_csv(f, index=False, float_format="%.17g"))
    logger.info(f"Saved table to {written}")
    return written


def load_report(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise LabError(f"could not read report {path}: {e}") from e


def strip_timestamp(report: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in report.items() if k != TIMESTAMP_FIELD}
