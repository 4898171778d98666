"""Tool configuration: built-in defaults < JSON config file < CLI flags."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .exceptions import MalformedConfig, UnknownKey
from .pipeline.clients import API_KEY_ENV, ENDPOINT_ENV


@dataclass(frozen=True)
class ToolConfig:
    beta: float = 2.0
    iou_thresh: float = 0.5
    score_thresh: float = 0.3
    retry_limit: int = 3
    parallelism: int = 8
    max_area_ratio: float = 0.85
    cue_lexicon: Optional[str] = None
    un_exclusions: Optional[str] = None
    un_stems: Optional[str] = None
    endpoint_env: str = ENDPOINT_ENV
    api_key_env: str = API_KEY_ENV

    def __post_init__(self):
        checks = [
            (self.beta > 0, "beta must be > 0"),
            (0 <= self.iou_thresh <= 1, "iou_thresh must be in [0, 1]"),
            (0 <= self.score_thresh <= 1, "score_thresh must be in [0, 1]"),
            (self.retry_limit >= 0, "retry_limit must be >= 0"),
            (self.parallelism >= 1, "parallelism must be >= 1"),
            (0 < self.max_area_ratio <= 1, "max_area_ratio must be in (0, 1]"),
        ]
        for ok, msg in checks:
            if not ok:
                raise MalformedConfig(msg)

    def to_dict(self) -> dict:
        return asdict(self)


_TYPES = {f.name: f.type for f in fields(ToolConfig)}


def _coerce(key, value):
    kind = _TYPES[key]
    if value is None:
        if "Optional" in str(kind):
            return None
        raise MalformedConfig(f"{key} may not be null")
    try:
        if kind in ("float", float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind in ("int", int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        return str(value)
    except (TypeError, ValueError):
        raise MalformedConfig(f"{key}: cannot use {value!r}") from None


def load_config(path=None, overrides=None) -> ToolConfig:
    """Merge defaults, an optional JSON object file and CLI overrides.

    ``None`` values in ``overrides`` mean "flag not given" and are skipped.
    """
    values = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedConfig(f"{path}: invalid JSON ({exc.msg})") from None
        except OSError as exc:
            raise MalformedConfig(f"{path}: {exc.strerror}") from None
        if not isinstance(data, dict):
            raise MalformedConfig(f"{path}: config must be a JSON object")
        unknown = sorted(set(data) - set(_TYPES))
        if unknown:
            raise UnknownKey(f"unknown config key(s): {', '.join(unknown)}")
        values.update({k: _coerce(k, v) for k, v in data.items()})
    for k, v in (overrides or {}).items():
        if k not in _TYPES:
            raise UnknownKey(f"unknown config key: {k}")
        if v is not None:
            values[k] = _coerce(k, v)
    return ToolConfig(**values)
