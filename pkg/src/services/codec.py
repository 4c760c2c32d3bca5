"""Canonical JSON encoding used for the event log, snapshots, and reports."""
from __future__ import annotations

import json
import math
from enum import Enum
from pathlib import PurePath
from typing import Any


def _format_real(value: float) -> str:
    if not math.isfinite(value):
        raise ValueError(f"non-finite real cannot be encoded: {value!r}")
    text = format(value, ".17g")
    if "e" not in text and "." not in text:
        text += ".0"
    return text


def _encode(value: Any, out: list[str]) -> None:
    if hasattr(value, "model_dump"):
        value = value.model_dump(mode="json")
    elif hasattr(value, "tolist") and not isinstance(value, (str, bytes, list, tuple)):
        # numpy scalars and arrays
        value = value.tolist()
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, Enum):
        _encode(value.value, out)
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(_format_real(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, PurePath):
        out.append(json.dumps(str(value), ensure_ascii=False))
    elif isinstance(value, dict):
        out.append("{")
        for index, key in enumerate(sorted(value, key=str)):
            if index:
                out.append(",")
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for index, item in enumerate(value):
            if index:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(value, (set, frozenset)):
        _encode(sorted(value), out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def canonical_text(value: Any) -> str:
    """Sorted keys, no insignificant whitespace, reals at 17 significant digits."""

    out: list[str] = []
    _encode(value, out)
    return "".join(out)


def canonical_dumps(value: Any) -> bytes:
    return canonical_text(value).encode("utf-8")


def canonical_loads(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)
