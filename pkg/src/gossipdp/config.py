"""``key=value`` configuration files."""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from pathlib import Path
from typing import Any

from gossipdp.errors import ParameterError, ParseError


def parse_key_value(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"expected key=value, got {raw!r}", lineno)
        out[key.strip()] = value.strip()
    return out


def coerce_fields(cls: type, values: dict[str, str]) -> dict[str, Any]:
    """Convert string values to the annotated field types of dataclass ``cls``."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    out: dict[str, Any] = {}
    for key, value in values.items():
        if key not in names:
            raise ParameterError(f"unknown config key {key!r} for {cls.__name__}")
        kind = hints[key]
        if typing.get_origin(kind) in (typing.Union, types.UnionType):
            kind = next(a for a in typing.get_args(kind) if a is not type(None))
        try:
            if kind is bool:
                out[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                out[key] = kind(value)
        except (TypeError, ValueError):
            raise ParameterError(f"bad value {value!r} for config key {key!r}") from None
    return out


def load_dataclass(cls: type, path: str | os.PathLike, **overrides: Any):
    values = coerce_fields(cls, parse_key_value(Path(path).read_text()))
    values.update(overrides)
    return cls(**values)
