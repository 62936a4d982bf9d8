"""Typed conversion between flat ``key=value`` mappings and dataclass configs."""
from __future__ import annotations

import dataclasses
import typing
from typing import Any


def _convert(raw: str, hint: Any, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _convert(raw, inner[0], key)
    if origin is tuple:
        items = [v.strip() for v in raw.split(",") if v.strip()]
        elem = args[0] if args else str
        return tuple(_convert(v, elem, key) for v in items)
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if hint in (int, float, str):
        try:
            return hint(raw)
        except ValueError as exc:
            raise ValueError(f"{key}: expected {hint.__name__}, got {raw!r}") from exc
    raise TypeError(f"{key}: unsupported config type {hint!r}")


def from_mapping(cls, mapping: dict[str, str], prefix: str = "", strict: bool = True):
    """Build ``cls`` from string values; unknown keys under ``prefix`` are an error when strict."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, raw in mapping.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in names:
            if strict:
                raise ValueError(f"unknown config key {key!r}")
            continue
        kwargs[name] = _convert(raw, hints[name], key)
    return cls(**kwargs)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def to_mapping(obj, prefix: str = "") -> dict[str, str]:
    return {f"{prefix}{f.name}": _format(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
