"""Flat ``key = value`` configuration files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Mapping, TypeVar

from .errors import ConfigError

T = TypeVar("T")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment line."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config_text(text, str(p))


def _coerce(value: str, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    try:
        if tp is bool:
            v = value.lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(value)
        if tp in (int, float, str):
            return tp(value)
        if origin is tuple:
            args = typing.get_args(tp)
            items = [s.strip() for s in value.split(",") if s.strip()]
            inner = args[0]
            if typing.get_origin(inner) is tuple:
                pairs = []
                for item in items:
                    name, _, num = item.partition(":")
                    pairs.append((name.strip(), float(num)))
                return tuple(pairs)
            return tuple(inner(s) for s in items)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    raise ConfigError(f"unsupported field type for {key!r}: {tp}")


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ",".join(f"{a}:{b}" for a, b in v)
        return ",".join(str(i) for i in v)
    return str(v)


def from_mapping(cls: type[T], mapping: Mapping[str, str], base: T | None = None) -> T:
    """Build ``cls`` from string values; unknown keys raise :class:`ConfigError`."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {k: _coerce(v, hints[k], k) for k, v in mapping.items()}
    if base is not None:
        return dataclasses.replace(base, **kwargs)
    return cls(**kwargs)


def to_text(obj) -> str:
    return "".join(f"{f.name} = {format_value(getattr(obj, f.name))}\n" for f in dataclasses.fields(obj))
