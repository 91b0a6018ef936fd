"""``key = value`` text configs with ``#`` comments."""

from __future__ import annotations

import dataclasses
from typing import List, Tuple


def parse_key_values(text: str) -> List[Tuple[str, str]]:
    """Ordered ``(key, value)`` pairs; repeated keys are kept."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out.append((key, value))
    return out


def _coerce(value: str, kind):
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return kind(value)


def update_dataclass(obj, pairs):
    """Return a copy of dataclass ``obj`` with fields overridden from string pairs."""
    types = {f.name: type(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in pairs:
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        try:
            changes[key] = _coerce(value, types[key])
        except ValueError as exc:
            raise ValueError(f"bad value for {key!r}: {exc}") from exc
    return dataclasses.replace(obj, **changes)


def dump_dataclass(obj) -> str:
    return "".join(f"{f.name} = {getattr(obj, f.name)}\n" for f in dataclasses.fields(obj))
