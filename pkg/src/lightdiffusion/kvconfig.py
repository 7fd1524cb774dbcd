"""``key = value`` text configs mapped onto dataclasses."""

from __future__ import annotations

from dataclasses import fields

from .errors import ValidationError

_TRUE = ("true", "1", "yes")
_FALSE = ("false", "0", "no")


def _convert(kind, key, value):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        if value.lower() not in _TRUE + _FALSE:
            raise ValueError(value)
        return value.lower() in _TRUE
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def parse_kv(cls, text: str):
    """Build ``cls`` from lines of ``key = value``; ``#`` starts a comment."""
    types = {f.name: f.type for f in fields(cls)}
    kw = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValidationError(f"line {lineno}: unknown key {key!r}")
        try:
            kw[key] = _convert(types[key], key, value)
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: bad value for {key}: {value!r}") from exc
    return cls(**kw)


def dump_kv(obj) -> str:
    return "".join(f"{f.name} = {getattr(obj, f.name)}\n" for f in fields(obj))
