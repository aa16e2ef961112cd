"""Plain ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Keys may carry a section prefix
(``ga.population = 200``) that routes them to a nested dataclass. Values are
parsed as int, float, bool or comma-separated tuples when they look like one,
otherwise kept as strings.
"""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path

SEED_ENV = "UNISKEL_SEED"


def parse_value(text: str):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if "," in text:
        return tuple(parse_value(part) for part in text.split(",") if part.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_config(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    return parse_config(Path(path).read_text())


def section(values: dict, prefix: str) -> dict:
    """Entries under ``prefix.``, with the prefix removed."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in values.items() if k.startswith(head)}


def apply(obj, values: dict):
    """Copy of dataclass ``obj`` with matching top-level fields replaced.

    Unknown keys raise ``ValueError``; nested dataclass fields are filled from
    their ``name.`` section.
    """
    names = {f.name: f for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if "." in key:
            continue
        if key not in names:
            raise ValueError(f"unknown setting {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if isinstance(current, tuple) and not isinstance(value, tuple):
            value = (value,)
        if isinstance(current, float) and isinstance(value, int):
            value = float(value)
        changes[key] = value
    for name in names:
        nested = getattr(obj, name)
        if dataclasses.is_dataclass(nested):
            sub = section(values, name)
            if sub:
                changes[name] = apply(nested, sub)
    return dataclasses.replace(obj, **changes)


def default_seed(fallback: int = 0) -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value not in (None, "") else fallback
