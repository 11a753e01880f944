"""Flat key-value configuration text.

Format, one entry per line::

    # comment
    iterations = 2000
    corpus = charts
    include base.cfg

``include <path>`` splices another file at that point (paths resolve
relative to the including file); later assignments override earlier ones.
Values are kept as strings; callers coerce.
"""

from __future__ import annotations

import os
from typing import Optional


def parse_config_text(text: str, base_dir: Optional[str] = None,
                      _seen: Optional[set] = None) -> dict:
    result: dict[str, str] = {}
    seen = _seen if _seen is not None else set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("include ") or line.startswith("include\t"):
            target = line.split(None, 1)[1].strip()
            if base_dir is not None:
                target = os.path.join(base_dir, target)
            result.update(parse_config(target, _seen=seen))
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key in {raw!r}")
        result[key] = value.strip()
    return result


def parse_config(path, _seen: Optional[set] = None) -> dict:
    seen = _seen if _seen is not None else set()
    real = os.path.realpath(path)
    if real in seen:
        raise ValueError(f"{path}: circular include")
    seen.add(real)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, base_dir=os.path.dirname(real), _seen=seen)


def serialize_config(entries: dict) -> str:
    lines = [f"{key} = {entries[key]}" for key in sorted(entries)]
    return "\n".join(lines) + "\n" if lines else ""


def parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")
