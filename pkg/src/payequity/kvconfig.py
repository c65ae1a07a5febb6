"""Flat key-value text files.

One `key = value` pair per line; blank lines and `#` comments are
ignored.  Used for model configuration and for ground-truth parameter
dumps.  Values are kept as strings here; callers parse them.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


def read_kv(path: str | Path) -> dict[str, str]:
    """Parse a key-value file, preserving key order."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def write_kv(path: str | Path, items: dict[str, object]) -> None:
    """Write `key = value` lines. Floats are written with repr so they
    round-trip exactly."""
    lines = []
    for key, value in items.items():
        if isinstance(value, float):
            lines.append(f"{key} = {value!r}")
        else:
            lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def parse_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected a number, got {raw!r}") from None


def parse_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected an integer, got {raw!r}") from None
