"""Flat ``key = value`` text files used for scenario specs and pipeline configs.

One assignment per line, ``#`` starts a comment. Values are parsed as
bool, int, float, float lists (``[1, 2]`` or bare ``1, 2``) or strings.
Written files stay valid flat TOML.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _parse_value(raw: str):
    s = raw.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    if s.startswith("[") and s.endswith("]"):
        inner = s[1:-1].strip()
        return [float(x) for x in inner.split(",") if x.strip()] if inner else []
    low = s.lower()
    if low in ("true", "false"):
        return low == "true"
    if "," in s:
        try:
            return [float(x) for x in s.split(",") if x.strip()]
        except ValueError:
            return s
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def parse_flat(text: str, source="<string>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = _parse_value(value)
    return out


def read_flat(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path.name} not found")
    return parse_flat(path.read_text(encoding="utf-8"), source=str(path))


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(repr(float(x)) for x in v) + "]"
    if isinstance(v, str):
        return f'"{v}"'
    return str(v)


def write_flat(path, items: dict, header: str | None = None):
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines += [f"{k} = {format_value(v)}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
