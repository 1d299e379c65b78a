"""Plain-text ``key = value`` config files.

Blank lines and ``#`` comments are ignored. Values are coerced to the type of
the matching default; list defaults take comma-separated items. Unknown keys
are an error so typos never pass silently.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _guess(raw: str):
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            pass
    return raw


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, (list, tuple)):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default:
                return type(default)(_coerce(key, s, default[0]) for s in items)
            return type(default)(_guess(s) for s in items)
        if default is None:
            return None if raw.lower() in ("", "none") else raw
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None


def parse_config(text: str, defaults: dict, source: str = "<config>") -> dict:
    """Overlay ``text`` on a copy of ``defaults``."""
    out = dict(defaults)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            known = ", ".join(sorted(defaults))
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r} (known: {known})")
        out[key] = _coerce(key, raw, defaults[key])
    return out


def load_config(path, defaults: dict) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, defaults, str(path))


def dump_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, (list, tuple)):
            val = ", ".join(str(v) for v in val)
        lines.append(f"{key} = {'none' if val is None else val}")
    return "\n".join(lines) + "\n"
