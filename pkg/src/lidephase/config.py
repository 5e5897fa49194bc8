"""Flat key=value configuration files.

One `key = value` pair per line, '#' starts a comment, blank lines are
ignored.  Section structure is expressed with dotted prefixes
(`coil.radius_m = 0.015`), which keeps the files diff-friendly and
language-neutral.  All quantities are SI with the unit spelled out in the
key name.
"""

import os

from .errors import ConfigError

__all__ = ["read_config", "write_config", "ConfigView"]

_REQUIRED = object()


def read_config(path):
    """Parse a config file into an ordered {key: raw-string} mapping."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            out[key] = value.strip()
    return out


def write_config(path, mapping, header=None):
    """Write a mapping back out in the same format (atomically)."""
    from .io import write_text_atomic

    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for key in mapping:
        lines.append(f"{key} = {mapping[key]}")
    write_text_atomic(path, "\n".join(lines) + "\n")


class ConfigView:
    """Typed access to a raw config mapping; errors name the offending key."""

    def __init__(self, mapping, source="<config>"):
        self.mapping = dict(mapping)
        self.source = source

    def __contains__(self, key):
        return key in self.mapping

    def _raw(self, key, default):
        if key in self.mapping:
            return self.mapping[key]
        if default is _REQUIRED:
            raise ConfigError(f"{self.source}: missing required key {key!r}")
        return default

    def _typed(self, key, default, cast, what):
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return raw
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(
                f"{self.source}: key {key!r} must be {what}, got {raw!r}"
            ) from None

    def get_str(self, key, default=_REQUIRED):
        return self._raw(key, default)

    def get_float(self, key, default=_REQUIRED):
        return self._typed(key, default, float, "a number")

    def get_int(self, key, default=_REQUIRED):
        return self._typed(key, default, int, "an integer")

    def get_bool(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return raw
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"{self.source}: key {key!r} must be a boolean, got {raw!r}")

    def get_float_list(self, key, default=_REQUIRED):
        raw = self._raw(key, default)
        if not isinstance(raw, str):
            return raw
        items = [p for p in (s.strip() for s in raw.split(",")) if p]
        try:
            return [float(p) for p in items]
        except ValueError:
            raise ConfigError(
                f"{self.source}: key {key!r} must be comma-separated numbers, got {raw!r}"
            ) from None

    def subsection(self, prefix):
        """Keys under `prefix.` with the prefix stripped."""
        plen = len(prefix) + 1
        return {k[plen:]: v for k, v in self.mapping.items() if k.startswith(prefix + ".")}
