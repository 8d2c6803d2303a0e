"""Plain-text experiment configuration: key = value sections, stable hashing.

Config files are diffable ini-style text: `[section]` headers followed by
`key = value` lines (# comments allowed).  Values coerce to int, float, bool,
or str.  config_hash() serializes the parameter mapping with sorted keys, so
the hash is invariant under field reordering; every CLI output carries it.
"""

from __future__ import annotations

import hashlib
import json


class ConfigError(ValueError):
    """Validation failure; always names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


def _coerce(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    return raw


def parse_config(text: str) -> dict:
    """Parse `[section]` / `key = value` text into {section: {key: value}}.

    Keys outside any section land in the "" section.  Duplicate keys within a
    section are an error (silent override would defeat diffability).
    """
    out: dict = {}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if not section:
                raise ConfigError(f"line {lineno}", "empty section header")
            out.setdefault(section, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}", "empty key")
        sec = out.setdefault(section, {})
        if key in sec:
            raise ConfigError(f"{section}.{key}" if section else key, "duplicate key")
        sec[key] = _coerce(raw)
    return out


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def flatten(cfg: dict) -> dict:
    """{section: {key: value}} -> {"section.key": value} (sorted keys)."""
    flat = {}
    for section in sorted(cfg):
        entries = cfg[section]
        if not isinstance(entries, dict):
            flat[section] = entries
            continue
        for key in sorted(entries):
            name = f"{section}.{key}" if section else key
            flat[name] = entries[key]
    return flat


def config_hash(params: dict) -> str:
    """sha256 of the canonically serialized parameter mapping.

    Nested section dicts and flat dicts hash identically after flattening;
    key order never matters.
    """
    flat = flatten(params) if any(isinstance(v, dict) for v in params.values()) else dict(params)
    canon = json.dumps(
        {str(k): flat[k] for k in sorted(flat)},
        sort_keys=True, separators=(",", ":"), ensure_ascii=True,
    )
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def validate_params(params: dict):
    """Generic sanity rules; raises ConfigError naming the field.

    Rules: any key containing "tol" or ending in "_floor" must be a positive
    number; any key named/suffixed "nodes"/"steps"/"samples"/"n_max" must be a
    positive integer; "seed" must be a nonnegative integer.
    """
    flat = flatten(params) if any(isinstance(v, dict) for v in params.values()) else params
    for key, val in flat.items():
        base = key.rsplit(".", 1)[-1]
        if "tol" in base or base.endswith("_floor"):
            if not isinstance(val, (int, float)) or isinstance(val, bool) or val <= 0:
                raise ConfigError(key, f"tolerance must be a positive number, got {val!r}")
        if base in ("nodes", "steps", "samples", "n_max", "n", "n_lat", "n_phi"):
            if not isinstance(val, int) or isinstance(val, bool) or val <= 0:
                raise ConfigError(key, f"must be a positive integer, got {val!r}")
        if base == "seed":
            if not isinstance(val, int) or isinstance(val, bool) or val < 0:
                raise ConfigError(key, f"seed must be a nonnegative integer, got {val!r}")
