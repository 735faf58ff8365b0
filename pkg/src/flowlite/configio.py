"""Flat key=value config files with dotted keys for nested sections.

The on-disk format is one `key = value` pair per line, `#` comments, no
structure beyond dotted key prefixes.  Dataclass configs round-trip through
these helpers; unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses

import numpy as np


def parse_kv_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {d[k]}\n" for k in sorted(d))


def to_flat(obj, prefix: str = "") -> dict:
    """Flatten a (possibly nested) dataclass into dotted string keys."""
    out = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(val):
            out.update(to_flat(val, key + "."))
        elif isinstance(val, bool):
            out[key] = "true" if val else "false"
        elif isinstance(val, (int, float, str, np.integer, np.floating)):
            out[key] = str(val)
        else:
            raise TypeError(f"cannot flatten field {key} of type {type(val)}")
    return out


def _convert(text: str, example):
    if isinstance(example, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return type(example)(text)


def _field_default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    raise TypeError(f"field {f.name} needs a default for config parsing")


def _from_flat(cls, flat: dict, prefix: str, consumed: set, defaults=None):
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        default = getattr(defaults, f.name) if defaults is not None else _field_default(f)
        if dataclasses.is_dataclass(default):
            sub_prefix = key + "."
            if any(k.startswith(sub_prefix) for k in flat):
                kwargs[f.name] = _from_flat(type(default), flat, sub_prefix, consumed,
                                            defaults=default)
            elif defaults is not None:
                kwargs[f.name] = default
        elif key in flat:
            kwargs[f.name] = _convert(flat[key], default)
            consumed.add(key)
        elif defaults is not None:
            kwargs[f.name] = default
    return cls(**kwargs)


def from_flat(cls, flat: dict, prefix: str = ""):
    """Rebuild a dataclass from dotted keys.

    Missing keys keep the dataclass defaults; keys not matching any field
    raise KeyError.
    """
    consumed: set = set()
    obj = _from_flat(cls, flat, prefix, consumed)
    unknown = sorted(k for k in flat if k.startswith(prefix) and k not in consumed)
    if unknown:
        raise KeyError(f"unknown config keys: {unknown}")
    return obj
