"""
Plain-text experiment configuration::

    # comment
    phantom.n_instances = 6
    phantom.dims = 64, 64, 64
    traversal.direction = up

Keys are ``<section>.<field>``; every section maps onto one config
dataclass. Unknown sections or fields are errors.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .loss import LossConfig
from .network import SegmentorConfig
from .phantom import PhantomConfig
from .training import TrainerConfig
from .traversal import TraversalConfig


@dataclasses.dataclass(frozen=True)
class PipelineConfig:
    working_spacing: float = 1.0


SECTIONS = {
    "phantom": PhantomConfig,
    "traversal": TraversalConfig,
    "network": SegmentorConfig,
    "trainer": TrainerConfig,
    "loss": LossConfig,
    "pipeline": PipelineConfig,
}


class ConfigError(ValueError):
    pass


def _coerce(text: str, annotation, key: str):
    text = text.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union or (origin is not None and type(None) in args):
        if text.lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(text, inner[0], key)
    if origin is tuple:
        parts = [p for p in text.strip("()[] ").replace(",", " ").split()]
        if args and args[-1] is not Ellipsis and len(parts) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} values, got {text!r}")
        return tuple(_coerce(p, args[min(i, len(args) - 1)], key) for i, p in enumerate(parts))
    try:
        if annotation is bool:
            lowered = text.lower()
            if lowered in ("true", "yes", "1", "on"):
                return True
            if lowered in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {annotation.__name__}") from None
    return text


def parse_config(text: str, source: str = "<config>") -> dict[str, dict]:
    """Parse config text into ``{section: {field: value}}`` with typed values."""
    out: dict[str, dict] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{source}:{lineno}: key {key!r} needs a section prefix")
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
        cls = SECTIONS[section]
        hints = typing.get_type_hints(cls)
        if name not in hints:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out.setdefault(section, {})[name] = _coerce(value, hints[name], key)
    return out


def load_config(path) -> dict[str, dict]:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def build(values: dict[str, dict], section: str, **overrides):
    """Instantiate the dataclass of ``section`` from parsed values."""
    kwargs = {**values.get(section, {}), **overrides}
    try:
        return SECTIONS[section](**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} configuration: {exc}") from None
