"""Run configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError, ParseError

LINK_MODES = ("human_guide", "addition_guide", "random_guide", "object_guide")
SG_TARGETS = ("object", "human")


@dataclass(frozen=True)
class RunConfig:
    # architecture
    d: int = 32
    heads: int = 2
    encoder_layers: int = 2
    decoder_layers: int = 2
    num_queries: int = 8
    num_obj_classes: int = 4
    num_actions: int = 4
    channels: int = 8
    grid_h: int = 8
    grid_w: int = 8
    # loss weights (lambda_reg, lambda_giou, lambda_o, lambda_a)
    lambda_reg: float = 1.0
    lambda_giou: float = 2.5
    lambda_o: float = 1.0
    lambda_a: float = 1.0
    # optimisation
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    # HOI-specific switches
    link_mode: str = "human_guide"
    sg_enabled: bool = True
    sg_target: str = "object"
    # inference / evaluation
    nms_threshold: float = 0.7
    iou_threshold: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ("d", "heads", "encoder_layers", "decoder_layers", "num_queries",
                    "num_obj_classes", "num_actions", "channels", "grid_h", "grid_w", "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d % self.heads:
            raise ConfigurationError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.d % 4:
            raise ConfigurationError(f"d={self.d} must be divisible by 4 for the 2-D sine encoding")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigurationError("lr must be > 0 and weight_decay >= 0")
        for name in ("lambda_reg", "lambda_giou", "lambda_o", "lambda_a"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.link_mode not in LINK_MODES:
            raise ConfigurationError(f"unknown link_mode {self.link_mode!r}; expected one of {LINK_MODES}")
        if self.sg_target not in SG_TARGETS:
            raise ConfigurationError(f"unknown sg_target {self.sg_target!r}; expected one of {SG_TARGETS}")
        if not 0 < self.nms_threshold <= 1:
            raise ConfigurationError("nms_threshold must lie in (0, 1]")
        if not 0 < self.iou_threshold < 1:
            raise ConfigurationError("iou_threshold must lie in (0, 1)")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    @classmethod
    def full_scale(cls, **overrides):
        """Full-size settings: d=256, 8 heads, 6 layers everywhere, N=100."""
        base = dict(d=256, heads=8, encoder_layers=6, decoder_layers=6, num_queries=100, lr=1e-4)
        base.update(overrides)
        return cls(**base)


def _parse_value(kind, raw, key, lineno):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {key}", lineno) from None


def parse_config(text):
    types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ParseError(f"unknown config key {key!r}", lineno)
        if key in values:
            raise ParseError(f"duplicate config key {key!r}", lineno)
        values[key] = _parse_value(kinds[types[key]], raw, key, lineno)
    return RunConfig(**values)


def format_config(config):
    lines = ["# hodn run configuration"]
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path):
    return parse_config(Path(path).read_text())


def save_config(config, path):
    Path(path).write_text(format_config(config))
