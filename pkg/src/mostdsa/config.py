"""Run configuration: plain-text ``key = value`` files with strict validation.

Recognised keys (defaults in brackets)::

    n_interp        frames interpolated per group                    [1]
    r               context scope, odd; "auto" picks 29/29/21 by n_interp [auto]
    schedule        comma-separated times in (0, 1); "auto" uses the
                    per-n_interp default below                        [auto]
    channels        encoder channel ladder c0,c1,c2                   [16,32,64]
    dim             fused token width d (= k = v)                     [64]
    heads           attention heads splitting k and v                 [2]
    fme_width       flow-mask estimator conv width                    [64]
    refiner_widths  refiner UNet widths                               [32,64,128]
    pos_freqs       sinusoid frequencies per axis in the position basis [8]
    lr_peak         peak learning rate after warm-up                  [2e-4]
    lr_floor        final learning rate of the cosine decay           [2e-5]
    beta1, beta2    AdamW moment decays                               [0.9, 0.999]
    weight_decay    AdamW decoupled weight decay                      [1e-4]
    warmup_steps    linear warm-up length in optimizer steps          [200]
    epochs          training epochs                                   [30]
    groups_per_epoch  groups drawn per epoch, 0 = all                 [0]
    batch_size      groups per optimizer step                         [4]
    crop            square training crop side, multiple of 4          [64]
    static_frac     extra training groups made of one repeated frame, as a
                    fraction of the real group count (teaches identity
                    on still input)                                   [0.0]
    loss            "combined" (L1 + perceptual + style) or "l1"      [combined]
    seed            master seed                                       [0]
    data            dataset directory                                 []
    out             output path                                       []
"""

from __future__ import annotations

import math
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError

DEFAULT_SCHEDULES = {1: (0.5,), 2: (0.33, 0.67), 3: (0.25, 0.5, 0.75)}
DEFAULT_SCOPES = {1: 29, 2: 29, 3: 21}


def validate_schedule(ts) -> Tuple[float, ...]:
    ts = tuple(float(t) for t in ts)
    if not ts:
        raise ConfigError("time schedule is empty")
    for t in ts:
        if not 0.0 < t < 1.0:
            raise ConfigError(f"time {t} outside the open interval (0, 1)")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ConfigError(f"time schedule {list(ts)} must be strictly increasing without duplicates")
    return ts


def validate_scope(r: int) -> int:
    if not isinstance(r, int) or r < 1 or r % 2 == 0:
        raise ConfigError(
            f"context scope r={r!r} must be a positive odd integer so the neighbourhood is centred on the query"
        )
    return r


@dataclass
class Config:
    n_interp: int = 1
    r: Optional[int] = None
    schedule: Optional[Tuple[float, ...]] = None
    channels: Tuple[int, int, int] = (16, 32, 64)
    dim: int = 64
    heads: int = 2
    fme_width: int = 64
    refiner_widths: Tuple[int, int, int] = (32, 64, 128)
    pos_freqs: int = 8
    lr_peak: float = 2e-4
    lr_floor: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    warmup_steps: int = 200
    epochs: int = 30
    groups_per_epoch: int = 0
    batch_size: int = 4
    crop: int = 64
    static_frac: float = 0.0
    loss: str = "combined"
    seed: int = 0
    data: str = ""
    out: str = ""

    def __post_init__(self):
        self.validate()

    # -- derived ------------------------------------------------------------
    @property
    def scope(self) -> int:
        return self.r if self.r is not None else DEFAULT_SCOPES.get(self.n_interp, 21)

    @property
    def times(self) -> Tuple[float, ...]:
        if self.schedule is not None:
            return self.schedule
        if self.n_interp in DEFAULT_SCHEDULES:
            return DEFAULT_SCHEDULES[self.n_interp]
        n = self.n_interp
        return tuple(round((i + 1) / (n + 1), 4) for i in range(n))

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def validate(self) -> None:
        if self.n_interp < 1:
            raise ConfigError(f"n_interp must be >= 1, got {self.n_interp}")
        if self.r is not None:
            validate_scope(self.r)
        if self.schedule is not None:
            self.schedule = validate_schedule(self.schedule)
            if len(self.schedule) != self.n_interp:
                raise ConfigError(f"schedule has {len(self.schedule)} times but n_interp = {self.n_interp}")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError(f"channels must be three positive ints, got {self.channels}")
        if len(self.refiner_widths) != 3 or min(self.refiner_widths) < 1:
            raise ConfigError(f"refiner_widths must be three positive ints, got {self.refiner_widths}")
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} must split evenly across heads={self.heads}")
        if self.lr_peak <= 0 or self.lr_floor < 0 or self.lr_floor > self.lr_peak:
            raise ConfigError(f"need 0 <= lr_floor <= lr_peak and lr_peak > 0, got {self.lr_floor}, {self.lr_peak}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {b}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.crop < 8 or self.crop % 4:
            raise ConfigError(f"crop must be a multiple of 4 and >= 8, got {self.crop}")
        if not (math.isfinite(self.static_frac) and 0.0 <= self.static_frac <= 4.0):
            raise ConfigError(f"static_frac must lie in [0, 4], got {self.static_frac}")
        if self.loss not in ("combined", "l1"):
            raise ConfigError(f"loss must be 'combined' or 'l1', got {self.loss!r}")
        for name in ("warmup_steps", "groups_per_epoch"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("epochs", "batch_size", "fme_width", "pos_freqs", "dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    # -- text format ----------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {_format(value)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, **overrides) -> "Config":
        values = parse_pairs(text)
        values.update({k: v for k, v in overrides.items()})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "Config":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, known[key])
        return cls(**kwargs)

    @classmethod
    def load(cls, path, **overrides) -> "Config":
        return cls.from_text(Path(path).read_text(), **overrides)

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


def parse_pairs(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


_INT_TUPLES = {"channels", "refiner_widths"}


def _coerce(key: str, raw, f: dataclasses.Field):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key in ("r", "schedule") and raw.lower() in ("auto", "none", ""):
            return None
        if key == "schedule":
            return tuple(float(s) for s in raw.split(",") if s.strip())
        if key in _INT_TUPLES:
            return tuple(int(s) for s in raw.split(","))
        if key == "r":
            return int(raw)
        default = f.default
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse value {raw!r}") from None


# Desk-scale preset used by the default toy run.
TOY = dict(
    channels=(8, 16, 32),
    dim=32,
    heads=2,
    fme_width=32,
    refiner_widths=(16, 32, 64),
    pos_freqs=4,
    lr_peak=5e-4,
    lr_floor=2e-5,
    warmup_steps=50,
    epochs=6,
    groups_per_epoch=0,
    batch_size=8,
    crop=64,
    loss="l1",
)

# Still targets per real training group in the toy preset. A still group
# carries n_interp targets, so the fraction of still groups is 3 / n_interp.
TOY_STILL_TARGETS = 3.0


def toy_config(**overrides) -> Config:
    values = dict(TOY)
    values["static_frac"] = TOY_STILL_TARGETS / overrides.get("n_interp", 1)
    values.update(overrides)
    return Config(**values)
