"""Network and training configuration, plus the ``key = value`` file format.

Config files are UTF-8 text, one ``key = value`` per line; blank lines and
``#`` comments are skipped; unknown keys are errors.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError
from .losses import LossWeights


def parse_kv_file(path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigurationError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {s!r}")


def _parse_int_tuple(s: str) -> tuple:
    return tuple(int(v) for v in s.replace(",", " ").split())


@dataclass
class NetworkConfig:
    """Wiring for the parsing network; strides are fixed at (1, 2, 2, 2)."""

    stage_widths: tuple = (16, 32, 48, 64)
    parsing_channels: int = 32      # C
    compress_dim: int = 8           # N (paper-scale default would be 64)
    expand_dim: int = 8             # D (paper-scale default would be 64)
    gc_kernel: int = 7
    ppm_bins: tuple = (1, 2, 3, 6)
    num_classes: int = 7
    num_joints: int = 6
    boundary_reduce: int = 16
    shuffle_groups: int = 4
    enable_lcm: bool = True
    enable_gem: bool = True

    def __post_init__(self):
        if len(self.stage_widths) != 4 or any(w < 1 for w in self.stage_widths):
            raise ConfigurationError(f"need four positive stage widths, got {self.stage_widths}")
        if self.gc_kernel % 2 == 0 or self.gc_kernel < 1:
            raise ConfigurationError(f"gc_kernel must be odd and positive, got {self.gc_kernel}")
        if self.stage_widths[3] % len(self.ppm_bins) != 0:
            raise ConfigurationError(
                f"stage width {self.stage_widths[3]} must divide into {len(self.ppm_bins)} pyramid branches")
        if self.parsing_channels < 1 or self.compress_dim < 1 or self.expand_dim < 1:
            raise ConfigurationError("parsing_channels, compress_dim and expand_dim must be positive")
        skel_in = sum(self.stage_widths)
        if self.enable_lcm and skel_in % self.shuffle_groups != 0:
            raise ConfigurationError(
                f"shuffle_groups {self.shuffle_groups} does not divide the {skel_in} stacked skeleton channels")


@dataclass
class TrainConfig:
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 8
    total_iters: int = 600
    warmup_iters: int = 50
    poly_power: float = 0.9
    seed: int = 0
    augment_flip: bool = True
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if not 0 <= self.warmup_iters < self.total_iters:
            raise ConfigurationError(
                f"need 0 <= warmup_iters < total_iters, got {self.warmup_iters} and {self.total_iters}")
        if self.poly_power <= 0:
            raise ConfigurationError(f"poly_power must be positive, got {self.poly_power}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.base_lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigurationError("base_lr, momentum and weight_decay must be nonnegative")


_NET_PARSERS = {
    "stage_widths": _parse_int_tuple,
    "parsing_channels": int,
    "compress_dim": int,
    "expand_dim": int,
    "gc_kernel": int,
    "ppm_bins": _parse_int_tuple,
    "num_classes": int,
    "num_joints": int,
    "boundary_reduce": int,
    "shuffle_groups": int,
    "enable_lcm": _parse_bool,
    "enable_gem": _parse_bool,
}

_TRAIN_PARSERS = {
    "base_lr": float,
    "momentum": float,
    "weight_decay": float,
    "batch_size": int,
    "total_iters": int,
    "warmup_iters": int,
    "poly_power": float,
    "seed": int,
    "augment_flip": _parse_bool,
}

_LOSS_PARSERS = {
    "alpha": float,
    "beta": float,
    "ohem_keep_fraction": float,
    "ohem_min_kept": int,
    "boundary_pos_weight_mode": str,
    "boundary_fixed_pos_weight": float,
}


def _apply(parsers, raw: dict, path) -> dict:
    parsed = {}
    for key, value in raw.items():
        if key not in parsers:
            raise ConfigurationError(f"{path}: unknown key {key!r}")
        try:
            parsed[key] = parsers[key](value)
        except (ValueError, ConfigurationError) as exc:
            raise ConfigurationError(f"{path}: bad value for {key!r}: {exc}") from None
    return parsed


def load_network_config(path) -> NetworkConfig:
    return NetworkConfig(**_apply(_NET_PARSERS, parse_kv_file(path), path))


def load_train_config(path) -> TrainConfig:
    raw = parse_kv_file(path)
    loss_raw = {k: raw.pop(k) for k in list(raw) if k in _LOSS_PARSERS}
    kwargs = _apply(_TRAIN_PARSERS, raw, path)
    kwargs["loss"] = LossWeights(**_apply(_LOSS_PARSERS, loss_raw, path))
    return TrainConfig(**kwargs)


def dump_network_config(cfg: NetworkConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
