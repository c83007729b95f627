"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

STRATEGIES = ("CD", "D", "C")


@dataclass
class TrainConfig:
    # optimisation
    batch_size: int = 32
    lr0: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    epochs: int = 500
    iters_per_epoch: int = 1000
    lr_halving_period: int = 125
    max_steps: int = 0  # 0 -> epochs * iters_per_epoch
    pretrain_encoder_epochs: int = 0
    seed: int = 0
    # data
    scale: int = 2
    noise_max: float = 0.0
    positive_strategy: str = "CD"
    lr_patch_size: int = 48
    kernel_size: int = 21
    # ablation switches
    use_LPE_P: bool = True
    use_LPE_L: bool = True
    use_DQA: bool = True
    use_CSC: bool = True
    fusion: str = "DQA"  # applies when use_DQA; otherwise DynConv
    # architecture
    embed_dim: int = 256
    codebook_length: int = 1024
    patch_size: int = 8
    patch_channels: int = 64
    pixel_channels: int = 64
    depth_patch: int = 4
    depth_pixel: int = 5
    num_blocks: int = 10
    trunk_channels: int = 64
    growth_channels: int = 32
    dyn_kernel_size: int = 3
    # contrastive
    queue_size: int = 8192
    tau: float = 0.07
    momentum: float = 0.999
    include_positive_in_denominator: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        positive = ["batch_size", "epochs", "iters_per_epoch", "lr_halving_period", "lr_patch_size",
                    "embed_dim", "codebook_length", "patch_size", "trunk_channels", "growth_channels",
                    "queue_size", "kernel_size"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr0 < 0 or self.tau <= 0 or self.noise_max < 0:
            raise ValueError("lr0, tau and noise_max must be non-negative (tau > 0)")
        if self.num_blocks < 0 or self.max_steps < 0 or self.pretrain_encoder_epochs < 0:
            raise ValueError("num_blocks, max_steps, pretrain_encoder_epochs must be >= 0")
        if self.scale not in (2, 3, 4):
            raise ValueError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.positive_strategy not in STRATEGIES:
            raise ValueError(f"positive_strategy must be one of {STRATEGIES}")
        if self.fusion not in ("DQA", "AdaIN", "DynConv"):
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if not (self.use_LPE_P or self.use_LPE_L):
            raise ValueError("at least one of use_LPE_P / use_LPE_L must be on")
        if self.lr_patch_size % self.patch_size:
            raise ValueError("patch_size must divide lr_patch_size")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")

    @property
    def sr_fusion(self):
        return self.fusion if self.use_DQA else "DynConv"

    @property
    def total_steps(self):
        return self.max_steps or self.epochs * self.iters_per_epoch

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


def desk_config(**overrides) -> TrainConfig:
    """Workstation-sized preset; every acceptance run starts from here."""
    base = dict(
        trunk_channels=32, growth_channels=16, num_blocks=4,
        embed_dim=64, codebook_length=128, queue_size=512, batch_size=8, lr_patch_size=32,
        patch_channels=32, pixel_channels=32, iters_per_epoch=50, lr0=2e-4,
    )
    base.update(overrides)
    return TrainConfig(**base)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _parse_value(name, text):
    kind = _TYPES[name]
    if isinstance(kind, str):
        kind = {"int": int, "float": float, "bool": bool, "str": str}[kind]
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {text!r}")
    if kind is int:
        return int(text)
    return kind(text)


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_value(key, value)
    base = base or TrainConfig()
    return dataclasses.replace(base, **values)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config_text(Path(path).read_text(), base)


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())


def apply_overrides(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    clean = {}
    for k, v in overrides.items():
        if k not in _TYPES:
            raise ValueError(f"unknown config key {k!r}")
        clean[k] = _parse_value(k, v) if isinstance(v, str) else v
    return dataclasses.replace(cfg, **clean)


def field_types():
    return dict(_TYPES)
