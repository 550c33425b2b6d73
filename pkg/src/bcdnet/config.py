"""Flat experiment configuration with strict JSON round-tripping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attention import ATTENTION_VARIANTS
from .backbone import BackboneConfig
from .spatial import gamma_band
from .supervision import SUPERVISION_VARIANTS


class ConfigValidationError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))


@dataclass
class ExperimentConfig:
    seed: int = 0
    # architecture
    num_parts: int = 6
    input_height: int = 96
    input_width: int = 32
    downsample: int = 8
    backbone_channels: int = 64
    subnet_width: int = 512
    reduction: int = 16
    # hyper-parameters
    beta: float = 0.25
    gamma: float = 0.20
    alpha: float = 0.20
    lambda1: float = 1.0
    lambda2: float = 1.0
    P: int = 6
    A: int = 8
    # optimisation
    epochs: int = 30
    batches_per_epoch: int = 0  # 0: one pass worth of images per epoch
    lr: float = 0.01
    lr_milestones: list[int] = field(default_factory=lambda: [12, 24])
    lr_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    random_erase: float = 0.5
    flip: bool = True
    # ablation toggles
    extra_stripe_subnets: bool = True
    channel_attention: bool = True
    use_bcca_loss: bool = True
    use_part_reg: bool = True
    use_holistic_reg: bool = True
    supervision_variant: str = "batch"
    attention_variant: str = "standard"
    hard_label: bool = False
    # synthetic data
    num_train_ids: int = 32
    imgs_per_train_id: int = 16
    num_test_ids: int = 16
    imgs_per_test_id: int = 8
    num_cameras: int = 6
    max_shift: int = 12
    data_seed: int = 0

    # -- derived -----------------------------------------------------------
    @property
    def batch_size(self) -> int:
        return self.P * self.A

    @property
    def feature_height(self) -> int:
        return self.input_height // self.downsample

    @property
    def effective_gamma(self) -> float:
        return self.num_parts / self.feature_height if self.hard_label else self.gamma

    def backbone(self) -> BackboneConfig:
        return BackboneConfig.for_grid(
            self.input_height, self.input_width, self.downsample, self.backbone_channels, seed=self.seed
        )

    # -- validation ----------------------------------------------------------
    def validate(self) -> list[str]:
        errors = []
        d = self.downsample
        if d < 2 or d & (d - 1):
            errors.append(f"downsample {d} must be a power of two >= 2")
        elif self.input_height % d or self.input_width % d:
            errors.append(f"input {self.input_height}x{self.input_width} is not divisible by downsample {d}")
        elif self.feature_height % self.num_parts:
            errors.append(f"feature height {self.feature_height} is not divisible by num_parts={self.num_parts}")
        elif not self.hard_label:
            lo, hi = gamma_band(self.num_parts, self.feature_height)
            if not lo <= self.gamma <= hi:
                errors.append(f"gamma={self.gamma} outside the feasible band [{lo:.6g}, {hi:.6g}]")
        if self.num_parts < 1:
            errors.append("num_parts must be >= 1")
        if self.backbone_channels % self.reduction:
            errors.append(f"backbone_channels={self.backbone_channels} not divisible by reduction={self.reduction}")
        if not 0 < self.beta <= 1:
            errors.append(f"beta={self.beta} must lie in (0, 1]")
        if self.P < 2:
            errors.append(f"P={self.P} must be >= 2 (triplets need negatives)")
        if self.A < 1:
            errors.append(f"A={self.A} must be >= 1")
        if self.P > self.num_train_ids:
            errors.append(f"P={self.P} exceeds num_train_ids={self.num_train_ids}")
        if self.lr <= 0:
            errors.append("lr must be positive")
        if self.epochs < 0:
            errors.append("epochs must be >= 0")
        if self.supervision_variant not in SUPERVISION_VARIANTS:
            errors.append(f"supervision_variant must be one of {SUPERVISION_VARIANTS}")
        if self.attention_variant not in ATTENTION_VARIANTS:
            errors.append(f"attention_variant must be one of {ATTENTION_VARIANTS}")
        if self.use_bcca_loss and not self.channel_attention:
            errors.append("use_bcca_loss requires channel_attention")
        if not 0 <= self.random_erase <= 1:
            errors.append("random_erase must lie in [0, 1]")
        if self.max_shift < 0 or self.max_shift >= self.input_height:
            errors.append(f"max_shift must lie in [0, {self.input_height})")
        if self.num_test_ids < 2 or self.num_train_ids < 2:
            errors.append("need at least 2 train and 2 test identities")
        return errors

    def check(self) -> "ExperimentConfig":
        errors = self.validate()
        if errors:
            raise ConfigValidationError(errors)
        return self

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha1(canonical.encode()).hexdigest()[:12]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        errors = [f"unknown key {k!r}" for k in data if k not in known]
        values = {}
        for key, value in data.items():
            if key not in known:
                continue
            default = known[key].default
            if default is dataclasses.MISSING:
                default = known[key].default_factory()  # type: ignore[misc]
            try:
                values[key] = _coerce(value, default)
            except (TypeError, ValueError):
                errors.append(f"{key}: cannot use {value!r} as {type(default).__name__}")
        if errors:
            raise ConfigValidationError(errors)
        return cls(**values)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def replace(self, **changes) -> "ExperimentConfig":
        return self.from_dict({**self.to_dict(), **changes})


def _coerce(value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise TypeError
    if isinstance(default, int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise TypeError
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool):
            raise TypeError
        return float(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return [int(v) for v in value]
    if isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError
        return value
    return value


# Table-I style rows plus the supervision / attention / label variants.
ABLATION_ROWS: dict[str, dict] = {
    "baseline": dict(extra_stripe_subnets=False, channel_attention=False, use_bcca_loss=False,
                     use_part_reg=False, use_holistic_reg=False),
    "baseline+": dict(extra_stripe_subnets=True, channel_attention=False, use_bcca_loss=False,
                      use_part_reg=False, use_holistic_reg=False),
    "ca": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=False,
               use_part_reg=False, use_holistic_reg=False),
    "bcca": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=True,
                 use_part_reg=False, use_holistic_reg=False),
    "part-reg": dict(extra_stripe_subnets=True, channel_attention=False, use_bcca_loss=False,
                     use_part_reg=True, use_holistic_reg=False),
    "holistic-reg": dict(extra_stripe_subnets=True, channel_attention=False, use_bcca_loss=False,
                         use_part_reg=False, use_holistic_reg=True),
    "regs": dict(extra_stripe_subnets=True, channel_attention=False, use_bcca_loss=False,
                 use_part_reg=True, use_holistic_reg=True),
    "full": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=True,
                 use_part_reg=True, use_holistic_reg=True),
    "one-hot": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=True,
                    use_part_reg=False, use_holistic_reg=False, supervision_variant="one_hot"),
    "no-filtration": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=True,
                          use_part_reg=False, use_holistic_reg=False, supervision_variant="no_filtration"),
    "variant1": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=True,
                     use_part_reg=False, use_holistic_reg=False, attention_variant="variant1"),
    "variant2": dict(extra_stripe_subnets=True, channel_attention=True, use_bcca_loss=True,
                     use_part_reg=False, use_holistic_reg=False, attention_variant="variant2"),
    "hard-label": dict(extra_stripe_subnets=True, channel_attention=False, use_bcca_loss=False,
                       use_part_reg=True, use_holistic_reg=True, hard_label=True),
}


def ablation_config(base: ExperimentConfig, row: str) -> ExperimentConfig:
    if row not in ABLATION_ROWS:
        raise ConfigValidationError([f"unknown ablation row {row!r}; choose from {sorted(ABLATION_ROWS)}"])
    return base.replace(**ABLATION_ROWS[row])
