import hashlib
import json
import math
from enum import Enum
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, computed_field, field_validator, model_validator

LR_CONSISTENCY_DB = 45.0


class Colorspace(str, Enum):
    RGB = "RGB"
    YCBCR = "YCbCr"
    Y = "Y"


class Domain(str, Enum):
    RGB = "RGB"
    SWT = "SWT"


class PerceptualKind(str, Enum):
    OFF = "off"
    FEATURE = "feature"


class GeneratorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    num_blocks: int = Field(2, ge=1)
    features: int = Field(16, ge=4)
    growth: int = Field(8, ge=1)
    scale: int = 4
    slope: float = 0.2
    residual_scale: float = 0.2
    # Multiplier on the He init of each dense block's last conv; 0 zeroes the branch.
    residual_init_scale: float = Field(0.1, ge=0.0)
    # Adds the bicubic x4 upscale of the input to the output.
    image_skip: bool = True
    output_init_scale: float = Field(0.1, ge=0.0)

    @field_validator("scale")
    @classmethod
    def _only_x4(cls, v: int) -> int:
        if v != 4:
            raise ValueError("only x4 super-resolution is supported")
        return v

    @classmethod
    def full(cls) -> "GeneratorConfig":
        return cls(num_blocks=23, features=64, growth=32, image_skip=False, output_init_scale=1.0)


class DiscriminatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    conv_layers: int = Field(5, ge=2)
    base_features: int = Field(8, ge=1)
    max_features: int = Field(64, ge=1)
    in_channels: int = 3
    input_size: int = Field(64, ge=4)
    hidden: int = Field(32, ge=1)
    batch_norm: bool = True
    # ReLU between the convs, LeakyReLU between the linear layers.
    conv_slope: float = Field(0.0, ge=0.0)
    slope: float = 0.2

    @field_validator("in_channels")
    @classmethod
    def _three_detail_channels(cls, v: int) -> int:
        if v != 3:
            raise ValueError("the discriminator reads exactly 3 channels (LH, HL, HH or RGB)")
        return v

    @model_validator(mode="after")
    def _input_survives_strides(self) -> "DiscriminatorConfig":
        stride2 = self.conv_layers // 2
        if self.input_size % (2 ** stride2) != 0:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by {2 ** stride2} "
                f"for {self.conv_layers} conv layers"
            )
        return self

    def widths(self) -> List[int]:
        return [min(self.base_features * 2 ** (i // 2), self.max_features) for i in range(self.conv_layers)]

    def kernels(self) -> List[int]:
        return [3 if i % 2 == 0 else 4 for i in range(self.conv_layers)]

    @classmethod
    def full(cls, input_size: int = 128) -> "DiscriminatorConfig":
        return cls(conv_layers=9, base_features=64, max_features=512, input_size=input_size, hidden=100)


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    subband: Dict[str, float]
    adv: float = Field(0.005, ge=0.0)
    perc: float = Field(1.0, ge=0.0)

    @field_validator("subband")
    @classmethod
    def _finite_non_negative(cls, v: Dict[str, float]) -> Dict[str, float]:
        for label, w in v.items():
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"weight for {label} must be finite and >= 0, got {w}")
        return v

    @field_validator("adv", "perc")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("weights must be finite")
        return v

    def scaled(self, factor: float) -> "LossWeights":
        return self.model_copy(update={"subband": {k: w * factor for k, w in self.subband.items()}})


def full_preset() -> Dict[str, object]:
    """Full-size networks and schedule, as plain values that config files can layer over."""
    return dict(
        patch_size=32,
        batch_size=16,
        lr_halving_step=50_000,
        iterations=60_000,
        generator=GeneratorConfig.full().model_dump(),
        discriminator=DiscriminatorConfig.full().model_dump(),
    )


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    patch_size: int = Field(16, ge=4)
    batch_size: int = Field(4, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    lr_halving_step: int = Field(500, gt=0)
    iterations: int = Field(1000, ge=0)
    pretrain_iters: int = Field(500, ge=0)
    beta1: float = Field(0.9, gt=0.0, lt=1.0)
    beta2: float = Field(0.999, gt=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    swt_levels: int = 1
    wavelet: str = "sym7"
    weights: Optional[LossWeights] = None
    fidelity_domain: Domain = Domain.SWT
    adv_domain: Domain = Domain.SWT
    perc_kind: PerceptualKind = PerceptualKind.FEATURE
    relativistic: bool = False
    l1_raw_sum: bool = False
    d_steps_per_g: int = Field(1, ge=1)
    train_discriminator: bool = True
    seed: int = 0
    perceptual_seed: int = 1234
    log_every: int = Field(100, ge=1)
    prefetch_workers: int = Field(2, ge=0)
    prefetch_depth: int = Field(4, ge=1)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = Field(default_factory=DiscriminatorConfig)

    @field_validator("swt_levels")
    @classmethod
    def _levels(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError("swt_levels must be 1 or 2")
        return v

    @model_validator(mode="after")
    def _fill_and_align(self) -> "TrainConfig":
        from .losses import default_weights
        from .wavelets import SUPPORTED_FAMILIES, labels_for

        if self.wavelet not in SUPPORTED_FAMILIES:
            raise ValueError(f"wavelet must be one of {', '.join(SUPPORTED_FAMILIES)}")
        if self.weights is None:
            self.weights = default_weights(self.swt_levels)
        elif set(self.weights.subband) != set(labels_for(self.swt_levels)):
            raise ValueError(
                f"weights keys {sorted(self.weights.subband)} do not match "
                f"level-{self.swt_levels} subbands {list(labels_for(self.swt_levels))}"
            )
        hr_size = self.patch_size * self.generator.scale
        if self.discriminator.input_size != hr_size:
            self.discriminator = self.discriminator.model_copy(update={"input_size": hr_size})
            DiscriminatorConfig.model_validate(self.discriminator.model_dump())
        return self

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    @classmethod
    def tiny(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "TrainConfig":
        return cls(**{**full_preset(), **overrides})


class EvalRecord(BaseModel):
    image: str
    psnr_y: float
    ssim_y: float
    lr_psnr: Optional[float] = None

    @computed_field
    @property
    def lr_consistent(self) -> Optional[bool]:
        if self.lr_psnr is None:
            return None
        return self.lr_psnr >= LR_CONSISTENCY_DB


class RunResult(BaseModel):
    success: bool
    message: str
    output_path: Optional[str] = None
    errors: Optional[List[str]] = None
    metrics: Optional[Dict[str, float]] = None
