import math
from datetime import datetime
from typing import Any, Dict, List, Optional, Type, TypeVar

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError

ACTIVATION_KINDS = ("relu", "sigmoid", "tanh", "identity")

ModelT = TypeVar("ModelT", bound=BaseModel)


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def parse_model(model: Type[ModelT], data: Dict[str, Any]) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or model.__name__
        raise ConfigError(f"{model.__name__}.{field}: {first['msg']}") from e


class NetworkConfig(BaseModel):
    stage_widths: List[int] = Field(default_factory=lambda: [32, 64, 128, 256])
    axial_k: int = 7
    ca_reduction: int = 8
    activation: str = "relu"
    output_activation: str = "tanh"
    input_channels: int = 3
    output_channels: int = 3
    stem_kernel: int = 3
    refine_kernel: int = 3

    @field_validator("stage_widths", mode="before")
    @classmethod
    def split_widths(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("stage_widths")
    @classmethod
    def check_widths(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("stage_widths must not be empty")
        if any(width < 1 for width in value):
            raise ValueError("stage widths must be positive")
        return value

    @field_validator("axial_k")
    @classmethod
    def check_axial_k(cls, value: int) -> int:
        if value < 3 or value % 2 == 0:
            raise ValueError("axial_k must be odd and >= 3")
        return value

    @field_validator("stem_kernel", "refine_kernel")
    @classmethod
    def check_optional_kernel(cls, value: int) -> int:
        if value != 0 and (value < 1 or value % 2 == 0):
            raise ValueError("kernel must be 0 (disabled) or a positive odd size")
        return value

    @field_validator("activation", "output_activation")
    @classmethod
    def check_activation(cls, value: str) -> str:
        if value not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {value!r}")
        return value

    @model_validator(mode="after")
    def check_reduction(self) -> "NetworkConfig":
        if self.ca_reduction < 1:
            raise ValueError("ca_reduction must be >= 1")
        for width in self.stage_widths:
            if width // self.ca_reduction < 1:
                raise ValueError(f"width {width} / ca_reduction {self.ca_reduction} leaves no hidden units")
        if self.input_channels < 1 or self.output_channels < 1:
            raise ValueError("input/output channel counts must be positive")
        return self

    @property
    def divisor(self) -> int:
        return 2 ** len(self.stage_widths)


class LossConfig(BaseModel):
    use_rgb: bool = True
    use_lab: bool = True
    use_lch: bool = True
    use_ssim: bool = True
    use_vgg: bool = False

    rgb_weight: float = 1.0
    lab_weight: float = 1.0
    lch_weight: float = 1.0
    ssim_weight: float = 1.0
    vgg_weight: float = 1.0

    lab_scale: List[float] = Field(default_factory=lambda: [1 / 100, 1 / 128, 1 / 128])
    lch_scale: List[float] = Field(default_factory=lambda: [1 / 100, 1 / 128, 1 / math.pi])

    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    ssim_data_range: float = 1.0

    vgg_weights: str = ""
    vgg_layers: List[int] = Field(default_factory=lambda: [2])

    @field_validator("lab_scale", "lch_scale", "vgg_layers", mode="before")
    @classmethod
    def split_lists(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("lab_scale", "lch_scale")
    @classmethod
    def check_scales(cls, value: List[float]) -> List[float]:
        if len(value) != 3:
            raise ValueError("channel scales need exactly three factors")
        return value

    @field_validator("ssim_window")
    @classmethod
    def check_window(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError("ssim_window must be odd")
        return value

    @field_validator("ssim_sigma")
    @classmethod
    def check_sigma(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("ssim_sigma must be positive")
        return value


class TrainConfig(BaseModel):
    epochs: int = Field(default=150, ge=0)
    lr0: float = Field(default=0.0005, gt=0)
    lr_decay: float = Field(default=0.8, gt=0, le=1)
    lr_step: int = Field(default=40, ge=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    eps: float = Field(default=1e-8, gt=0)
    batch_size: int = Field(default=8, ge=1)
    checkpoint_every: int = Field(default=10, ge=0)
    eval_every: int = Field(default=1, ge=0)
    seed: int = 0
    max_steps: Optional[int] = Field(default=None, ge=0)
    grad_clip: Optional[float] = Field(default=None, gt=0)


class DataConfig(BaseModel):
    image_size: int = Field(default=256, ge=1)
    split_ratio: float = Field(default=0.8, gt=0, lt=1)
    split_seed: int = 0
    prefetch_depth: int = Field(default=2, ge=1)
    workers: int = Field(default=1, ge=1)
    # keeps every decoded pair in memory for the whole run
    cache: bool = False


class RunConfig(BaseModel):
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)


class LossReport(BaseModel):
    l_rgb: float = 0.0
    l_lab: float = 0.0
    l_lch: float = 0.0
    l_ssim: float = 0.0
    l_vgg: Optional[float] = None
    total: float = 0.0

    def terms(self) -> Dict[str, float]:
        values = {"l_rgb": self.l_rgb, "l_lab": self.l_lab, "l_lch": self.l_lch, "l_ssim": self.l_ssim}
        if self.l_vgg is not None:
            values["l_vgg"] = self.l_vgg
        return values


class MetricRecord(BaseModel):
    image_id: str
    psnr: float
    ssim: float
    uciqe: float


class EpochRecord(BaseModel):
    epoch: int
    lr: float
    l_rgb: float
    l_lab: float
    l_lch: float
    l_ssim: float
    total: float
    test_psnr: Optional[float] = None
    test_ssim: Optional[float] = None


class BenchReport(BaseModel):
    height: int
    width: int
    threads: int
    iters: int
    warmup: int
    mean_ms: float
    p50_ms: float
    p95_ms: float
    fps: float
    params: int
    macs: int
    flops_1op: int
    flops_2op: int
    hardware: str
    max_abs_diff: Optional[float] = None
    speedup: Optional[float] = None


class RunManifest(BaseModel):
    command: str
    created_at: datetime = Field(default_factory=datetime.utcnow)
    config: Dict[str, Any] = Field(default_factory=dict)
    seeds: Dict[str, int] = Field(default_factory=dict)
    dataset_root: Optional[str] = None
    build_id: str = "unknown"
    hardware: str = ""
    timing: Dict[str, float] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    notes: Dict[str, Any] = Field(default_factory=dict)


class LayerRow(BaseModel):
    name: str
    shapes: List[List[int]]
    params: int
    macs: int


class FlopReport(BaseModel):
    height: int
    width: int
    macs: int
    mlp_macs: int

    @property
    def flops_1op(self) -> int:
        return self.macs

    @property
    def flops_2op(self) -> int:
        return 2 * self.macs

    @property
    def spatial_macs(self) -> int:
        return self.macs - self.mlp_macs


class ModelSummary(BaseModel):
    network: NetworkConfig
    params: int
    macs_256: int
    gflops_256: float
    divisor: int
    weights: Optional[str] = None
