"""
U-shaped enhancement network: encoder stages with max-pool downsampling,
decoder stages with bilinear upsampling and concatenated skips, every block
built from an axial depthwise convolution, a pointwise mix, an activation
and channel attention.
"""
import logging
from dataclasses import dataclass, fields
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from src.data.image_io import denormalize, normalize, pad_to_multiple
from src.errors import ShapeError
from src.schemas import FlopReport, LayerRow, NetworkConfig
from src.tensor import (
    ConvSpec,
    Tensor,
    activation,
    axial_depthwise,
    concat_channels,
    conv2d,
    downsample_max2,
    global_avg_pool,
    mul,
    no_grad,
    pointwise,
    upsample_bilinear2,
)

logger = logging.getLogger(__name__)


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor

    @property
    def spec(self) -> ConvSpec:
        c_out, c_in, kh, kw = self.weight.shape
        return ConvSpec(c_in, c_out, kh, kw, padding=kh // 2)


@dataclass
class PointwiseParams:
    weight: Tensor
    bias: Tensor


@dataclass
class CALayerParams:
    squeeze_weight: Tensor
    squeeze_bias: Tensor
    excite_weight: Tensor
    excite_bias: Tensor

    @property
    def channels(self) -> int:
        return self.excite_weight.shape[0]

    @property
    def hidden(self) -> int:
        return self.squeeze_weight.shape[0]


@dataclass
class BlockParams:
    h_weight: Tensor
    v_weight: Tensor
    pointwise: PointwiseParams
    ca: CALayerParams

    @property
    def in_channels(self) -> int:
        return self.h_weight.shape[0]

    @property
    def out_channels(self) -> int:
        return self.pointwise.weight.shape[0]

    @property
    def kernel(self) -> int:
        return self.h_weight.shape[3]


def calayer(x: Tensor, params: CALayerParams) -> Tensor:
    """Gate each channel by sigmoid(excite(relu(squeeze(avgpool(x)))))."""
    n, c, h, w = x.dims
    if c != params.channels:
        raise ShapeError(f"channel attention for {params.channels} channels got input {x.shape}")
    pooled = global_avg_pool(x)
    hidden = activation(pointwise(pooled, params.squeeze_weight, params.squeeze_bias), "relu")
    gates = activation(pointwise(hidden, params.excite_weight, params.excite_bias), "sigmoid")
    return mul(x, gates)


def encoder_block(x: Tensor, params: BlockParams, act: str = "relu") -> Tensor:
    if x.dims[1] != params.in_channels:
        raise ShapeError(f"block expects {params.in_channels} channels, got input {x.shape}")
    mixed = pointwise(axial_depthwise(x, params.h_weight, params.v_weight), params.pointwise.weight, params.pointwise.bias)
    return calayer(activation(mixed, act), params.ca)


def decoder_block(x: Tensor, skip: Tensor, params: BlockParams, act: str = "relu") -> Tensor:
    up = upsample_bilinear2(x)
    if up.shape[2:] != skip.dims[2:]:
        raise ShapeError(f"upsampled decoder input {up.shape} does not match skip {skip.shape}")
    return encoder_block(concat_channels(up, skip), params, act)


def _block_macs(params: BlockParams, h: int, w: int) -> Tuple[int, int]:
    hw = h * w
    spatial = 2 * params.kernel * params.in_channels * hw + params.in_channels * params.out_channels * hw
    mlp = 2 * params.ca.channels * params.ca.hidden
    return spatial + mlp, mlp


def _conv_macs(params: ConvParams, h: int, w: int) -> int:
    c_out, c_in, kh, kw = params.weight.shape
    return c_out * c_in * kh * kw * h * w


class Network:
    """
    Parameter container plus forward pass.

    Parameters are registered under stable hierarchical names
    (`encoders.0.axial.h_weight`, `decoders.3.ca.excite.bias`, ...) in
    construction order; that order is also the initialization and
    serialization order.
    """

    def __init__(self, config: NetworkConfig, dtype: np.dtype = np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: Dict[str, Tensor] = {}
        widths = config.stage_widths

        self.stem: Optional[ConvParams] = None
        if config.stem_kernel:
            self.stem = self._conv("stem", config.input_channels, widths[0], config.stem_kernel)
        in_channels = widths[0] if self.stem is not None else config.input_channels

        self.encoders: List[BlockParams] = []
        for i, width in enumerate(widths):
            self.encoders.append(self._block(f"encoders.{i}", in_channels, width))
            in_channels = width
        self.decoders: List[BlockParams] = [
            self._block(f"decoders.{i}", 2 * width, widths[max(i - 1, 0)]) for i, width in enumerate(widths)
        ]

        self.refine: Optional[ConvParams] = None
        if config.refine_kernel:
            self.refine = self._conv("refine", widths[0], widths[0], config.refine_kernel)
        self.head = PointwiseParams(
            self._param("head.weight", (config.output_channels, widths[0])),
            self._param("head.bias", (config.output_channels,)),
        )

    def _param(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        tensor = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = tensor
        return tensor

    def _conv(self, name: str, c_in: int, c_out: int, kernel: int) -> ConvParams:
        return ConvParams(
            self._param(f"{name}.weight", (c_out, c_in, kernel, kernel)),
            self._param(f"{name}.bias", (c_out,)),
        )

    def _block(self, name: str, c_in: int, c_out: int) -> BlockParams:
        k = self.config.axial_k
        hidden = c_out // self.config.ca_reduction
        return BlockParams(
            h_weight=self._param(f"{name}.axial.h_weight", (c_in, 1, 1, k)),
            v_weight=self._param(f"{name}.axial.v_weight", (c_in, 1, k, 1)),
            pointwise=PointwiseParams(
                self._param(f"{name}.pointwise.weight", (c_out, c_in)),
                self._param(f"{name}.pointwise.bias", (c_out,)),
            ),
            ca=CALayerParams(
                self._param(f"{name}.ca.squeeze.weight", (hidden, c_out)),
                self._param(f"{name}.ca.squeeze.bias", (hidden,)),
                self._param(f"{name}.ca.excite.weight", (c_out, hidden)),
                self._param(f"{name}.ca.excite.bias", (c_out,)),
            ),
        )

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def state(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.params.items()}

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        for name, tensor in self.params.items():
            tensor.data = np.array(arrays[name], dtype=self.dtype, order="C", copy=True)

    def forward(self, batch: Tensor) -> Tensor:
        n, c, h, w = batch.dims
        cfg = self.config
        if c != cfg.input_channels:
            raise ShapeError(f"network expects {cfg.input_channels} input channels, got {batch.shape}")
        divisor = cfg.divisor
        if h % divisor or w % divisor:
            raise ShapeError(f"input {h}x{w} must be divisible by {divisor} (2^{len(cfg.stage_widths)} stages)")
        x = batch
        if self.stem is not None:
            x = activation(conv2d(x, self.stem.weight, self.stem.bias, self.stem.spec), cfg.activation)

        skips = []
        for params in self.encoders:
            x = encoder_block(x, params, cfg.activation)
            skips.append(x)
            x = downsample_max2(x)
        for i in reversed(range(len(self.decoders))):
            x = decoder_block(x, skips[i], self.decoders[i], cfg.activation)

        if self.refine is not None:
            x = activation(conv2d(x, self.refine.weight, self.refine.bias, self.refine.spec), cfg.activation)
        x = pointwise(x, self.head.weight, self.head.bias)
        return activation(x, cfg.output_activation)

    __call__ = forward

    def layer_table(self, height: int, width: int) -> List[LayerRow]:
        """Per-layer parameter shapes, parameter counts and MACs at height×width."""
        rows: List[LayerRow] = []

        def shapes(tensors: List[Tensor]) -> List[List[int]]:
            return [list(t.shape) for t in tensors]

        def count(tensors: List[Tensor]) -> int:
            return sum(t.size for t in tensors)

        if self.stem is not None:
            tensors = parameter_fields(self.stem)
            rows.append(LayerRow(name="stem", shapes=shapes(tensors), params=count(tensors),
                                 macs=_conv_macs(self.stem, height, width)))
        for stage, params in enumerate(self.encoders):
            tensors = parameter_fields(params)
            macs, _ = _block_macs(params, height >> stage, width >> stage)
            rows.append(LayerRow(name=f"encoders.{stage}", shapes=shapes(tensors), params=count(tensors), macs=macs))
        for stage in reversed(range(len(self.decoders))):
            params = self.decoders[stage]
            tensors = parameter_fields(params)
            macs, _ = _block_macs(params, height >> stage, width >> stage)
            rows.append(LayerRow(name=f"decoders.{stage}", shapes=shapes(tensors), params=count(tensors), macs=macs))
        if self.refine is not None:
            tensors = parameter_fields(self.refine)
            rows.append(LayerRow(name="refine", shapes=shapes(tensors), params=count(tensors),
                                 macs=_conv_macs(self.refine, height, width)))
        c_out, c_in = self.head.weight.shape
        tensors = parameter_fields(self.head)
        rows.append(LayerRow(name="head", shapes=shapes(tensors), params=count(tensors),
                             macs=c_out * c_in * height * width))
        return rows

    def to_dtype(self, dtype: np.dtype) -> "Network":
        copy = Network(self.config, dtype)
        copy.load_state(self.state())
        return copy


def init_params(config: NetworkConfig, seed: int, dtype: np.dtype = np.float32) -> Network:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases, drawn in parameter order."""
    net = Network(config, dtype)
    rng = np.random.default_rng(seed)
    for name, tensor in net.named_parameters():
        if name.endswith("bias"):
            continue
        shape = tensor.shape
        if name.endswith("axial.h_weight") or name.endswith("axial.v_weight"):
            fan_in = config.axial_k
        else:
            fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        tensor.data = rng.uniform(-bound, bound, size=shape).astype(net.dtype)
    logger.debug(f"Initialized {count_params(net)} parameters with seed {seed}")
    return net


def forward(net: Network, batch: Tensor) -> Tensor:
    return net.forward(batch)


def count_params(net: Network) -> int:
    return sum(tensor.size for tensor in net.parameters())


def count_flops(net: Network, height: int, width: int) -> FlopReport:
    """MAC totals for one height×width image; pooling and activations are not counted."""
    mlp = sum(_block_macs(params, 1, 1)[1] for params in net.encoders + net.decoders)
    macs = sum(row.macs for row in net.layer_table(height, width))
    return FlopReport(height=height, width=width, macs=macs, mlp_macs=mlp)


def enhance_image(net: Network, img: np.ndarray) -> np.ndarray:
    """
    Enhance one H×W×3 [0,1] image of any size: edge-pad to the stage divisor,
    run the network without a tape, crop back.
    """
    h, w = img.shape[:2]
    padded = pad_to_multiple(img, net.config.divisor)
    batch = Tensor(normalize(padded)[None].astype(net.dtype))
    with no_grad():
        out = forward(net, batch).data[0]
    return denormalize(out)[:h, :w]


def parameter_fields(params: object) -> List[Tensor]:
    """Flatten a params dataclass (nested dataclasses included) into its tensors."""
    tensors: List[Tensor] = []
    for field in fields(params):
        value = getattr(params, field.name)
        if isinstance(value, Tensor):
            tensors.append(value)
        else:
            tensors.extend(parameter_fields(value))
    return tensors
