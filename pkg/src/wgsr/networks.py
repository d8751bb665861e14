"""
RGB-domain generator (reduced RRDB) and SWT-domain discriminator.
"""
import logging
from typing import List, Mapping, Union

import numpy as np

from .autodiff import (
    DiffTensor,
    ParameterSet,
    add,
    as_tensor,
    batch_norm,
    concat_channels,
    conv2d,
    flatten,
    leaky_relu,
    linear,
    mul,
    nearest_upsample,
    sub,
)
from .errors import ShapeError, SubbandMismatchError
from .imaging import bicubic_resize_batch
from .models import DiscriminatorConfig, GeneratorConfig
from .wavelets import DETAIL_LABELS, SubbandSet

logger = logging.getLogger(__name__)

DENSE_LAYERS = 5
DENSE_BLOCKS_PER_RRDB = 3


def _he_normal(rng: np.random.Generator, shape, scale: float = 1.0) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in) * scale


def _add_conv(params: ParameterSet, rng: np.random.Generator, name: str, c_in: int, c_out: int, k: int, scale: float = 1.0):
    params.add(f"{name}.weight", _he_normal(rng, (c_out, c_in, k, k), scale))
    params.add(f"{name}.bias", np.zeros(c_out))


def _conv(params: ParameterSet, name: str, x: DiffTensor, stride: int = 1, padding: int = 1) -> DiffTensor:
    return conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=padding)


class Generator:
    """
    x4 RRDB-style generator: dense residual blocks, global feature skip, two
    nearest+conv upsamplers. With ``image_skip`` the network predicts a
    residual on top of the bicubic x4 upscale of its input.
    """

    def __init__(self, cfg: GeneratorConfig, params: ParameterSet):
        self.cfg = cfg
        self.params = params

    def _dense_block(self, prefix: str, x: DiffTensor) -> DiffTensor:
        features = [x]
        for i in range(DENSE_LAYERS - 1):
            out = _conv(self.params, f"{prefix}.conv{i}", concat_channels(features))
            features.append(leaky_relu(out, self.cfg.slope))
        out = _conv(self.params, f"{prefix}.conv{DENSE_LAYERS - 1}", concat_channels(features))
        return add(x, mul(out, self.cfg.residual_scale))

    def _rrdb(self, prefix: str, x: DiffTensor) -> DiffTensor:
        out = x
        for j in range(DENSE_BLOCKS_PER_RRDB):
            out = self._dense_block(f"{prefix}.db{j}", out)
        # Only the residual is scaled, so zeroed branches leave x untouched.
        return add(x, mul(sub(out, x), self.cfg.residual_scale))

    def trunk(self, fea: DiffTensor) -> DiffTensor:
        """The chain of RRDBs between conv_first and trunk_conv."""
        for i in range(self.cfg.num_blocks):
            fea = self._rrdb(f"rrdb{i}", fea)
        return fea

    def __call__(self, x: Union[DiffTensor, np.ndarray]) -> DiffTensor:
        x = as_tensor(x, dtype=np.float32)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError("Generator expects (B, 3, H, W) input", x.shape)
        fea = _conv(self.params, "conv_first", x)
        fea = add(fea, _conv(self.params, "trunk_conv", self.trunk(fea)))
        for stage in ("upconv1", "upconv2"):
            fea = leaky_relu(_conv(self.params, stage, nearest_upsample(fea, 2)), self.cfg.slope)
        fea = leaky_relu(_conv(self.params, "hr_conv", fea), self.cfg.slope)
        out = _conv(self.params, "conv_last", fea)
        if self.cfg.image_skip:
            out = add(out, bicubic_resize_batch(x.values, self.cfg.scale))
        return out

    forward = __call__


def build_generator(cfg: GeneratorConfig, rng_seed: int) -> Generator:
    rng = np.random.default_rng(rng_seed)
    params = ParameterSet()
    nf, gc = cfg.features, cfg.growth
    _add_conv(params, rng, "conv_first", 3, nf, 3)
    for i in range(cfg.num_blocks):
        for j in range(DENSE_BLOCKS_PER_RRDB):
            prefix = f"rrdb{i}.db{j}"
            for k in range(DENSE_LAYERS - 1):
                _add_conv(params, rng, f"{prefix}.conv{k}", nf + k * gc, gc, 3)
            _add_conv(params, rng, f"{prefix}.conv{DENSE_LAYERS - 1}", nf + (DENSE_LAYERS - 1) * gc, nf, 3,
                      scale=cfg.residual_init_scale)
    _add_conv(params, rng, "trunk_conv", nf, nf, 3)
    _add_conv(params, rng, "upconv1", nf, nf, 3)
    _add_conv(params, rng, "upconv2", nf, nf, 3)
    _add_conv(params, rng, "hr_conv", nf, nf, 3)
    _add_conv(params, rng, "conv_last", nf, 3, 3, scale=cfg.output_init_scale)
    logger.info(
        "Built generator: %d RRDB blocks, %d features, %d parameters",
        cfg.num_blocks, nf, params.num_elements(),
    )
    return Generator(cfg, params)


class Discriminator:
    """
    Alternating 3x3/stride-1 and 4x4/stride-2 convs with batch norm and ReLU
    (``conv_slope`` 0) between them, then two linear layers with LeakyReLU
    between them to one logit. The input reaches the first conv unnormalised.
    """

    def __init__(self, cfg: DiscriminatorConfig, params: ParameterSet):
        self.cfg = cfg
        self.params = params

    def __call__(self, x: Union[DiffTensor, np.ndarray]) -> DiffTensor:
        x = as_tensor(x, dtype=np.float32)
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"Discriminator expects {self.cfg.in_channels} input channels", x.shape)
        if x.shape[2] != self.cfg.input_size or x.shape[3] != self.cfg.input_size:
            raise ShapeError(
                "Discriminator input size mismatch", x.shape[2:], (self.cfg.input_size, self.cfg.input_size)
            )
        out = x
        for i, k in enumerate(self.cfg.kernels()):
            out = _conv(self.params, f"conv{i}", out, stride=1 if k == 3 else 2, padding=1)
            if i > 0 and self.cfg.batch_norm:
                out = batch_norm(out, self.params[f"bn{i}.weight"], self.params[f"bn{i}.bias"])
            out = leaky_relu(out, self.cfg.conv_slope)
        out = flatten(out)
        out = leaky_relu(linear(out, self.params["linear0.weight"], self.params["linear0.bias"]), self.cfg.slope)
        return linear(out, self.params["linear1.weight"], self.params["linear1.bias"])

    forward = __call__


def build_swt_discriminator(cfg: DiscriminatorConfig, rng_seed: int) -> Discriminator:
    rng = np.random.default_rng(rng_seed)
    params = ParameterSet()
    c_in = cfg.in_channels
    size = cfg.input_size
    for i, (width, k) in enumerate(zip(cfg.widths(), cfg.kernels())):
        _add_conv(params, rng, f"conv{i}", c_in, width, k)
        if i > 0 and cfg.batch_norm:
            params.add(f"bn{i}.weight", np.ones(width))
            params.add(f"bn{i}.bias", np.zeros(width))
        if k == 4:
            size //= 2
        c_in = width
    flat = c_in * size * size
    params.add("linear0.weight", _he_normal(rng, (cfg.hidden, flat)))
    params.add("linear0.bias", np.zeros(cfg.hidden))
    params.add("linear1.weight", _he_normal(rng, (1, cfg.hidden)))
    params.add("linear1.bias", np.zeros(1))
    logger.info(
        "Built discriminator: %d conv layers, widths %s, %d parameters",
        cfg.conv_layers, cfg.widths(), params.num_elements(),
    )
    return Discriminator(cfg, params)


def detail_concat(subbands: Union[SubbandSet, Mapping[str, DiffTensor]]):
    """
    Stack the LH, HL and HH subbands as channels, in that order, unnormalised.

    A SubbandSet gives a 3 x H x W array; a mapping of (B, 1, H, W)
    DiffTensors gives a (B, 3, H, W) DiffTensor.
    """
    bands = subbands.subbands if isinstance(subbands, SubbandSet) else subbands
    missing: List[str] = [label for label in DETAIL_LABELS if label not in bands]
    if missing:
        raise SubbandMismatchError(f"Subband set lacks detail subbands {missing}")
    if isinstance(subbands, SubbandSet):
        return np.stack([bands[label] for label in DETAIL_LABELS])
    return concat_channels([bands[label] for label in DETAIL_LABELS])
