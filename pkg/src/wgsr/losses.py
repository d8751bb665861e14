"""
Generator and discriminator objectives: subband-weighted SWT fidelity, the
adversarial pair, a pluggable perceptual term and the total generator loss.
"""
import logging
import math
from typing import List, Optional, Union

import numpy as np

from .autodiff import (
    DiffTensor,
    add,
    as_tensor,
    batch_mean,
    bce_logits,
    conv2d,
    l1,
    leaky_relu,
    mul,
    sub,
    sum_all,
    swt_forward_diff,
)
from .errors import NonFiniteLossError, ShapeError, WeightMismatchError
from .models import LossWeights
from .wavelets import WaveletFilter, labels_for

logger = logging.getLogger(__name__)

Scalar = Union[DiffTensor, float]


def default_weights(levels: int) -> LossWeights:
    labels_for(levels)
    if levels == 1:
        subband = {"LL": 0.1, "LH": 0.01, "HL": 0.01, "HH": 0.05}
    else:
        subband = {
            "L-LL": 0.1, "L-LH": 0.01, "L-HL": 0.01, "L-HH": 0.05,
            "LH": 0.1, "HL": 0.1, "HH": 0.05,
        }
    return LossWeights(subband=subband, adv=0.005, perc=1.0)


def _check_weights(weights: LossWeights, levels: int) -> None:
    expected = labels_for(levels)
    if set(weights.subband) != set(expected):
        raise WeightMismatchError(
            f"Weights keyed {sorted(weights.subband)} do not match level-{levels} subbands {list(expected)}"
        )


def swt_fidelity_loss(
    sr_y: DiffTensor,
    hr_y: Union[DiffTensor, np.ndarray],
    filt: WaveletFilter,
    levels: int,
    weights: LossWeights,
    raw_sum: bool = False,
) -> DiffTensor:
    """
    Batch mean of sum_j lambda_j * ||SWT(sr)_j - SWT(hr)_j||_1.

    The l1 norm is the mean absolute difference per element unless
    ``raw_sum`` is set, in which case it is the plain per-sample sum.
    """
    _check_weights(weights, levels)
    hr_y = as_tensor(hr_y, dtype=sr_y.dtype).detach()
    if sr_y.shape != hr_y.shape:
        raise ShapeError("SR and HR planes must have equal shapes", sr_y.shape, hr_y.shape)

    active = [label for label in labels_for(levels) if weights.subband[label] != 0.0]
    if not active:
        # Tape-tracked zero.
        return mul(sum_all(sr_y), 0.0)

    sr_bands = swt_forward_diff(sr_y, filt, levels)
    hr_bands = swt_forward_diff(hr_y, filt, levels)
    batch = sr_y.shape[0]
    total: Optional[DiffTensor] = None
    for label in active:
        if raw_sum:
            term = mul(l1(sr_bands[label], hr_bands[label].values, reduction="sum"), 1.0 / batch)
        else:
            term = l1(sr_bands[label], hr_bands[label].values)
        term = mul(term, weights.subband[label])
        total = term if total is None else add(total, term)
    return total


def _check_logits(real: DiffTensor, fake: DiffTensor) -> None:
    if real.shape != fake.shape:
        raise ShapeError("Real and fake logit batches must have equal shapes", real.shape, fake.shape)


def adversarial_generator_loss(d_real_logits, d_fake_logits, relativistic: bool = False) -> DiffTensor:
    """-E[log(1 - sigmoid(D(real)))] - E[log sigmoid(D(fake))]."""
    real, fake = as_tensor(d_real_logits), as_tensor(d_fake_logits)
    _check_logits(real, fake)
    if relativistic:
        real, fake = sub(real, batch_mean(fake)), sub(fake, batch_mean(real))
    return add(bce_logits(real, 0.0), bce_logits(fake, 1.0))


def discriminator_loss(d_real_logits, d_fake_logits, relativistic: bool = False) -> DiffTensor:
    """-E[log sigmoid(D(real))] - E[log(1 - sigmoid(D(fake)))]."""
    real, fake = as_tensor(d_real_logits), as_tensor(d_fake_logits)
    _check_logits(real, fake)
    if relativistic:
        real, fake = sub(real, batch_mean(fake)), sub(fake, batch_mean(real))
    return add(bce_logits(fake, 0.0), bce_logits(real, 1.0))


class FeatureExtractor:
    """Maps an RGB batch to a list of feature maps; subclasses supply the network."""

    def features(self, x: DiffTensor) -> List[DiffTensor]:
        raise NotImplementedError


class FrozenConvExtractor(FeatureExtractor):
    """
    Fixed, seeded stack of strided 3x3 convolutions standing in for a
    pretrained perceptual network. Its weights never receive gradients.
    """

    def __init__(self, seed: int = 1234, widths=(8, 16, 32), identity_first: bool = False, slope: float = 0.2):
        rng = np.random.default_rng(seed)
        self.slope = slope
        self.layers = []
        c_in = 3
        for i, width in enumerate(widths):
            if i == 0 and identity_first:
                w = np.zeros((width, c_in, 3, 3))
                for c in range(min(width, c_in)):
                    w[c, c, 1, 1] = 1.0
            else:
                w = rng.standard_normal((width, c_in, 3, 3)) * np.sqrt(2.0 / (c_in * 9))
            self.layers.append((DiffTensor(w.astype(np.float32)), DiffTensor(np.zeros(width, dtype=np.float32))))
            c_in = width

    def features(self, x: DiffTensor) -> List[DiffTensor]:
        out = []
        for weight, bias in self.layers:
            x = leaky_relu(conv2d(x, weight, bias, stride=2, padding=1), self.slope)
            out.append(x)
        return out


def perceptual_loss(sr_rgb: DiffTensor, hr_rgb: Union[DiffTensor, np.ndarray], extractor: FeatureExtractor) -> DiffTensor:
    """
    Mean over stages of the per-stage mean l1 distance between feature maps.

    Every stage counts equally however many elements it has, so the small
    deep stages weigh as much as the large shallow ones.
    """
    sr_rgb = as_tensor(sr_rgb)
    hr_rgb = as_tensor(hr_rgb, dtype=sr_rgb.dtype)
    if sr_rgb.shape != hr_rgb.shape:
        raise ShapeError("Perceptual loss inputs must have equal shapes", sr_rgb.shape, hr_rgb.shape)
    sr_feats = extractor.features(sr_rgb)
    hr_feats = extractor.features(hr_rgb)
    total: Optional[DiffTensor] = None
    for a, b in zip(sr_feats, hr_feats):
        term = l1(a, b)
        total = term if total is None else add(total, term)
    return mul(total, 1.0 / len(sr_feats))


def _value(x: Scalar) -> float:
    return x.item() if isinstance(x, DiffTensor) else float(x)


def total_generator_loss(l_swt: Scalar, l_adv_g: Scalar, l_perc: Scalar, weights: LossWeights) -> DiffTensor:
    """L_G = L_SWT + lambda_adv * L_adv,G + lambda_perc * L_perc."""
    for channel, term in (("L_SWT", l_swt), ("L_adv_G", l_adv_g), ("L_perc", l_perc)):
        value = _value(term)
        if not math.isfinite(value):
            raise NonFiniteLossError(channel, value)
    dtype = l_swt.dtype if isinstance(l_swt, DiffTensor) else np.float64
    total = add(as_tensor(l_swt, dtype=dtype), mul(as_tensor(l_adv_g, dtype=dtype), weights.adv))
    return add(total, mul(as_tensor(l_perc, dtype=dtype), weights.perc))
