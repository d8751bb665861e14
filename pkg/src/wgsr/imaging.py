"""
Pixel containers, PNG I/O, BT.601 colour conversion and MATLAB-style bicubic
resampling.
"""
import logging
import math
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ColorspaceError, ImageDecodeError, ScaleError, UnsupportedBitDepthError
from .models import Colorspace

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# BT.601 studio range on [0, 1] inputs (the rgb2ycbcr convention).
_YCBCR_MATRIX = np.array(
    [
        [65.481, 128.553, 24.966],
        [-37.797, -74.203, 112.0],
        [112.0, -93.786, -18.214],
    ]
) / 255.0
_YCBCR_OFFSET = np.array([16.0, 128.0, 128.0]) / 255.0
_YCBCR_INVERSE = np.linalg.inv(_YCBCR_MATRIX)

_CHANNELS = {Colorspace.RGB: 3, Colorspace.YCBCR: 3, Colorspace.Y: 1}


@dataclass
class ImageTensor:
    data: np.ndarray
    colorspace: Colorspace = Colorspace.RGB

    def __post_init__(self):
        self.colorspace = Colorspace(self.colorspace)
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ColorspaceError(f"Image data must be H x W x C, got shape {data.shape}")
        if data.shape[2] != _CHANNELS[self.colorspace]:
            raise ColorspaceError(
                f"{self.colorspace.value} images have {_CHANNELS[self.colorspace]} channels, "
                f"got {data.shape[2]}"
            )
        self.data = data

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    def plane(self) -> np.ndarray:
        """The single channel of a Y image as an H x W array."""
        if self.channels != 1:
            raise ColorspaceError("plane() needs a single-channel image")
        return self.data[:, :, 0]


def rgb_to_ycbcr(img: ImageTensor) -> ImageTensor:
    if img.colorspace != Colorspace.RGB:
        raise ColorspaceError(f"rgb_to_ycbcr expects an RGB image, got {img.colorspace.value}")
    return ImageTensor(img.data @ _YCBCR_MATRIX.T + _YCBCR_OFFSET, Colorspace.YCBCR)


def ycbcr_to_rgb(img: ImageTensor) -> ImageTensor:
    if img.colorspace != Colorspace.YCBCR:
        raise ColorspaceError(f"ycbcr_to_rgb expects a YCbCr image, got {img.colorspace.value}")
    return ImageTensor((img.data - _YCBCR_OFFSET) @ _YCBCR_INVERSE.T, Colorspace.RGB)


def luma_coefficients() -> Tuple[np.ndarray, float]:
    """Row of the BT.601 matrix producing Y, and its offset, as (weights, offset)."""
    return _YCBCR_MATRIX[0].copy(), float(_YCBCR_OFFSET[0])


def extract_y(img: ImageTensor) -> ImageTensor:
    if img.channels == 1:
        raise ColorspaceError("Image already has a single channel")
    if img.colorspace == Colorspace.RGB:
        img = rgb_to_ycbcr(img)
    # Cb and Cr are discarded.
    return ImageTensor(img.data[:, :, :1].copy(), Colorspace.Y)


def _cubic(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    ax2 = ax * ax
    ax3 = ax2 * ax
    return (
        (1.5 * ax3 - 2.5 * ax2 + 1.0) * (ax <= 1.0)
        + (-0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0) * ((ax > 1.0) & (ax <= 2.0))
    )


def resize_weights(in_length: int, out_length: int, scale: float) -> np.ndarray:
    """
    Dense out_length x in_length resampling matrix following imresize:
    the cubic kernel is widened by 1/scale when shrinking, rows are
    normalised to sum to one, and out-of-range taps mirror symmetrically.
    """
    kernel_width = 4.0
    if scale < 1.0:
        def kernel(x):
            return scale * _cubic(scale * x)
        kernel_width /= scale
    else:
        kernel = _cubic

    x = np.arange(1, out_length + 1, dtype=np.float64)
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - kernel_width / 2.0)
    taps = int(math.ceil(kernel_width)) + 2
    indices = left[:, None] + np.arange(taps)[None, :]
    weights = kernel(u[:, None] - indices)
    weights /= weights.sum(axis=1, keepdims=True)

    mirror = np.concatenate([np.arange(in_length), np.arange(in_length - 1, -1, -1)])
    columns = mirror[np.mod(indices.astype(np.int64) - 1, mirror.shape[0])]

    matrix = np.zeros((out_length, in_length))
    rows = np.repeat(np.arange(out_length), taps)
    np.add.at(matrix, (rows, columns.ravel()), weights.ravel())
    return matrix


def _output_length(length: int, scale: Fraction) -> int:
    return int(math.ceil(length * scale))


def bicubic_resize(img: Union[ImageTensor, np.ndarray], scale: Union[float, Fraction]):
    """
    Resize by ``scale`` with the antialiased cubic kernel (a = -0.5).

    Accepts an ImageTensor or a bare H x W (x C) array and returns the same kind.
    """
    if scale <= 0:
        raise ScaleError(f"Scale must be positive, got {scale}")
    ratio = Fraction(scale).limit_denominator(1000)

    data = img.data if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float64)
    squeeze = data.ndim == 2
    if squeeze:
        data = data[:, :, None]
    height, width = data.shape[:2]

    rows = resize_weights(height, _output_length(height, ratio), float(ratio))
    cols = resize_weights(width, _output_length(width, ratio), float(ratio))
    out = np.einsum("oh,hwc->owc", rows, data)
    out = np.einsum("pw,owc->opc", cols, out)

    if isinstance(img, ImageTensor):
        return ImageTensor(out, img.colorspace)
    return out[:, :, 0] if squeeze else out


def bicubic_resize_batch(batch: np.ndarray, scale: float) -> np.ndarray:
    """bicubic_resize over the spatial axes of a B x C x H x W array."""
    ratio = Fraction(scale).limit_denominator(1000)
    height, width = batch.shape[2:]
    rows = resize_weights(height, _output_length(height, ratio), float(ratio))
    cols = resize_weights(width, _output_length(width, ratio), float(ratio))
    out = np.einsum("oh,bchw,pw->bcop", rows, batch.astype(np.float64), cols)
    return out.astype(batch.dtype)


def _is_sixteen_bit(im: Image.Image) -> bool:
    # Pillow decodes 16-bit RGB(A) PNGs to 8-bit modes; the raw mode still says ;16.
    return any(";16" in str(tile[3]) for tile in getattr(im, "tile", []) or [])


def load_png(path: PathLike) -> ImageTensor:
    """Read an 8-bit RGB or grayscale PNG into [0, 1] values."""
    try:
        with Image.open(path) as im:
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "I;16N", "F") or _is_sixteen_bit(im):
                raise UnsupportedBitDepthError(f"{path}: unsupported bit depth (mode {mode})")
            im.load()
            if mode in ("RGBA", "P", "CMYK"):
                im = im.convert("RGB")
            elif mode in ("1", "LA"):
                im = im.convert("L")
            array = np.asarray(im, dtype=np.uint8)
    except UnsupportedBitDepthError:
        raise
    except (OSError, SyntaxError, ValueError, UnidentifiedImageError) as e:
        raise ImageDecodeError(f"Failed to decode {path}: {e}") from e

    data = array.astype(np.float64) / 255.0
    if data.ndim == 2:
        return ImageTensor(data, Colorspace.Y)
    return ImageTensor(data, Colorspace.RGB)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: ImageTensor, path: PathLike) -> None:
    """Write an image as 8-bit PNG; values are clamped to [0, 1] here and only here."""
    if img.colorspace == Colorspace.YCBCR:
        img = ycbcr_to_rgb(img)
    os.makedirs(Path(path).parent, exist_ok=True)
    pixels = to_uint8(img.data)
    if img.channels == 1:
        Image.fromarray(np.ascontiguousarray(pixels[:, :, 0])).save(path, format="PNG")
    else:
        Image.fromarray(pixels).save(path, format="PNG")


def save_png16(pixels: np.ndarray, path: PathLike) -> None:
    os.makedirs(Path(path).parent, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint16)).save(path, format="PNG")


def to_batch(images: Sequence[ImageTensor], dtype=np.float32) -> np.ndarray:
    """Stack H x W x C images into a B x C x H x W array."""
    return np.stack([np.transpose(im.data, (2, 0, 1)) for im in images]).astype(dtype)


def from_batch(batch: np.ndarray, colorspace: Colorspace = Colorspace.RGB) -> List[ImageTensor]:
    return [ImageTensor(np.transpose(np.asarray(item, dtype=np.float64), (1, 2, 0)), colorspace) for item in batch]
