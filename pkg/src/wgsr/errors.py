"""Named exceptions raised across the wgsr package."""
from typing import Iterable, Optional, Sequence


class WgsrError(Exception):
    """Base class for every error raised by wgsr."""


class ConfigError(WgsrError):
    def __init__(self, message: str, errors: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.errors = list(errors or [])


class UnknownWaveletError(WgsrError):
    def __init__(self, family: str, supported: Iterable[str]):
        self.family = family
        self.supported = list(supported)
        super().__init__(
            f"Unknown wavelet family '{family}'. Supported families: {', '.join(self.supported)}"
        )


class ImageTooSmallError(WgsrError):
    pass


class LevelError(WgsrError):
    pass


class SubbandMismatchError(WgsrError):
    pass


class ColorspaceError(WgsrError):
    pass


class ScaleError(WgsrError):
    pass


class ImageDecodeError(WgsrError):
    pass


class UnsupportedBitDepthError(ImageDecodeError):
    pass


class ShapeError(WgsrError):
    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class TapeError(WgsrError):
    pass


class DetachedTensorError(TapeError):
    pass


class MissingGradientError(WgsrError):
    pass


class NonFiniteLossError(WgsrError):
    def __init__(self, channel: str, value: float, step: Optional[int] = None):
        self.channel = channel
        self.value = value
        self.step = step
        where = f" at iteration {step}" if step is not None else ""
        super().__init__(f"Non-finite loss {channel}={value}{where}")


class WeightMismatchError(WgsrError):
    pass


class EmptyDatasetError(WgsrError):
    pass


class CheckpointFormatError(WgsrError):
    pass
