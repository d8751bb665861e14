"""
Two-dimensional stationary (undecimated) wavelet transform.

Filtering is separable and circular: every subband keeps the input's H x W
resolution and a circular shift of the input shifts every subband by the same
amount. Level 2 re-decomposes the level-1 LL plane with the a trous (zero
upsampled) filters and carries the level-1 detail planes through unchanged.

Subband labels use the first letter for the filter applied along the width
axis and the second letter for the height axis.
"""
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
import pywt

from .errors import (
    ImageTooSmallError,
    LevelError,
    SubbandMismatchError,
    UnknownWaveletError,
    WgsrError,
)

logger = logging.getLogger(__name__)

SUPPORTED_FAMILIES: Tuple[str, ...] = (
    "haar", "db2", "db7", "db19", "sym7", "sym19", "bior2.6", "bior4.4",
)
ORTHOGONAL_FAMILIES = frozenset({"haar", "db2", "db7", "db19", "sym7", "sym19"})

LEVEL1_LABELS: Tuple[str, ...] = ("LL", "LH", "HL", "HH")
LEVEL2_LABELS: Tuple[str, ...] = ("L-LL", "L-LH", "L-HL", "L-HH", "LH", "HL", "HH")
DETAIL_LABELS: Tuple[str, ...] = ("LH", "HL", "HH")

# Deviation of |H*H~ + G*G~| from 2 tolerated for table-loaded filters.
PR_TOLERANCE = 1e-8


@dataclass(frozen=True)
class WaveletFilter:
    family_name: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray

    @property
    def length(self) -> int:
        return int(self.dec_lo.shape[0])

    @property
    def orthogonal(self) -> bool:
        return self.family_name in ORTHOGONAL_FAMILIES


@dataclass
class SubbandSet:
    levels: int
    subbands: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def height(self) -> int:
        return int(next(iter(self.subbands.values())).shape[0])

    @property
    def width(self) -> int:
        return int(next(iter(self.subbands.values())).shape[1])

    @property
    def labels(self) -> List[str]:
        return list(self.subbands)

    def __getitem__(self, label: str) -> np.ndarray:
        return self.subbands[label]

    def __add__(self, other: "SubbandSet") -> "SubbandSet":
        if self.labels != other.labels:
            raise SubbandMismatchError(
                f"Cannot add subband sets with labels {self.labels} and {other.labels}"
            )
        return SubbandSet(
            levels=self.levels,
            subbands={k: self.subbands[k] + other.subbands[k] for k in self.subbands},
        )


def supported_families() -> List[str]:
    return list(SUPPORTED_FAMILIES)


def labels_for(levels: int) -> Tuple[str, ...]:
    if levels == 1:
        return LEVEL1_LABELS
    if levels == 2:
        return LEVEL2_LABELS
    raise LevelError(f"SWT levels must be 1 or 2, got {levels}")


def _quadrature_mirror(lo: np.ndarray) -> np.ndarray:
    signs = np.where(np.arange(lo.shape[0]) % 2 == 0, 1.0, -1.0)
    return signs * lo[::-1]


def _pad_to(vec: np.ndarray, length: int) -> np.ndarray:
    if vec.shape[0] == length:
        return vec
    return np.concatenate([vec, np.zeros(length - vec.shape[0])])


def _orthogonal_filter(family: str, dec_lo: np.ndarray) -> WaveletFilter:
    dec_lo = np.asarray(dec_lo, dtype=np.float64)
    dec_hi = _quadrature_mirror(dec_lo)
    return WaveletFilter(
        family_name=family,
        dec_lo=dec_lo,
        dec_hi=dec_hi,
        rec_lo=dec_lo[::-1].copy(),
        rec_hi=dec_hi[::-1].copy(),
    )


def _table_filter(family: str) -> WaveletFilter:
    wavelet = pywt.Wavelet(family)
    if family in ORTHOGONAL_FAMILIES:
        return _orthogonal_filter(family, np.asarray(wavelet.dec_lo, dtype=np.float64))

    bank = [np.asarray(v, dtype=np.float64) for v in wavelet.filter_bank]
    length = max(v.shape[0] for v in bank)
    length += length % 2
    dec_lo, dec_hi, rec_lo, rec_hi = (_pad_to(v, length) for v in bank)
    return WaveletFilter(family, dec_lo, dec_hi, rec_lo, rec_hi)


def make_filter(family: str) -> WaveletFilter:
    """
    Build the analysis/synthesis filter quadruple for a supported family.

    haar and db2 are built from their closed forms; the longer filters come
    from the PyWavelets coefficient tables and are checked against the
    perfect-reconstruction condition before being returned.
    """
    if family not in SUPPORTED_FAMILIES:
        raise UnknownWaveletError(family, SUPPORTED_FAMILIES)

    if family == "haar":
        filt = _orthogonal_filter(family, np.array([1.0, 1.0]) / math.sqrt(2.0))
    elif family == "db2":
        s3 = math.sqrt(3.0)
        taps = np.array([1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3]) / (4.0 * math.sqrt(2.0))
        filt = _orthogonal_filter(family, taps)
    else:
        filt = _table_filter(family)
        deviation = check_perfect_reconstruction(filt)
        if deviation > PR_TOLERANCE:
            raise WgsrError(
                f"Coefficient table for '{family}' fails perfect reconstruction "
                f"(deviation {deviation:.3e})"
            )
        logger.debug("Loaded %s (%d taps), PR deviation %.3e", family, filt.length, deviation)
    return filt


def _wrapped(taps: np.ndarray, n: int) -> np.ndarray:
    """Fold a tap vector onto a circular grid of size n."""
    out = np.zeros(n)
    np.add.at(out, np.arange(taps.shape[0]) % n, taps)
    return out


def check_perfect_reconstruction(filt: WaveletFilter, grid: int = 512) -> float:
    """Max deviation of |H*H~ + G*G~| from 2 over a dense frequency grid."""
    transfer = (
        np.fft.fft(filt.dec_lo, grid) * np.fft.fft(filt.rec_lo, grid)
        + np.fft.fft(filt.dec_hi, grid) * np.fft.fft(filt.rec_hi, grid)
    )
    return float(np.max(np.abs(np.abs(transfer) - 2.0)))


def upsample_taps(taps: np.ndarray, step: int) -> np.ndarray:
    """Insert step - 1 zeros between consecutive taps."""
    if step == 1:
        return np.asarray(taps)
    out = np.zeros((taps.shape[0] - 1) * step + 1, dtype=np.asarray(taps).dtype)
    out[::step] = taps
    return out


def analysis_taps(filt: WaveletFilter, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """Low/high analysis taps for one decomposition level (1-based)."""
    step = 2 ** (level - 1)
    return upsample_taps(filt.dec_lo, step), upsample_taps(filt.dec_hi, step)


def circular_filter(plane: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    """out[n] = sum_k taps[k] * plane[(n - k) mod N] along ``axis``."""
    out = np.zeros_like(plane)
    for k, c in enumerate(taps):
        if c == 0.0:
            continue
        out += c * np.roll(plane, k, axis=axis)
    return out


def _analysis(plane: np.ndarray, lo: np.ndarray, hi: np.ndarray, axes=(-2, -1)) -> Tuple[np.ndarray, ...]:
    h_axis, w_axis = axes
    lo_w = circular_filter(plane, lo, w_axis)
    hi_w = circular_filter(plane, hi, w_axis)
    return (
        circular_filter(lo_w, lo, h_axis),
        circular_filter(lo_w, hi, h_axis),
        circular_filter(hi_w, lo, h_axis),
        circular_filter(hi_w, hi, h_axis),
    )


def _validate_plane(plane: np.ndarray, filt: WaveletFilter, levels: int) -> np.ndarray:
    labels_for(levels)
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise WgsrError(f"Expected a 2-D plane, got shape {plane.shape}")
    height, width = plane.shape
    if height < filt.length or width < filt.length:
        raise ImageTooSmallError(
            f"Image {height}x{width} is smaller than the {filt.family_name} "
            f"filter support ({filt.length} taps)"
        )
    return plane


def swt2_forward(plane: np.ndarray, filt: WaveletFilter, levels: int = 1) -> SubbandSet:
    plane = _validate_plane(plane, filt, levels)

    lo, hi = analysis_taps(filt, 1)
    ll, lh, hl, hh = _analysis(plane, lo, hi)
    if levels == 1:
        return SubbandSet(levels=1, subbands={"LL": ll, "LH": lh, "HL": hl, "HH": hh})

    lo2, hi2 = analysis_taps(filt, 2)
    l_ll, l_lh, l_hl, l_hh = _analysis(ll, lo2, hi2)
    return SubbandSet(
        levels=2,
        subbands={
            "L-LL": l_ll, "L-LH": l_lh, "L-HL": l_hl, "L-HH": l_hh,
            "LH": lh, "HL": hl, "HH": hh,
        },
    )


def _synthesis(bands: Iterable[np.ndarray], filt: WaveletFilter, step: int) -> np.ndarray:
    ll, lh, hl, hh = [np.fft.fft2(b) for b in bands]
    height, width = ll.shape

    def responses(n: int):
        taps = [upsample_taps(v, step) for v in (filt.dec_lo, filt.dec_hi, filt.rec_lo, filt.rec_hi)]
        d_lo, d_hi, r_lo, r_hi = (np.fft.fft(_wrapped(t, n)) for t in taps)
        return r_lo, r_hi, d_lo * r_lo + d_hi * r_hi

    rlo_h, rhi_h, t_h = responses(height)
    rlo_w, rhi_w, t_w = responses(width)
    rlo_h, rhi_h, t_h = rlo_h[:, None], rhi_h[:, None], t_h[:, None]
    rlo_w, rhi_w, t_w = rlo_w[None, :], rhi_w[None, :], t_w[None, :]

    spectrum = (
        ll * rlo_h * rlo_w
        + lh * rhi_h * rlo_w
        + hl * rlo_h * rhi_w
        + hh * rhi_h * rhi_w
    ) / (t_h * t_w)
    return np.real(np.fft.ifft2(spectrum))


def swt2_inverse(subband_set: SubbandSet, filt: WaveletFilter) -> np.ndarray:
    expected = labels_for(subband_set.levels)
    if tuple(subband_set.labels) != expected:
        raise SubbandMismatchError(
            f"Level-{subband_set.levels} set must carry subbands {list(expected)}, "
            f"got {subband_set.labels}"
        )
    bands = subband_set.subbands
    if subband_set.levels == 2:
        ll = _synthesis([bands[k] for k in ("L-LL", "L-LH", "L-HL", "L-HH")], filt, 2)
    else:
        ll = bands["LL"]
    return _synthesis([ll, bands["LH"], bands["HL"], bands["HH"]], filt, 1)


def dump_subbands(subband_set: SubbandSet, directory: Union[str, Path]) -> Path:
    """Write each subband as a normalized 16-bit PNG plus a min/max sidecar."""
    from .imaging import save_png16

    directory = Path(directory)
    os.makedirs(directory, exist_ok=True)
    lines = []
    for label, plane in subband_set.subbands.items():
        lo, hi = float(plane.min()), float(plane.max())
        span = hi - lo
        scaled = (plane - lo) / span if span > 0 else np.zeros_like(plane)
        save_png16(np.round(scaled * 65535.0).astype(np.uint16), directory / f"{label}.png")
        lines.append(f"{label} {lo!r} {hi!r}")
    sidecar = directory / "normalization.txt"
    with open(sidecar, "w") as f:
        f.write("\n".join(lines) + "\n")
    logger.info("Dumped %d subbands to %s", len(lines), directory)
    return sidecar
