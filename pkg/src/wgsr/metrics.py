"""
Y-channel PSNR/SSIM, LR-PSNR with the 45 dB consistency gate, and per-subband PSNR.

No border is shaved unless asked for.
"""
import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from skimage.metrics import structural_similarity

from .errors import EmptyDatasetError, ImageTooSmallError, ShapeError
from .imaging import ImageTensor, bicubic_resize, extract_y, load_png
from .models import LR_CONSISTENCY_DB, EvalRecord
from .wavelets import WaveletFilter, swt2_forward

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
CSV_COLUMNS = ("image", "psnr_y", "ssim_y", "lr_psnr", "lr_consistent")


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError("Metric inputs must have equal shapes", a.shape, b.shape)


def shave(plane: np.ndarray, n: int) -> np.ndarray:
    if n <= 0:
        return plane
    return plane[n:-n, n:-n]


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0, capped: bool = False) -> float:
    """10 log10(peak^2 / MSE); identical inputs give inf, or PSNR_CAP when ``capped``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP if capped else math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), averaged away from the border."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_shapes(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ImageTooSmallError(f"SSIM needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")
    return float(
        structural_similarity(
            a, b, gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False, data_range=peak
        )
    )


def lr_psnr(sr_rgb: ImageTensor, lr_rgb: ImageTensor) -> float:
    """PSNR over RGB between the x1/4 bicubic downsample of SR and the LR input."""
    if sr_rgb.height != 4 * lr_rgb.height or sr_rgb.width != 4 * lr_rgb.width:
        raise ShapeError(
            "SR must be exactly 4x the LR size", (sr_rgb.height, sr_rgb.width), (lr_rgb.height, lr_rgb.width)
        )
    down = bicubic_resize(sr_rgb, 0.25)
    return psnr(down.data, lr_rgb.data)


def is_lr_consistent(value: float) -> bool:
    return value >= LR_CONSISTENCY_DB


def subband_psnr(sr_y: np.ndarray, hr_y: np.ndarray, filt: WaveletFilter, levels: int = 1) -> Dict[str, float]:
    """PSNR per SWT subband, with the HR subband's dynamic range as peak."""
    _check_shapes(np.asarray(sr_y), np.asarray(hr_y))
    sr_set = swt2_forward(sr_y, filt, levels)
    hr_set = swt2_forward(hr_y, filt, levels)
    scores = {}
    for label in hr_set.labels:
        ref = hr_set[label]
        span = float(ref.max() - ref.min())
        scores[label] = psnr(sr_set[label], ref, peak=span if span > 0 else 1.0)
    return scores


def evaluate_image(
    name: str,
    sr: ImageTensor,
    hr: ImageTensor,
    lr: Optional[ImageTensor] = None,
    shave_border: int = 0,
) -> EvalRecord:
    sr_y = shave(extract_y(sr).plane(), shave_border)
    hr_y = shave(extract_y(hr).plane(), shave_border)
    return EvalRecord(
        image=name,
        psnr_y=psnr(sr_y, hr_y, capped=True),
        ssim_y=ssim(sr_y, hr_y),
        lr_psnr=_lr_psnr_or_none(sr, hr, lr),
    )


def _lr_psnr_or_none(sr: ImageTensor, hr: ImageTensor, lr: Optional[ImageTensor]) -> Optional[float]:
    """Without an LR image the HR one is downscaled the way the dataset builds its LR inputs."""
    if lr is None:
        if hr.height % 4 or hr.width % 4 or (sr.height, sr.width) != (hr.height, hr.width):
            return None
        lr = bicubic_resize(hr, 0.25)
    value = lr_psnr(sr, lr)
    return PSNR_CAP if math.isinf(value) else value


def evaluate_pairs(
    sr_dir: Union[str, Path],
    hr_dir: Union[str, Path],
    lr_dir: Optional[Union[str, Path]] = None,
    shave_border: int = 0,
    workers: int = 1,
) -> List[EvalRecord]:
    """Score every SR PNG that has an HR counterpart; records come back sorted by filename."""
    sr_dir, hr_dir = Path(sr_dir), Path(hr_dir)
    names = sorted(p.name for p in sr_dir.glob("*.png") if (hr_dir / p.name).exists())
    if not names:
        raise EmptyDatasetError(f"No SR/HR PNG pairs found in {sr_dir} and {hr_dir}")

    def score(name: str) -> EvalRecord:
        lr = None
        if lr_dir is not None and (Path(lr_dir) / name).exists():
            lr = load_png(Path(lr_dir) / name)
        record = evaluate_image(name, load_png(sr_dir / name), load_png(hr_dir / name), lr, shave_border)
        logger.debug("Scored %s: %.3f dB", name, record.psnr_y)
        return record

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(score, names))


def summarize(records: Sequence[EvalRecord]) -> Dict[str, float]:
    summary = {
        "psnr_y": float(np.mean([r.psnr_y for r in records])),
        "ssim_y": float(np.mean([r.ssim_y for r in records])),
    }
    lr_values = [r.lr_psnr for r in records if r.lr_psnr is not None]
    if lr_values:
        summary["lr_psnr"] = float(np.mean(lr_values))
        summary["lr_consistent"] = float(np.mean([r.lr_consistent for r in records if r.lr_psnr is not None]))
    return summary


def write_eval_csv(records: Sequence[EvalRecord], path: Union[str, Path]) -> Tuple[Path, Dict[str, float]]:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    summary = summarize(records)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow([
                r.image,
                f"{r.psnr_y:.6f}",
                f"{r.ssim_y:.6f}",
                "" if r.lr_psnr is None else f"{r.lr_psnr:.6f}",
                "" if r.lr_consistent is None else str(r.lr_consistent).lower(),
            ])
        writer.writerow([
            "mean",
            f"{summary['psnr_y']:.6f}",
            f"{summary['ssim_y']:.6f}",
            f"{summary['lr_psnr']:.6f}" if "lr_psnr" in summary else "",
            f"{summary['lr_consistent']:.6f}" if "lr_consistent" in summary else "",
        ])
    logger.info("Wrote %d evaluation records to %s", len(records), path)
    return path, summary
