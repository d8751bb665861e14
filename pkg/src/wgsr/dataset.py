"""
HR/LR PNG datasets, aligned patch cropping and an ordered prefetching batch stage.
"""
import logging
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Deque, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import EmptyDatasetError, ImageTooSmallError, ShapeError
from .imaging import ImageTensor, bicubic_resize, load_png, to_batch

logger = logging.getLogger(__name__)

SCALE = 4


@dataclass
class ImagePair:
    name: str
    lr: ImageTensor
    hr: ImageTensor


def _trim_to_scale(hr: ImageTensor, scale: int) -> ImageTensor:
    height = hr.height - hr.height % scale
    width = hr.width - hr.width % scale
    return ImageTensor(hr.data[:height, :width], hr.colorspace)


def make_pair(name: str, hr: ImageTensor, lr: Optional[ImageTensor] = None, scale: int = SCALE) -> ImagePair:
    """Pair an HR image with its LR input, generating LR by bicubic x1/scale when absent."""
    hr = _trim_to_scale(hr, scale)
    if lr is None:
        lr = bicubic_resize(hr, 1.0 / scale)
    elif lr.height * scale != hr.height or lr.width * scale != hr.width:
        raise ShapeError(f"{name}: LR must be 1/{scale} of HR", (lr.height, lr.width), (hr.height, hr.width))
    return ImagePair(name, lr, hr)


class SRDataset:
    def __init__(self, pairs: Sequence[ImagePair]):
        self.pairs = list(pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, idx: int) -> ImagePair:
        return self.pairs[idx]

    @classmethod
    def from_images(cls, hr_images: Sequence[ImageTensor], scale: int = SCALE) -> "SRDataset":
        return cls([make_pair(f"image{i:04d}", hr, scale=scale) for i, hr in enumerate(hr_images)])


def load_dataset(root: Union[str, Path], scale: int = SCALE, workers: int = 1) -> SRDataset:
    """Read ``root/HR/*.png`` and, when present, matching ``root/LR/*.png``."""
    root = Path(root)
    hr_dir, lr_dir = root / "HR", root / "LR"
    names = sorted(p.name for p in hr_dir.glob("*.png"))
    if not names:
        raise EmptyDatasetError(f"No PNG images found in {hr_dir}")

    def read(name: str) -> ImagePair:
        lr_path = lr_dir / name
        lr = load_png(lr_path) if lr_path.exists() else None
        return make_pair(name, load_png(hr_dir / name), lr, scale)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pairs = list(pool.map(read, names))
    logger.info("Loaded %d image pairs from %s (LR %s)", len(pairs), root,
                "from disk" if lr_dir.is_dir() else "generated")
    return SRDataset(pairs)


def sample_offset(lr_height: int, lr_width: int, patch: int, rng: np.random.Generator) -> Tuple[int, int]:
    if lr_height < patch or lr_width < patch:
        raise ImageTooSmallError(f"LR image {lr_height}x{lr_width} is smaller than the {patch}px patch")
    top = int(rng.integers(0, lr_height - patch + 1))
    left = int(rng.integers(0, lr_width - patch + 1))
    return top, left


def crop_at(lr: ImageTensor, hr: ImageTensor, patch: int, top: int, left: int, scale: int = SCALE):
    lr_crop = ImageTensor(lr.data[top:top + patch, left:left + patch], lr.colorspace)
    hr_crop = ImageTensor(
        hr.data[top * scale:(top + patch) * scale, left * scale:(left + patch) * scale], hr.colorspace
    )
    return lr_crop, hr_crop


def crop_pair(lr: ImageTensor, hr: ImageTensor, patch: int, rng: np.random.Generator, scale: int = SCALE):
    """Random LR patch and the HR patch at exactly ``scale`` times its offset and size."""
    if hr.height != scale * lr.height or hr.width != scale * lr.width:
        raise ShapeError(f"HR must be {scale}x LR", (hr.height, hr.width), (lr.height, lr.width))
    top, left = sample_offset(lr.height, lr.width, patch, rng)
    return crop_at(lr, hr, patch, top, left, scale)


BatchPlan = List[Tuple[int, int, int]]


class BatchPrefetcher:
    """
    Endless stream of (lr, hr) B x C x H x W float32 batches.

    The plan for every batch (image index, top, left) is drawn from one seeded
    generator on the consuming thread, so the batch sequence depends only on
    the seed; workers only materialize the crops, and results are consumed
    in submission order.
    """

    def __init__(self, dataset: SRDataset, batch_size: int, patch: int, seed: int, workers: int = 0, depth: int = 4):
        if len(dataset) == 0:
            raise EmptyDatasetError("Cannot sample batches from an empty dataset")
        for pair in dataset.pairs:
            if pair.lr.height < patch or pair.lr.width < patch:
                raise ImageTooSmallError(f"{pair.name}: LR {pair.lr.height}x{pair.lr.width} < patch {patch}")
        self.dataset = dataset
        self.batch_size = batch_size
        self.patch = patch
        self.rng = np.random.default_rng(seed)
        self.depth = depth
        self._pool = ThreadPoolExecutor(max_workers=workers) if workers > 0 else None
        self._pending: Deque[Future] = deque()

    def _plan(self) -> BatchPlan:
        plan = []
        for _ in range(self.batch_size):
            idx = int(self.rng.integers(0, len(self.dataset)))
            pair = self.dataset[idx]
            top, left = sample_offset(pair.lr.height, pair.lr.width, self.patch, self.rng)
            plan.append((idx, top, left))
        return plan

    def _materialize(self, plan: BatchPlan) -> Tuple[np.ndarray, np.ndarray]:
        crops = [crop_at(self.dataset[i].lr, self.dataset[i].hr, self.patch, top, left) for i, top, left in plan]
        return to_batch([c[0] for c in crops]), to_batch([c[1] for c in crops])

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
        return self

    def __next__(self) -> Tuple[np.ndarray, np.ndarray]:
        if self._pool is None:
            return self._materialize(self._plan())
        while len(self._pending) < self.depth:
            self._pending.append(self._pool.submit(self._materialize, self._plan()))
        return self._pending.popleft().result()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True, cancel_futures=True)
            self._pool = None

    def __enter__(self) -> "BatchPrefetcher":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()
