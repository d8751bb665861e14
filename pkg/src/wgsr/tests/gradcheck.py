"""Randomized central-difference gradient checks for tape-recorded functions."""
from typing import Callable, List, Sequence

import numpy as np

from wgsr.autodiff import DiffTensor, Tape, backward

SAMPLES = 20
EPS = 1e-3
TOLERANCE = 1e-3


def leaf(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> DiffTensor:
    """A float64 tracked tensor with standard-normal values."""
    return DiffTensor(rng.standard_normal(shape) * scale, requires_grad=True, dtype=np.float64)


def max_relative_error(
    fn: Callable[[], DiffTensor],
    tensors: Sequence[DiffTensor],
    samples: int = SAMPLES,
    eps: float = EPS,
    seed: int = 0,
    floor: float = 1e-4,
) -> float:
    """
    Compare tape gradients of the scalar ``fn()`` against central differences
    at ``samples`` random coordinates spread over ``tensors``.
    """
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        out = fn()
    backward(tape, out)
    analytic: List[np.ndarray] = [
        np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64).copy() for t in tensors
    ]

    rng = np.random.default_rng(seed)
    sizes = np.array([t.size for t in tensors], dtype=np.float64)
    worst = 0.0
    for _ in range(samples):
        which = int(rng.choice(len(tensors), p=sizes / sizes.sum()))
        tensor = tensors[which]
        index = np.unravel_index(int(rng.integers(0, tensor.size)), tensor.shape)
        original = tensor.values[index]
        tensor.values[index] = original + eps
        plus = fn().item()
        tensor.values[index] = original - eps
        minus = fn().item()
        tensor.values[index] = original
        numeric = (plus - minus) / (2.0 * eps)
        a = float(analytic[which][index])
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
