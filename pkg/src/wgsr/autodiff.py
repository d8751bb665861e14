"""
Minimal reverse-mode automatic differentiation over dense numpy tensors.

Operations executed while a :class:`Tape` is active, and that touch at least
one tracked tensor, are recorded together with a backward closure. Calling
:func:`backward` walks the record in reverse order exactly once and
accumulates gradients into every tracked tensor's ``grad`` slot.

    with Tape() as tape:
        loss = l1(conv2d(x, w, b), y)
    backward(tape, loss)
"""
import logging
import threading
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import wavelets
from .errors import CheckpointFormatError, DetachedTensorError, ShapeError, TapeError
from .wavelets import WaveletFilter

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_state = threading.local()


class DiffTensor:
    """A numpy array with an optional gradient slot and tape membership."""

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        values = np.asarray(values)
        if dtype is None:
            dtype = values.dtype if values.dtype in (np.float32, np.float64) else np.float32
        self.values = values.astype(dtype, copy=False)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return int(self.values.size)

    def item(self) -> float:
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.values, requires_grad=False, dtype=self.dtype)

    def accumulate(self, grad: np.ndarray) -> None:
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError("Gradient shape does not match tensor shape", grad.shape, self.shape)
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other: float):
        return mul(self, 1.0 / float(other))


class _Node:
    __slots__ = ("output", "parents", "backward")

    def __init__(self, output: DiffTensor, parents: Sequence[DiffTensor], backward: BackwardFn):
        self.output = output
        self.parents = list(parents)
        self.backward = backward


class Tape:
    """Ordered record of differentiable operations; record order is topological."""

    def __init__(self):
        self.nodes: List[_Node] = []
        self.consumed = False
        self.live = True

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _stack().pop()

    def record(self, output: DiffTensor, parents: Sequence[DiffTensor], backward: BackwardFn) -> None:
        if self.consumed:
            raise TapeError("Cannot record on a tape whose backward pass already ran; call reset()")
        for p in parents:
            if p._tape is not None and p._tape is not self and p._tape.live:
                raise TapeError("Tensor already belongs to another live tape")
        output.node_id = len(self.nodes)
        output.requires_grad = True
        output._tape = self
        self.nodes.append(_Node(output, parents, backward))

    def reset(self) -> None:
        for node in self.nodes:
            node.output._tape = None
            node.output.node_id = None
        self.nodes = []
        self.consumed = False

    def close(self) -> None:
        self.live = False


def _stack() -> List[Tape]:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def current_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(x: Union[DiffTensor, ArrayLike], dtype=None) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(x, dtype=dtype)


def _make(values: np.ndarray, parents: Sequence[DiffTensor], backward: BackwardFn) -> DiffTensor:
    out = DiffTensor(values, dtype=values.dtype if values.dtype in (np.float32, np.float64) else None)
    tape = current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        tape.record(out, parents, backward)
    return out


def backward(tape: Tape, seed: DiffTensor) -> None:
    """Fill grad slots with d(seed)/d(tensor) for every tracked tensor on the tape."""
    if seed.size != 1:
        raise TapeError(f"Backward seed must be a scalar, got shape {seed.shape}")
    if seed._tape is not tape:
        raise DetachedTensorError("Seed tensor was not produced on this tape")
    if tape.consumed:
        raise TapeError("Backward already ran on this tape; call reset() before reusing it")

    seed.grad = np.ones_like(seed.values)
    for node in reversed(tape.nodes):
        grad = node.output.grad
        if grad is None:
            continue
        for parent, g in zip(node.parents, node.backward(grad)):
            if g is not None and parent.requires_grad:
                parent.accumulate(g)
    tape.consumed = True


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> Tuple[DiffTensor, DiffTensor]:
    if isinstance(a, DiffTensor) and not isinstance(b, DiffTensor):
        return a, DiffTensor(b, dtype=a.dtype)
    if isinstance(b, DiffTensor) and not isinstance(a, DiffTensor):
        return DiffTensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _check_broadcast(a: DiffTensor, b: DiffTensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError("Operands do not broadcast", a.shape, b.shape)


def add(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)

    def bw(g):
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]

    return _make(a.values + b.values, [a, b], bw)


def sub(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)

    def bw(g):
        return [_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)]

    return _make(a.values - b.values, [a, b], bw)


def mul(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b)

    def bw(g):
        return [_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)]

    return _make(a.values * b.values, [a, b], bw)


def reshape(x: DiffTensor, shape: Tuple[int, ...]) -> DiffTensor:
    def bw(g):
        return [g.reshape(x.shape)]

    return _make(x.values.reshape(shape), [x], bw)


def flatten(x: DiffTensor) -> DiffTensor:
    return reshape(x, (x.shape[0], -1))


def sum_all(x: DiffTensor) -> DiffTensor:
    total = np.asarray(x.values.sum(dtype=np.float64), dtype=x.dtype)

    def bw(g):
        return [np.broadcast_to(g, x.shape).astype(x.dtype)]

    return _make(total, [x], bw)


def mean(x: DiffTensor) -> DiffTensor:
    n = x.size
    value = np.asarray(x.values.mean(dtype=np.float64), dtype=x.dtype)

    def bw(g):
        return [np.full(x.shape, g / n, dtype=x.dtype)]

    return _make(value, [x], bw)


def batch_mean(x: DiffTensor) -> DiffTensor:
    """Mean over the leading (batch) axis."""
    n = x.shape[0]
    value = x.values.mean(axis=0, dtype=np.float64).astype(x.dtype)

    def bw(g):
        return [np.broadcast_to(np.asarray(g) / n, x.shape).astype(x.dtype)]

    return _make(np.asarray(value), [x], bw)


def leaky_relu(x: DiffTensor, slope: float = 0.2) -> DiffTensor:
    positive = x.values > 0
    scale = np.where(positive, 1.0, slope).astype(x.dtype)

    def bw(g):
        return [g * scale]

    return _make(x.values * scale, [x], bw)


def linear(x: DiffTensor, weight: DiffTensor, bias: Optional[DiffTensor] = None) -> DiffTensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError("linear expects (B, in) input and (out, in) weight", x.shape, weight.shape)
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError("linear bias must have shape (out,)", bias.shape, (weight.shape[0],))
    out = x.values @ weight.values.T
    if bias is not None:
        out = out + bias.values

    def bw(g):
        grads = [g @ weight.values, g.T @ x.values]
        if bias is not None:
            grads.append(g.sum(axis=0, dtype=np.float64).astype(bias.dtype))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return _make(out, parents, bw)


def conv2d(
    x: DiffTensor,
    weight: DiffTensor,
    bias: Optional[DiffTensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> DiffTensor:
    """Cross-correlation of (B, C, H, W) input with (O, C, k, k) weight, zero padding."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1] or weight.shape[2] != weight.shape[3]:
        raise ShapeError("conv2d expects (B, C, H, W) input and (O, C, k, k) weight", x.shape, weight.shape)
    out_ch, in_ch, k, _ = weight.shape
    if bias is not None and bias.shape != (out_ch,):
        raise ShapeError("conv2d bias must have shape (O,)", bias.shape, (out_ch,))
    batch, _, height, width = x.shape
    out_h = (height + 2 * padding - k) // stride + 1
    out_w = (width + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError("conv2d input is smaller than the kernel", x.shape, weight.shape)

    padded = np.pad(x.values, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, in_ch * k * k)
    w_mat = weight.values.reshape(out_ch, in_ch * k * k)
    out = cols @ w_mat.T
    if bias is not None:
        out = out + bias.values
    out = out.reshape(batch, out_h, out_w, out_ch).transpose(0, 3, 1, 2)

    def bw(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        grad_w = (g_mat.T @ cols).reshape(weight.shape)
        d_cols = (g_mat @ w_mat).reshape(batch, out_h, out_w, in_ch, k, k)
        d_padded = np.zeros(padded.shape, dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                d_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                    d_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        grad_x = d_padded[:, :, padding:padding + height, padding:padding + width]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3), dtype=np.float64).astype(bias.dtype))
        return grads

    parents = [x, weight] + ([bias] if bias is not None else [])
    return _make(np.ascontiguousarray(out), parents, bw)


def concat_channels(tensors: Sequence[DiffTensor]) -> DiffTensor:
    tensors = list(tensors)
    first = tensors[0]
    for t in tensors[1:]:
        if t.ndim != first.ndim or t.shape[0] != first.shape[0] or t.shape[2:] != first.shape[2:]:
            raise ShapeError("concat_channels needs equal batch and spatial dims", first.shape, t.shape)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def bw(g):
        return np.split(g, splits, axis=1)

    return _make(np.concatenate([t.values for t in tensors], axis=1), tensors, bw)


def nearest_upsample(x: DiffTensor, factor: int = 2) -> DiffTensor:
    batch, channels, height, width = x.shape
    out = np.repeat(np.repeat(x.values, factor, axis=2), factor, axis=3)

    def bw(g):
        return [g.reshape(batch, channels, height, factor, width, factor).sum(axis=(3, 5))]

    return _make(out, [x], bw)


def channel_combine(x: DiffTensor, coefficients: Sequence[float], offset: float = 0.0) -> DiffTensor:
    """sum_c coefficients[c] * x[:, c] + offset, keeping a singleton channel axis."""
    coeffs = np.asarray(coefficients, dtype=np.float64).reshape(1, -1, 1, 1)
    if x.ndim != 4 or x.shape[1] != coeffs.shape[1]:
        raise ShapeError("channel_combine coefficient count must match channels", x.shape, coeffs.shape)
    out = ((x.values * coeffs).sum(axis=1, keepdims=True) + offset).astype(x.dtype)

    def bw(g):
        return [(g * coeffs).astype(x.dtype)]

    return _make(out, [x], bw)


def batch_norm(x: DiffTensor, gamma: DiffTensor, beta: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    """Normalise with the current batch statistics, per channel, then apply the learned affine."""
    axes = (0, 2, 3) if x.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.ndim == 4 else (1, -1)
    if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError("batch_norm affine must have one entry per channel", gamma.shape, (x.shape[1],))

    values = x.values.astype(np.float64)
    mu = values.mean(axis=axes, keepdims=True)
    var = values.var(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (values - mu) * inv_std
    g_ = gamma.values.astype(np.float64).reshape(shape)
    out = (x_hat * g_ + beta.values.reshape(shape)).astype(x.dtype)
    n = values.size // x.shape[1]

    def bw(g):
        g64 = g.astype(np.float64)
        d_gamma = (g64 * x_hat).sum(axis=axes)
        d_beta = g64.sum(axis=axes)
        d_hat = g64 * g_
        d_x = inv_std / n * (
            n * d_hat - d_hat.sum(axis=axes, keepdims=True) - x_hat * (d_hat * x_hat).sum(axis=axes, keepdims=True)
        )
        return [d_x.astype(x.dtype), d_gamma.astype(gamma.dtype), d_beta.astype(beta.dtype)]

    return _make(out, [x, gamma, beta], bw)


def l1(x: DiffTensor, y: Union[DiffTensor, np.ndarray], reduction: str = "mean") -> DiffTensor:
    """Mean (or summed) absolute difference; the subgradient at zero is 0."""
    x, y = _pair(x, y)
    if x.shape != y.shape:
        raise ShapeError("l1 operands must have equal shapes", x.shape, y.shape)
    if reduction not in ("mean", "sum"):
        raise ValueError(f"Unknown reduction '{reduction}'")
    diff = x.values.astype(np.float64) - y.values.astype(np.float64)
    norm = diff.size if reduction == "mean" else 1
    value = np.asarray(np.abs(diff).sum() / norm, dtype=x.dtype)
    sign = np.sign(diff)

    def bw(g):
        d = (np.asarray(g, dtype=np.float64) * sign / norm)
        return [d.astype(x.dtype), (-d).astype(y.dtype)]

    return _make(value, [x, y], bw)


def bce_logits(logits: DiffTensor, target: Union[float, np.ndarray]) -> DiffTensor:
    """Mean of max(z, 0) - z*t + log(1 + exp(-|z|))."""
    logits = as_tensor(logits)
    z = logits.values.astype(np.float64)
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), z.shape)
    losses = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray(losses.mean(), dtype=logits.dtype)
    n = z.size

    def bw(g):
        sigma = 0.5 * (1.0 + np.tanh(0.5 * z))
        return [(np.asarray(g, dtype=np.float64) * (sigma - t) / n).astype(logits.dtype)]

    return _make(value, [logits], bw)


def circular_filter(x: DiffTensor, taps: np.ndarray, axis: int) -> DiffTensor:
    """Circular 1-D convolution along ``axis`` computed in float64; backward is the adjoint correlation."""
    taps = np.asarray(taps, dtype=np.float64)
    out = wavelets.circular_filter(x.values.astype(np.float64), taps, axis).astype(x.dtype)

    def bw(g):
        g64 = g.astype(np.float64)
        acc = np.zeros_like(g64)
        for k, c in enumerate(taps):
            if c == 0.0:
                continue
            acc += c * np.roll(g64, -k, axis=axis)
        return [acc.astype(x.dtype)]

    return _make(out, [x], bw)


def _analysis_diff(x: DiffTensor, lo: np.ndarray, hi: np.ndarray) -> Tuple[DiffTensor, ...]:
    lo_w = circular_filter(x, lo, -1)
    hi_w = circular_filter(x, hi, -1)
    return (
        circular_filter(lo_w, lo, -2),
        circular_filter(lo_w, hi, -2),
        circular_filter(hi_w, lo, -2),
        circular_filter(hi_w, hi, -2),
    )


def swt_forward_diff(plane: DiffTensor, filt: WaveletFilter, levels: int = 1) -> Dict[str, DiffTensor]:
    """Differentiable SWT of (B, 1, H, W) planes, keyed by subband label."""
    wavelets.labels_for(levels)
    if plane.ndim != 4 or plane.shape[1] != 1:
        raise ShapeError("swt_forward_diff expects single-channel (B, 1, H, W) planes", plane.shape)
    height, width = plane.shape[2:]
    if height < filt.length or width < filt.length:
        raise wavelets.ImageTooSmallError(
            f"Image {height}x{width} is smaller than the {filt.family_name} filter support ({filt.length} taps)"
        )

    ll, lh, hl, hh = _analysis_diff(plane, *wavelets.analysis_taps(filt, 1))
    if levels == 1:
        return {"LL": ll, "LH": lh, "HL": hl, "HH": hh}
    l_ll, l_lh, l_hl, l_hh = _analysis_diff(ll, *wavelets.analysis_taps(filt, 2))
    return {"L-LL": l_ll, "L-LH": l_lh, "L-HL": l_hl, "L-HH": l_hh, "LH": lh, "HL": hl, "HH": hh}


class ParameterSet:
    """Ordered, named collection of trainable tensors."""

    def __init__(self, tensors: Optional[Dict[str, DiffTensor]] = None):
        self._tensors: Dict[str, DiffTensor] = dict(tensors or {})

    def add(self, name: str, values: np.ndarray) -> DiffTensor:
        if name in self._tensors:
            raise KeyError(f"Duplicate parameter name '{name}'")
        tensor = DiffTensor(values.astype(np.float32), requires_grad=True, name=name)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> DiffTensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterable[Tuple[str, DiffTensor]]:
        return self._tensors.items()

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.zero_grad()

    def num_elements(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._tensors.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(state)
        if missing:
            raise CheckpointFormatError(f"Checkpoint is missing parameters: {sorted(missing)}")
        for name, t in self._tensors.items():
            values = np.asarray(state[name])
            if values.shape != t.shape:
                raise ShapeError(f"Parameter '{name}' shape mismatch", values.shape, t.shape)
            t.values = values.astype(t.dtype).copy()
