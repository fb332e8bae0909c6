"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything the two networks need lives here: the ``Tensor`` container, a
``Tape`` recording executed operations, the layer set (convolution, batch
norm, activations, resampling, dense heads), elementwise/reduction ops,
the Adam update rule, and a finite-difference gradient checker.

Conventions:
  * image batches are NCHW, row-major, 64-bit floats;
  * convolution is cross-correlation (the usual deep-learning convention);
  * operations record onto the innermost active ``Tape``; with no active
    tape the forward pass runs gradient-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

Array = np.ndarray

_TAPE_STACK: list["Tape"] = []


def _as_array(values) -> Array:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """N-dimensional float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # own the buffer
        else:
            self.grad += g

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def assert_finite(self, label: str = "tensor") -> None:
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {label}")

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; all dispatch to the module-level ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_ensure_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)


def _ensure_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class _Record:
    outputs: tuple[Tensor, ...]
    inputs: tuple[Tensor, ...]
    backward: Callable[[tuple[Array | None, ...]], None]


class Tape:
    """Ordered record of executed operations.

    Operations append in execution order, so the record is topologically
    sorted by construction; one reverse sweep propagates gradients to every
    reachable leaf.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def clear(self) -> None:
        self.records.clear()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _emit(outputs, inputs, backward) -> None:
    tape = active_tape()
    if tape is None:
        return
    outs = outputs if isinstance(outputs, tuple) else (outputs,)
    if any(o.requires_grad for o in outs):
        tape.records.append(_Record(outs, tuple(inputs), backward))


def _wants_grad(*tensors: Tensor) -> bool:
    return active_tape() is not None and any(t.requires_grad for t in tensors)


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar. The tape defaults to the innermost active one.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape or active_tape()
    if tape is None:
        raise ConfigError("backward called with no active tape")
    loss.grad = np.ones_like(loss.data)
    for record in reversed(tape.records):
        grads = tuple(o.grad for o in record.outputs)
        if all(g is None for g in grads):
            continue
        record.backward(grads)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = Tensor(a.data + b.data, requires_grad=_wants_grad(a, b))

    def _back(grads):
        (g,) = grads
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    _emit(out, (a, b), _back)
    return out


def sub(a: Tensor, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = Tensor(a.data - b.data, requires_grad=_wants_grad(a, b))

    def _back(grads):
        (g,) = grads
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    _emit(out, (a, b), _back)
    return out


def mul(a: Tensor, b) -> Tensor:
    a, b = _ensure_tensor(a), _ensure_tensor(b)
    out = Tensor(a.data * b.data, requires_grad=_wants_grad(a, b))
    a_data, b_data = a.data, b.data

    def _back(grads):
        (g,) = grads
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b_data, a_data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a_data, b_data.shape))

    _emit(out, (a, b), _back)
    return out


def mul_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c, requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * c)

    _emit(out, (x,), _back)
    return out


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + c, requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g)

    _emit(out, (x,), _back)
    return out


def absolute(x: Tensor) -> Tensor:
    """|x| elementwise; the subgradient at 0 is taken as 0."""
    out = Tensor(np.abs(x.data), requires_grad=_wants_grad(x))
    sign = np.sign(x.data)

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * sign)

    _emit(out, (x,), _back)
    return out


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data, requires_grad=_wants_grad(x))
    x_data = x.data

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * 2.0 * x_data)

    _emit(out, (x,), _back)
    return out


def sqrt(x: Tensor) -> Tensor:
    out_data = np.sqrt(x.data)
    out = Tensor(out_data, requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * 0.5 / np.maximum(out_data, 1e-300))

    _emit(out, (x,), _back)
    return out


def log(x: Tensor, floor: float = 1e-12) -> Tensor:
    """Natural log of max(x, floor); the floor stabilises adversarial terms."""
    clipped = np.maximum(x.data, floor)
    out = Tensor(np.log(clipped), requires_grad=_wants_grad(x))
    mask = (x.data >= floor).astype(np.float64)

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * mask / clipped)

    _emit(out, (x,), _back)
    return out


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = Tensor(x.data.sum(), requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, float(g)))

    _emit(out, (x,), _back)
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(x.data.mean(), requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.data, float(g) / n))

    _emit(out, (x,), _back)
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.data.shape
    out = Tensor(x.data.reshape(shape), requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g.reshape(old))

    _emit(out, (x,), _back)
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_ensure_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 requires_grad=_wants_grad(*tensors))
    extents = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + extents)

    def _back(grads):
        (g,) = grads
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(index)])

    _emit(out, tuple(tensors), _back)
    return out


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """View of channels [start, stop) of an NCHW tensor (copying)."""
    out = Tensor(x.data[:, start:stop].copy(), requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            x.accumulate_grad(full)

    _emit(out, (x,), _back)
    return out


def split_channels(x: Tensor, groups: int) -> list[Tensor]:
    channels = x.data.shape[1]
    if channels % groups != 0:
        raise ShapeError(f"channel count {channels} not divisible by {groups} groups")
    step = channels // groups
    return [channel_slice(x, g * step, (g + 1) * step) for g in range(groups)]


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) spatial mean."""
    n, c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3)), requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape).copy())

    _emit(out, (x,), _back)
    return out


def reflect_pad2d(x: Tensor, pad: tuple[int, int, int, int]) -> Tensor:
    """Symmetric-reflection pad of the two spatial axes.

    ``pad`` is (top, bottom, left, right). Uses numpy 'reflect' mode (edge
    sample not repeated), so each pad extent must be < the axis length.
    """
    top, bottom, left, right = pad
    h, w = x.data.shape[-2], x.data.shape[-1]
    if max(top, bottom) >= h or max(left, right) >= w:
        raise ShapeError(f"reflection pad {pad} too large for spatial extents {h}x{w}")
    widths = [(0, 0)] * (x.data.ndim - 2) + [(top, bottom), (left, right)]
    out = Tensor(np.pad(x.data, widths, mode="reflect"), requires_grad=_wants_grad(x))
    row_index = _reflect_indices(h, top, bottom)
    col_index = _reflect_indices(w, left, right)

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            folded_rows = np.zeros(g.shape[:-2] + (h, g.shape[-1]), dtype=np.float64)
            np.add.at(folded_rows, (..., row_index, slice(None)), g)
            folded = np.zeros(g.shape[:-2] + (h, w), dtype=np.float64)
            np.add.at(folded, (..., slice(None), col_index), folded_rows)
            x.accumulate_grad(folded)

    _emit(out, (x,), _back)
    return out


def _reflect_indices(length: int, before: int, after: int) -> Array:
    base = np.arange(length)
    head = base[1:before + 1][::-1]
    tail = base[length - after - 1:length - 1][::-1]
    return np.concatenate([head, base, tail])


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), requires_grad=_wants_grad(x))
    mask = (x.data > 0.0).astype(np.float64)

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * mask)

    _emit(out, (x,), _back)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out = Tensor(np.where(x.data > 0.0, x.data, slope * x.data),
                 requires_grad=_wants_grad(x))
    scale = np.where(x.data > 0.0, 1.0, slope)

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * scale)

    _emit(out, (x,), _back)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * s * (1.0 - s))

    _emit(out, (x,), _back)
    return out


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    out = Tensor(t, requires_grad=_wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            x.accumulate_grad(g * (1.0 - t * t))

    _emit(out, (x,), _back)
    return out


_ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d_output_shape(h: int, w: int, kh: int, kw: int,
                        stride: int, padding: int) -> tuple[int, int]:
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    return ho, wo


def _conv2d_validate(x: Tensor, weight: Tensor, bias: Tensor | None,
                     stride: int, padding: int, groups: int):
    n, cin, h, w = x.data.shape
    cout, cin_g, kh, kw = weight.data.shape
    if cin % groups != 0:
        raise ShapeError(f"input channels {cin} not divisible by groups {groups}")
    if cout % groups != 0:
        raise ShapeError(f"output channels {cout} not divisible by groups {groups}")
    if cin_g != cin // groups:
        raise ShapeError(
            f"weight expects {cin_g} channels per group but input provides {cin // groups}")
    if bias is not None and bias.data.shape != (cout,):
        raise ShapeError(f"bias shape {bias.data.shape} does not match output channels {cout}")
    ho, wo = conv2d_output_shape(h, w, kh, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"convolution output extents {ho}x{wo} invalid for input {h}x{w}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    return n, cin, h, w, cout, cin_g, kh, kw, ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, groups: int = 1) -> Tensor:
    """Grouped 2-D cross-correlation.

    x: (N, Cin, H, W); weight: (Cout, Cin/groups, kh, kw); bias: (Cout,).
    Stride-1 convolutions take a shift-and-GEMM fast path.
    """
    if stride == 1:
        return _conv2d_stride1(x, weight, bias, padding, groups)
    return _conv2d_im2col(x, weight, bias, stride, padding, groups)


def _conv2d_stride1(x: Tensor, weight: Tensor, bias: Tensor | None,
                    padding: int, groups: int) -> Tensor:
    n, cin, h, w, cout, cin_g, kh, kw, ho, wo = _conv2d_validate(
        x, weight, bias, 1, padding, groups)
    hp, wp = h + 2 * padding, w + 2 * padding
    og = cout // groups

    # channel-major padded input: group slices stay contiguous
    xpt = np.zeros((cin, n, hp, wp))
    xpt[:, :, padding:padding + h, padding:padding + w] = x.data.transpose(1, 0, 2, 3)

    out_t = None
    if bias is not None:
        out_t = np.broadcast_to(bias.data[:, None, None, None], (cout, n, ho, wo)).copy()
    else:
        out_t = np.zeros((cout, n, ho, wo))
    for g in range(groups):
        w_g = weight.data[g * og:(g + 1) * og]                      # (og,cg,kh,kw)
        x_g = xpt[g * cin_g:(g + 1) * cin_g].reshape(cin_g, -1)     # view
        w_all = w_g.transpose(2, 3, 0, 1).reshape(kh * kw * og, cin_g)
        y = (w_all @ x_g).reshape(kh, kw, og, n, hp, wp)
        acc = out_t[g * og:(g + 1) * og]
        for i in range(kh):
            for j in range(kw):
                acc += y[i, j][:, :, i:i + ho, j:j + wo]
    out = Tensor(out_t.transpose(1, 0, 2, 3).copy(),
                 requires_grad=_wants_grad(*((x, weight) if bias is None else (x, weight, bias))))

    def _back(grads):
        (g_out,) = grads
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g_out.sum(axis=(0, 2, 3)))
        need_x = x.requires_grad
        need_w = weight.requires_grad
        if not (need_x or need_w):
            return
        gxt = np.zeros((cin, n, hp, wp)) if need_x else None
        gw = np.empty_like(weight.data) if need_w else None
        go_t = g_out.transpose(1, 0, 2, 3)
        for g in range(groups):
            go_g = go_t[g * og:(g + 1) * og]
            x_g = xpt[g * cin_g:(g + 1) * cin_g]
            w_g = weight.data[g * og:(g + 1) * og]
            if need_w:
                windows = np.lib.stride_tricks.sliding_window_view(
                    x_g, (kh, kw), axis=(2, 3))      # (cg, N, ho, wo, kh, kw) view
                gw[g * og:(g + 1) * og] = np.tensordot(
                    go_g, windows, axes=([1, 2, 3], [1, 2, 3]))
            if need_x:
                go_flat = go_g.reshape(og, -1)
                w_all = w_g.transpose(2, 3, 1, 0).reshape(kh * kw * cin_g, og)
                z = (w_all @ go_flat).reshape(kh, kw, cin_g, n, ho, wo)
                acc = gxt[g * cin_g:(g + 1) * cin_g]
                for i in range(kh):
                    for j in range(kw):
                        acc[:, :, i:i + ho, j:j + wo] += z[i, j]
        if need_w:
            weight.accumulate_grad(gw)
        if need_x:
            gx = gxt[:, :, padding:padding + h, padding:padding + w]
            x.accumulate_grad(gx.transpose(1, 0, 2, 3).copy())

    _emit(out, (x, weight) if bias is None else (x, weight, bias), _back)
    return out


def _conv2d_im2col(x: Tensor, weight: Tensor, bias: Tensor | None,
                   stride: int, padding: int, groups: int) -> Tensor:
    n, cin, h, w, cout, cin_g, kh, kw, ho, wo = _conv2d_validate(
        x, weight, bias, stride, padding, groups)
    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding))
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data
    # windows: (N, Cin, Ho, Wo, kh, kw)
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]

    og = cout // groups
    cols = []   # per-group (N*Ho*Wo, cin_g*kh*kw), kept for backward
    out_data = np.empty((n, cout, ho, wo), dtype=np.float64)
    for g in range(groups):
        win_g = windows[:, g * cin_g:(g + 1) * cin_g]           # (N,cg,Ho,Wo,kh,kw)
        col = win_g.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin_g * kh * kw)
        w_g = weight.data[g * og:(g + 1) * og].reshape(og, -1)  # (og, cg*kh*kw)
        res = col @ w_g.T                                        # (N*Ho*Wo, og)
        out_data[:, g * og:(g + 1) * og] = res.reshape(n, ho, wo, og).transpose(0, 3, 1, 2)
        cols.append(col)
    if bias is not None:
        out_data += bias.data[None, :, None, None]

    inputs = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, requires_grad=_wants_grad(*inputs))

    def _back(grads):
        (g_out,) = grads
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g_out.sum(axis=(0, 2, 3)))
        need_x = x.requires_grad
        need_w = weight.requires_grad
        if not (need_x or need_w):
            return
        gx_padded = np.zeros((n, cin, h + 2 * padding, w + 2 * padding)) if need_x else None
        gw = np.zeros_like(weight.data) if need_w else None
        for g in range(groups):
            go = g_out[:, g * og:(g + 1) * og].transpose(0, 2, 3, 1).reshape(n * ho * wo, og)
            if need_w:
                gw[g * og:(g + 1) * og] = (go.T @ cols[g]).reshape(og, cin_g, kh, kw)
            if need_x:
                w_g = weight.data[g * og:(g + 1) * og].reshape(og, -1)
                gcol = (go @ w_g).reshape(n, ho, wo, cin_g, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                target = gx_padded[:, g * cin_g:(g + 1) * cin_g]
                for i in range(kh):
                    for j in range(kw):
                        target[:, :, i:i + stride * ho:stride,
                               j:j + stride * wo:stride] += gcol[:, :, i, j]
        if need_w:
            weight.accumulate_grad(gw)
        if need_x:
            if padding:
                gx_padded = gx_padded[:, :, padding:padding + h, padding:padding + w]
            x.accumulate_grad(gx_padded)

    _emit(out, inputs, _back)
    return out


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

@dataclass
class RunningStats:
    """Per-channel running mean/variance for inference-mode batch norm."""

    mean: Array
    var: Array
    momentum: float = 0.1

    @classmethod
    def create(cls, channels: int, momentum: float = 0.1) -> "RunningStats":
        return cls(mean=np.zeros(channels), var=np.ones(channels), momentum=momentum)


BN_EPS = 1e-5


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_stats: RunningStats | None = None,
               training: bool = True) -> Tensor:
    """Per-channel normalization over (N, H, W) with affine scale/shift.

    Training mode uses batch statistics (population variance) and updates the
    running stats; inference mode normalizes with the stored running stats.
    """
    n, c, h, w = x.data.shape
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"gamma/beta shapes {gamma.data.shape}/{beta.data.shape} do not match channels {c}")
    axes = (0, 2, 3)
    count = n * h * w
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_stats is not None:
            m = running_stats.momentum
            running_stats.mean = (1 - m) * running_stats.mean + m * mean
            running_stats.var = (1 - m) * running_stats.var + m * var
    else:
        if running_stats is None:
            raise ConfigError("inference-mode batch_norm requires running stats")
        mean, var = running_stats.mean, running_stats.var

    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]
    out = Tensor(out_data, requires_grad=_wants_grad(x, gamma, beta))

    def _back(grads):
        (g,) = grads
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma.accumulate_grad((g * x_hat).sum(axis=axes))
        if x.requires_grad:
            g_hat = g * gamma.data[None, :, None, None]
            if training:
                mean_g = g_hat.mean(axis=axes)
                mean_gx = (g_hat * x_hat).mean(axis=axes)
                gx = inv_std[None, :, None, None] * (
                    g_hat - mean_g[None, :, None, None] - x_hat * mean_gx[None, :, None, None])
            else:
                gx = g_hat * inv_std[None, :, None, None]
            x.accumulate_grad(gx)

    _emit(out, (x, gamma, beta), _back)
    return out


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resample(x: Tensor, mode: str) -> Tensor:
    """'down2' = 2x2 average pooling; 'up2' = nearest-neighbor x2."""
    n, c, h, w = x.data.shape
    if mode == "down2":
        if h % 2 or w % 2:
            raise ShapeError(f"down2 requires even spatial extents, got {h}x{w}")
        blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        out = Tensor(blocks.mean(axis=(3, 5)), requires_grad=_wants_grad(x))

        def _back(grads):
            (g,) = grads
            if x.requires_grad:
                spread = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25
                x.accumulate_grad(spread)

        _emit(out, (x,), _back)
        return out
    if mode == "up2":
        out = Tensor(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3),
                     requires_grad=_wants_grad(x))

        def _back(grads):
            (g,) = grads
            if x.requires_grad:
                folded = g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
                x.accumulate_grad(folded)

        _emit(out, (x,), _back)
        return out
    raise ConfigError(f"unknown resample mode {mode!r}")


# ---------------------------------------------------------------------------
# dense heads
# ---------------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """(N, D) @ (M, D)^T + (M,) -> (N, M)."""
    n, d = x.data.shape
    m, dw = weight.data.shape
    if d != dw:
        raise ShapeError(f"linear input features {d} do not match weight features {dw}")
    out = Tensor(x.data @ weight.data.T + bias.data[None, :],
                 requires_grad=_wants_grad(x, weight, bias))

    def _back(grads):
        (g,) = grads
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if weight.requires_grad:
            weight.accumulate_grad(g.T @ x.data)
        if x.requires_grad:
            x.accumulate_grad(g @ weight.data)

    _emit(out, (x, weight, bias), _back)
    return out


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map (N, D) x (1, D) + scalar -> (N, 1)."""
    if w.data.ndim != 2 or w.data.shape[0] != 1:
        raise ShapeError(f"dense weight must have shape (1, D), got {w.data.shape}")
    if b.data.size != 1:
        raise ShapeError(f"dense bias must be a scalar, got shape {b.data.shape}")
    bias_vec = reshape(b, (1,))
    return linear(x, w, bias_vec)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Bias-corrected Adam state for a named parameter collection."""

    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    def ensure(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)


def adam_step(params: dict[str, Tensor], state: AdamState,
              grads: dict[str, Array] | None = None) -> None:
    """One in-place Adam update; missing gradients are treated as zero."""
    state.ensure(params)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} mismatches parameter {name} {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)


def zero_grads(params: Iterable[Tensor] | dict[str, Tensor]) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.zero_grad()


def clip_grad_norm(params: Iterable[Tensor] | dict[str, Tensor],
                   max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm. Missing gradients count as zero.
    """
    values = list(params.values() if isinstance(params, dict) else params)
    total = 0.0
    for p in values:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in values:
            if p.grad is not None:
                p.grad *= scale
    return norm


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               probe_count: int = 5, h: float = 1e-5, seed: int = 0) -> float:
    """Compare analytic gradients of ``fn`` against central finite differences.

    ``fn`` maps the given tensors to a scalar Tensor. For each input marked
    requires_grad, ``probe_count`` random elements are perturbed by ±h and the
    centered difference quotient is compared to the analytic gradient. The
    relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
    near-zero gradients are judged on an absolute scale. Returns the maximum
    relative error over all probes.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.zero_grad()
    with Tape():
        loss = fn(*inputs)
        backward(loss)
    worst = 0.0
    for x in inputs:
        if not x.requires_grad:
            continue
        if x.grad is None:
            raise NumericError(f"no gradient reached input {x.name or x.shape}")
        flat = x.data.reshape(-1)
        grad_flat = x.grad.reshape(-1)
        count = min(probe_count, flat.size)
        idx = rng.choice(flat.size, size=count, replace=False)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            up = fn(*inputs).item()
            flat[i] = keep - h
            down = fn(*inputs).item()
            flat[i] = keep
            numeric = (up - down) / (2.0 * h)
            analytic = grad_flat[i]
            denom = max(abs(analytic), abs(numeric), 1e-3)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Array:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)
