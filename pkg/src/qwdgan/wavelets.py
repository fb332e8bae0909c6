"""Differentiable 2-D discrete wavelet transforms and wavelet-domain blocks.

The transform is the separable orthonormal DWT with periodic boundary
extension, so analysis is an orthogonal linear map: synthesis is both its
inverse and its adjoint, which gives exact reconstruction and makes the
backward pass of ``dwt2`` a single ``idwt2`` (and vice versa).

Subband convention for an NCHW input:
  * LL: low-pass along both axes (half-resolution approximation)
  * LH: low-pass along H, high-pass along W (differences across columns)
  * HL: high-pass along H, low-pass along W (differences across rows)
  * HH: high-pass along both axes (diagonal detail)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

_SQRT2 = math.sqrt(2.0)
_SQRT3 = math.sqrt(3.0)

_FILTERS = {
    "haar": np.array([1.0, 1.0]) / _SQRT2,
    "db2": np.array([1.0 + _SQRT3, 3.0 + _SQRT3, 3.0 - _SQRT3, 1.0 - _SQRT3]) / (4.0 * _SQRT2),
}


def dwt_filters(family: str) -> tuple[np.ndarray, np.ndarray]:
    """Analysis low/high-pass filter pair for an orthonormal family."""
    try:
        lo = _FILTERS[family]
    except KeyError:
        raise ConfigError(
            f"unknown wavelet family {family!r}; choose from {sorted(_FILTERS)}") from None
    hi = ((-1.0) ** np.arange(lo.size)) * lo[::-1]
    return lo, hi


def _analyze_axis(x: np.ndarray, lo: np.ndarray, hi: np.ndarray, axis: int):
    """One analysis step along ``axis`` with periodic extension."""
    acc_lo = np.zeros_like(x)
    acc_hi = np.zeros_like(x)
    for k, (cl, ch) in enumerate(zip(lo, hi)):
        rolled = np.roll(x, -k, axis=axis) if k else x
        acc_lo += cl * rolled
        acc_hi += ch * rolled
    keep = [slice(None)] * x.ndim
    keep[axis] = slice(0, None, 2)
    keep = tuple(keep)
    return acc_lo[keep], acc_hi[keep]


def _synthesize_axis(lo_c: np.ndarray, hi_c: np.ndarray,
                     lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    """Inverse of :func:`_analyze_axis`."""
    shape = list(lo_c.shape)
    shape[axis] *= 2
    z_lo = np.zeros(shape, dtype=np.float64)
    z_hi = np.zeros(shape, dtype=np.float64)
    put = [slice(None)] * lo_c.ndim
    put[axis] = slice(0, None, 2)
    put = tuple(put)
    z_lo[put] = lo_c
    z_hi[put] = hi_c
    out = np.zeros(shape, dtype=np.float64)
    for k, (cl, ch) in enumerate(zip(lo, hi)):
        out += cl * np.roll(z_lo, k, axis=axis) + ch * np.roll(z_hi, k, axis=axis)
    return out


def _dwt2_data(x: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    lo_w, hi_w = _analyze_axis(x, lo, hi, axis=-1)
    ll, hl = _analyze_axis(lo_w, lo, hi, axis=-2)
    lh, hh = _analyze_axis(hi_w, lo, hi, axis=-2)
    return ll, lh, hl, hh


def _idwt2_data(ll, lh, hl, hh, lo, hi) -> np.ndarray:
    lo_w = _synthesize_axis(ll, hl, lo, hi, axis=-2)
    hi_w = _synthesize_axis(lh, hh, lo, hi, axis=-2)
    return _synthesize_axis(lo_w, hi_w, lo, hi, axis=-1)


def dwt2(x: Tensor, family: str = "haar") -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """One-level DWT of an NCHW tensor; returns (LL, LH, HL, HH).

    Spatial extents must be even; callers with odd inputs should pad first
    (see :func:`pad_to_multiple`).
    """
    lo, hi = dwt_filters(family)
    h, w = x.data.shape[-2], x.data.shape[-1]
    if h % 2 or w % 2:
        raise ShapeError(
            f"dwt2 requires even spatial extents, got {h}x{w}; pad the input first")
    ll_d, lh_d, hl_d, hh_d = _dwt2_data(x.data, lo, hi)
    wants = ad._wants_grad(x)
    ll, lh = Tensor(ll_d, requires_grad=wants), Tensor(lh_d, requires_grad=wants)
    hl, hh = Tensor(hl_d, requires_grad=wants), Tensor(hh_d, requires_grad=wants)

    def _back(grads):
        if x.requires_grad:
            parts = [g if g is not None else np.zeros_like(ll_d) for g in grads]
            x.accumulate_grad(_idwt2_data(*parts, lo, hi))

    ad._emit((ll, lh, hl, hh), (x,), _back)
    return ll, lh, hl, hh


def idwt2(ll: Tensor, lh: Tensor, hl: Tensor, hh: Tensor, family: str = "haar") -> Tensor:
    """Inverse one-level DWT; exact inverse of :func:`dwt2`."""
    lo, hi = dwt_filters(family)
    shapes = {t.data.shape for t in (ll, lh, hl, hh)}
    if len(shapes) != 1:
        raise ShapeError(f"subband shapes disagree: {sorted(shapes)}")
    out_data = _idwt2_data(ll.data, lh.data, hl.data, hh.data, lo, hi)
    subbands = (ll, lh, hl, hh)
    out = Tensor(out_data, requires_grad=ad._wants_grad(*subbands))

    def _back(grads):
        (g,) = grads
        parts = _dwt2_data(g, lo, hi)
        for band, part in zip(subbands, parts):
            if band.requires_grad:
                band.accumulate_grad(part)

    ad._emit(out, subbands, _back)
    return out


@dataclass
class WaveletPyramid:
    """Multi-level DWT coefficient set.

    ``details[j]`` holds the (LH, HL, HH) tensors of level j+1;
    ``ll`` is the final approximation at the coarsest level.
    """

    levels: int
    details: list[tuple[Tensor, Tensor, Tensor]]
    ll: Tensor
    family: str

    def bands(self) -> list[tuple[str, Tensor]]:
        """All subbands with readable labels, details first, LL last."""
        out = []
        for j, (lh, hl, hh) in enumerate(self.details, start=1):
            out += [(f"L{j}.LH", lh), (f"L{j}.HL", hl), (f"L{j}.HH", hh)]
        out.append((f"L{self.levels}.LL", self.ll))
        return out

    def coefficient_count(self) -> int:
        return sum(t.size for _, t in self.bands())


def pyramid(x: Tensor, levels: int, family: str = "haar") -> WaveletPyramid:
    """Recursive DWT on the approximation band, ``levels`` times."""
    h, w = x.data.shape[-2], x.data.shape[-1]
    div = 2 ** levels
    if h % div or w % div:
        raise ShapeError(
            f"pyramid with {levels} levels requires extents divisible by {div}, got {h}x{w}")
    details = []
    ll = x
    for _ in range(levels):
        ll, lh, hl, hh = dwt2(ll, family)
        details.append((lh, hl, hh))
    return WaveletPyramid(levels=levels, details=details, ll=ll, family=family)


def inverse_pyramid(pyr: WaveletPyramid) -> Tensor:
    out = pyr.ll
    for lh, hl, hh in reversed(pyr.details):
        out = idwt2(out, lh, hl, hh, pyr.family)
    return out


def pad_to_multiple(x: Tensor, multiple: int) -> tuple[Tensor, tuple[int, int]]:
    """Reflection-pad H and W up to the next multiple; returns (padded, original extents)."""
    h, w = x.data.shape[-2], x.data.shape[-1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    return ad.reflect_pad2d(x, (0, ph, 0, pw)), (h, w)


def crop_to(x: Tensor, extents: tuple[int, int]) -> Tensor:
    h, w = extents
    if x.data.shape[-2] == h and x.data.shape[-1] == w:
        return x
    cropped = Tensor(x.data[..., :h, :w].copy(), requires_grad=ad._wants_grad(x))

    def _back(grads):
        (g,) = grads
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[..., :h, :w] = g
            x.accumulate_grad(full)

    ad._emit(cropped, (x,), _back)
    return cropped


# ---------------------------------------------------------------------------
# learnable wavelet-domain convolution
# ---------------------------------------------------------------------------

@dataclass
class WTCKernel:
    """Per-subband convolution kernels for one channel group.

    All four kernels are (C, C, k, k) with odd k, applied with same-padding
    stride 1 inside the transform domain.
    """

    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor
    group_index: int = 0

    def tensors(self) -> dict[str, Tensor]:
        return {"ll": self.ll, "lh": self.lh, "hl": self.hl, "hh": self.hh}

    def validate(self) -> None:
        shapes = {k.data.shape for k in (self.ll, self.lh, self.hl, self.hh)}
        if len(shapes) != 1:
            raise ShapeError(f"WTC kernels disagree in shape: {sorted(shapes)}")
        shape = next(iter(shapes))
        if shape[-1] % 2 == 0 or shape[-2] % 2 == 0:
            raise ShapeError(f"WTC kernels need odd spatial size, got {shape}")


def identity_wtc_kernel(channels: int, ksize: int = 3, group_index: int = 0) -> WTCKernel:
    """Kernel set that makes :func:`wtc_apply` the identity map."""
    def ident():
        k = np.zeros((channels, channels, ksize, ksize))
        for c in range(channels):
            k[c, c, ksize // 2, ksize // 2] = 1.0
        return Tensor(k, requires_grad=True)

    return WTCKernel(ll=ident(), lh=ident(), hl=ident(), hh=ident(), group_index=group_index)


def random_wtc_kernel(rng: np.random.Generator, channels: int, ksize: int = 3,
                      group_index: int = 0, scale: float | None = None) -> WTCKernel:
    fan_in = channels * ksize * ksize
    std = scale if scale is not None else math.sqrt(2.0 / fan_in)

    def draw():
        return Tensor(rng.normal(0.0, std, size=(channels, channels, ksize, ksize)),
                      requires_grad=True)

    return WTCKernel(ll=draw(), lh=draw(), hl=draw(), hh=draw(), group_index=group_index)


def wtc_apply(x_g: Tensor, kernel: WTCKernel, family: str = "haar") -> Tensor:
    """Analysis -> per-subband convolution -> synthesis, differentiable end to end."""
    kernel.validate()
    pad = kernel.ll.data.shape[-1] // 2
    ll, lh, hl, hh = dwt2(x_g, family)
    ll = ad.conv2d(ll, kernel.ll, stride=1, padding=pad)
    lh = ad.conv2d(lh, kernel.lh, stride=1, padding=pad)
    hl = ad.conv2d(hl, kernel.hl, stride=1, padding=pad)
    hh = ad.conv2d(hh, kernel.hh, stride=1, padding=pad)
    return idwt2(ll, lh, hl, hh, family)


def wcg_block(x: Tensor, kernels: list[WTCKernel],
              bn_gamma: Tensor, bn_beta: Tensor,
              running_stats: ad.RunningStats, training: bool = True,
              family: str = "haar") -> Tensor:
    """Grouped wavelet-convolution residual block.

    Channels split into ``len(kernels)`` groups; each group is batch-normed,
    passed through its wavelet-domain convolution, the groups concatenate
    back, and the input is added residually. With all kernels zero the block
    is exactly the identity.
    """
    groups = len(kernels)
    c = x.data.shape[1]
    if c % groups != 0:
        raise ShapeError(f"channel count {c} not divisible by {groups} WCG groups")
    normed = ad.batch_norm(x, bn_gamma, bn_beta, running_stats, training=training)
    parts = ad.split_channels(normed, groups)
    transformed = [wtc_apply(part, kern, family) for part, kern in zip(parts, kernels)]
    return ad.add(x, ad.concat(transformed, axis=1))


def stack_wtc_kernels(kernels: list[WTCKernel]) -> dict[str, Tensor]:
    """Per-band grouped weights equivalent to a WTCKernel list.

    Concatenating each band's per-group kernels along the output-channel
    axis yields the weight of a grouped convolution that applies every
    group's kernel to its own channel slice; used to validate
    :func:`wcg_block_grouped` against :func:`wcg_block`.
    """
    out = {}
    for band in ("ll", "lh", "hl", "hh"):
        out[band] = Tensor(np.concatenate(
            [getattr(k, band).data for k in kernels], axis=0))
    return out


def wcg_block_grouped(x: Tensor, band_weights: dict[str, Tensor], groups: int,
                      bn_gamma: Tensor, bn_beta: Tensor,
                      running_stats: ad.RunningStats, training: bool = True,
                      family: str = "haar") -> Tensor:
    """Fused form of :func:`wcg_block`.

    One DWT over all channels, one grouped convolution per subband, one
    inverse DWT; numerically identical to the per-group composition but far
    fewer operations. ``band_weights`` maps 'll'/'lh'/'hl'/'hh' to grouped
    weights of shape (C, C/groups, k, k).
    """
    c = x.data.shape[1]
    if c % groups != 0:
        raise ShapeError(f"channel count {c} not divisible by {groups} WCG groups")
    pad = band_weights["ll"].data.shape[-1] // 2
    normed = ad.batch_norm(x, bn_gamma, bn_beta, running_stats, training=training)
    ll, lh, hl, hh = dwt2(normed, family)
    ll = ad.conv2d(ll, band_weights["ll"], stride=1, padding=pad, groups=groups)
    lh = ad.conv2d(lh, band_weights["lh"], stride=1, padding=pad, groups=groups)
    hl = ad.conv2d(hl, band_weights["hl"], stride=1, padding=pad, groups=groups)
    hh = ad.conv2d(hh, band_weights["hh"], stride=1, padding=pad, groups=groups)
    return ad.add(x, idwt2(ll, lh, hl, hh, family))
