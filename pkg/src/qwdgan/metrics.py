"""Evaluation metrics: PSNR, SSIM, radial power spectra, the high-frequency
retention ratio (HFRR), and wavelet-domain MAE.

All functions take plain numpy images (2-D grayscale, or leading channel
axis) in their natural range; nothing here touches the autodiff tape.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .ioutil import atomic_write_text
from .autodiff import Tensor
from .wavelets import pyramid


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(yhat: np.ndarray, y: np.ndarray, peak: float = 1.0) -> float:
    """10·log10(peak²/MSE) in dB; identical images give +inf."""
    _check_pair(yhat, y)
    if peak <= 0:
        raise ShapeError(f"peak must be positive, got {peak}")
    mse = float(np.mean((np.asarray(yhat, dtype=np.float64) - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(yhat: np.ndarray, y: np.ndarray, window: int = 8,
         k1: float = 0.01, k2: float = 0.03, peak: float = 1.0) -> float:
    """Mean local SSIM over sliding uniform windows (population moments)."""
    _check_pair(yhat, y)
    a = np.asarray(yhat, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim == 3:  # channel axis: average per-channel scores
        return float(np.mean([ssim(a[c], b[c], window, k1, k2, peak) for c in range(a.shape[0])]))
    if a.ndim != 2:
        raise ShapeError(f"ssim expects 2-D images, got shape {a.shape}")
    if min(a.shape) < window:
        raise ShapeError(f"image {a.shape} smaller than ssim window {window}")
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2

    def win_mean(img):
        v = np.lib.stride_tricks.sliding_window_view(img, (window, window))
        return v.mean(axis=(2, 3))

    mu_a = win_mean(a)
    mu_b = win_mean(b)
    var_a = win_mean(a * a) - mu_a ** 2
    var_b = win_mean(b * b) - mu_b ** 2
    cov = win_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

@dataclass
class RadialSpectrum:
    """Radially averaged power, binned over rho in [0, 0.5] cycles/pixel."""

    rho: np.ndarray
    power: np.ndarray
    counts: np.ndarray

    def write_csv(self, path) -> None:
        lines = ["rho,power"]
        lines += [f"{r:.6f},{p:.10e}" for r, p in zip(self.rho, self.power)]
        atomic_write_text(path, "\n".join(lines) + "\n")


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def _pad_pow2_square(x: np.ndarray) -> np.ndarray:
    h, w = x.shape
    target = _next_pow2(max(h, w))
    if h == target and w == target:
        return x
    return np.pad(x, ((0, target - h), (0, target - w)), mode="reflect")


def power_spectrum(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized 2-D power spectrum and the radial-frequency grid.

    Input is reflection-padded to a power-of-two square; power is |F|²/Ntot
    so the total equals the image energy (Parseval).
    """
    if x.ndim != 2:
        raise ShapeError(f"power_spectrum expects a 2-D image, got {x.shape}")
    xp = _pad_pow2_square(np.asarray(x, dtype=np.float64))
    n = xp.shape[0]
    spectrum = np.fft.fftshift(np.fft.fft2(xp))
    power = (spectrum.real ** 2 + spectrum.imag ** 2) / xp.size
    freqs = np.fft.fftshift(np.fft.fftfreq(n))
    rho = np.hypot(freqs[:, None], freqs[None, :])
    return power, rho


def radial_spectrum(x: np.ndarray, n_bins: int = 16) -> RadialSpectrum:
    """Mean power within annular bins of radial frequency (DC in bin 0)."""
    power, rho = power_spectrum(x)
    edges = np.linspace(0.0, 0.5, n_bins + 1)
    edges[-1] += 1e-12  # keep the Nyquist axis frequencies in the last bin
    which = np.digitize(rho.ravel(), edges) - 1
    valid = (which >= 0) & (which < n_bins)
    counts = np.bincount(which[valid], minlength=n_bins)
    sums = np.bincount(which[valid], weights=power.ravel()[valid], minlength=n_bins)
    mean_power = np.divide(sums, counts, out=np.zeros(n_bins), where=counts > 0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    centers[-1] = 0.5 * (edges[-2] + 0.5)
    return RadialSpectrum(rho=centers, power=mean_power, counts=counts)


def high_frequency_energy(x: np.ndarray, cutoff: float = 0.25) -> float:
    """Total spectral energy strictly above the radial cutoff."""
    power, rho = power_spectrum(x)
    return float(power[rho > cutoff].sum())


def hfrr(yhat: np.ndarray, y: np.ndarray, cutoff: float = 0.25) -> float:
    """High-frequency retention ratio: HF spectral energy of the estimate
    over that of the reference. 1 is ideal; < 1 flags over-smoothing and
    > 1 flags retained noise.
    """
    _check_pair(yhat, y)
    den = high_frequency_energy(y, cutoff)
    total = float(np.sum(np.asarray(y, dtype=np.float64) ** 2))
    if den <= 1e-15 * max(total, 1.0):
        raise NumericError(
            f"reference has no energy above cutoff {cutoff}; HFRR is undefined")
    return high_frequency_energy(yhat, cutoff) / den


def wavelet_mae(yhat: np.ndarray, y: np.ndarray, levels: int = 2,
                family: str = "haar") -> float:
    """Mean absolute coefficient difference over all pyramid bands."""
    _check_pair(yhat, y)
    a = np.asarray(yhat, dtype=np.float64).reshape((1, 1) + yhat.shape[-2:])
    b = np.asarray(y, dtype=np.float64).reshape((1, 1) + y.shape[-2:])
    pa = pyramid(Tensor(a), levels, family)
    pb = pyramid(Tensor(b), levels, family)
    total = 0.0
    count = 0
    for (_, band_a), (_, band_b) in zip(pa.bands(), pb.bands()):
        total += float(np.abs(band_a.data - band_b.data).sum())
        count += band_a.size
    return total / count


def gaussian_blur(x: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian blur with reflection padding (baseline method)."""
    if sigma <= 0:
        return np.asarray(x, dtype=np.float64).copy()
    radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (t / sigma) ** 2)
    kernel /= kernel.sum()

    def convolve_axis(img, axis):
        moved = np.moveaxis(img, axis, -1)
        padded = np.pad(moved, [(0, 0)] * (moved.ndim - 1) + [(radius, radius)], mode="reflect")
        windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=-1)
        return np.moveaxis(windows @ kernel, -1, axis)

    out = np.asarray(x, dtype=np.float64)
    out = convolve_axis(out, -1)
    out = convolve_axis(out, -2)
    return out


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("psnr_db", "ssim", "hfrr", "wavelet_mae")


@dataclass
class ImageMetrics:
    image_id: str
    method: str
    noise_level: str
    psnr_db: float
    ssim: float
    hfrr: float
    wavelet_mae: float


@dataclass
class MetricsReport:
    """Per-image metric rows plus aggregate means per method."""

    rows: list[ImageMetrics] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, row: ImageMetrics) -> None:
        self.rows.append(row)

    def methods(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def aggregate(self, method: str) -> dict[str, float]:
        chosen = [r for r in self.rows if r.method == method]
        if not chosen:
            raise ShapeError(f"no rows for method {method!r}")
        return {c: float(np.mean([getattr(r, c) for r in chosen])) for c in METRIC_COLUMNS}

    def write_csv(self, path) -> None:
        lines = ["image_id,method,noise_level,psnr_db,ssim,hfrr,wavelet_mae"]
        for r in self.rows:
            lines.append(
                f"{r.image_id},{r.method},{r.noise_level},"
                f"{r.psnr_db:.6f},{r.ssim:.6f},{r.hfrr:.6f},{r.wavelet_mae:.8f}")
        atomic_write_text(path, "\n".join(lines) + "\n")


def compute_image_metrics(yhat: np.ndarray, y: np.ndarray, image_id: str,
                          method: str, noise_level: str, peak: float = 1.0,
                          hfrr_cutoff: float = 0.25, wavelet_levels: int = 2,
                          family: str = "haar") -> ImageMetrics:
    return ImageMetrics(
        image_id=image_id,
        method=method,
        noise_level=noise_level,
        psnr_db=psnr(yhat, y, peak),
        ssim=ssim(yhat, y, peak=peak),
        hfrr=hfrr(yhat, y, hfrr_cutoff),
        wavelet_mae=wavelet_mae(yhat, y, wavelet_levels, family),
    )


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
