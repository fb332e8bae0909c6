"""Training objectives for the generator and discriminator.

Distance terms use means rather than sums inside their norms so the loss
weights stay resolution-independent. The adversarial form is non-saturating
binary cross-entropy with epsilon-stabilized logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .discriminator import iqa_features
from .errors import ConfigError, ShapeError
from .wavelets import pyramid


@dataclass
class CompositeLossWeights:
    """Weights for the composite generator objective.

    lambda* weight the reconstruction/perceptual/wavelet composite;
    mu* weight the L1 and quality terms of the adversarial objective
    (named differently to keep the two weight sets distinct).
    """

    lambda1_recon: float = 1.0
    lambda2_percep: float = 0.1
    lambda3_wavelet: float = 0.5
    mu1_l1: float = 100.0
    mu2_iqa: float = 15.0

    def validate(self) -> None:
        for name in ("lambda1_recon", "lambda2_percep", "lambda3_wavelet",
                     "mu1_l1", "mu2_iqa"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


class PerceptualExtractor:
    """Fixed random conv stack standing in for a pretrained feature network.

    Three stride-2 conv/leaky-relu stages with seeded immutable weights;
    same seed always yields identical features, and the spatial layout of
    the stages keeps the resulting distance sensitive to pixel arrangement.
    """

    def __init__(self, in_channels: int = 1, width: int = 8, seed: int = 7):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(31,)))
        self.stages: list[tuple[Tensor, Tensor]] = []
        cin = in_channels
        for _ in range(3):
            fan = cin * 9
            w = Tensor(rng.normal(0.0, math.sqrt(2.0 / fan), size=(width, cin, 3, 3)))
            b = Tensor(rng.normal(0.0, 0.05, size=(width,)))
            self.stages.append((w, b))
            cin = width

    def features(self, x: Tensor) -> list[Tensor]:
        out = []
        f = x
        for w, b in self.stages:
            f = ad.leaky_relu(ad.conv2d(f, w, b, stride=2, padding=1))
            out.append(f)
        return out


def _check_shapes(yhat: Tensor, y: Tensor) -> None:
    if yhat.data.shape != y.data.shape:
        raise ShapeError(f"prediction/target shapes differ: "
                         f"{yhat.data.shape} vs {y.data.shape}")


def l_recon(yhat: Tensor, y: Tensor) -> Tensor:
    """Mean absolute error."""
    _check_shapes(yhat, y)
    return ad.mean_all(ad.absolute(ad.sub(yhat, y)))


def l_percep(yhat: Tensor, y: Tensor, extractor: PerceptualExtractor) -> Tensor:
    """Sum over stages of the RMS feature difference (L2 norm, mean-scaled)."""
    _check_shapes(yhat, y)
    total = None
    for fh, fy in zip(extractor.features(yhat), extractor.features(y)):
        term = ad.sqrt(ad.mean_all(ad.square(ad.sub(fh, fy))))
        total = term if total is None else ad.add(total, term)
    return total


def l_wavelet(yhat: Tensor, y: Tensor, levels: int = 2, family: str = "haar") -> Tensor:
    """Sum over pyramid bands of mean absolute coefficient differences."""
    _check_shapes(yhat, y)
    ph = pyramid(yhat, levels, family)
    py = pyramid(y, levels, family)
    total = None
    for (_, bh), (_, by) in zip(ph.bands(), py.bands()):
        term = ad.mean_all(ad.absolute(ad.sub(bh, by)))
        total = term if total is None else ad.add(total, term)
    return total


def l_total_composite(yhat: Tensor, y: Tensor, weights: CompositeLossWeights,
                      extractor: PerceptualExtractor, levels: int = 2,
                      family: str = "haar") -> Tensor:
    """lambda1*recon + lambda2*percep + lambda3*wavelet."""
    total = ad.mul_scalar(l_recon(yhat, y), weights.lambda1_recon)
    total = ad.add(total, ad.mul_scalar(l_percep(yhat, y, extractor), weights.lambda2_percep))
    return ad.add(total, ad.mul_scalar(l_wavelet(yhat, y, levels, family),
                                       weights.lambda3_wavelet))


def l_iqa(x_real: np.ndarray, x_fake: np.ndarray,
          windows: tuple[int, ...] = (3, 7, 11), bins: int = 16) -> Tensor:
    """Squared L2 distance between multi-window quality feature stacks.

    The quality features are histogram entropies of the pixel values, a
    fixed perceptual prior: the term is constant with respect to the tape
    (zero gradient), mirroring the stop-gradient quality branch.
    """
    if x_real.shape != x_fake.shape:
        raise ShapeError(f"real/fake shapes differ: {x_real.shape} vs {x_fake.shape}")
    total = 0.0
    for fr, ff in zip(iqa_features(x_real, windows, bins),
                      iqa_features(x_fake, windows, bins)):
        total += float(np.mean((fr.values - ff.values) ** 2))
    return Tensor(total)


def _one_minus(x: Tensor) -> Tensor:
    return ad.add_scalar(ad.mul_scalar(x, -1.0), 1.0)


def l_gan_g(d_fake: Tensor) -> Tensor:
    """Non-saturating generator term: -log D(fake), batch mean."""
    return ad.mul_scalar(ad.mean_all(ad.log(d_fake)), -1.0)


def l_gan_d(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator term: -log D(real) - log(1 - D(fake)), batch means."""
    real_term = ad.mul_scalar(ad.mean_all(ad.log(d_real)), -1.0)
    fake_term = ad.mul_scalar(ad.mean_all(ad.log(_one_minus(d_fake))), -1.0)
    return ad.add(real_term, fake_term)


def l_generator_final(yhat: Tensor, y: Tensor, d_fake: Tensor,
                      weights: CompositeLossWeights,
                      iqa_value: Tensor | None = None) -> Tensor:
    """Adversarial objective: gan + mu1*recon + mu2*iqa."""
    total = ad.add(l_gan_g(d_fake), ad.mul_scalar(l_recon(yhat, y), weights.mu1_l1))
    if iqa_value is None:
        iqa_value = l_iqa(y.data, yhat.data)
    return ad.add(total, ad.mul_scalar(iqa_value, weights.mu2_iqa))
