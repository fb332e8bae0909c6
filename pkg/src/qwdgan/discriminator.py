"""Quality-aware dual-branch discriminator.

A convolutional spatial branch extracts features F; a quality branch turns
the raw image into a local-entropy map which gates F (per position in
'spatial' mode, per channel in 'channel' mode). The gated features pool to
a vector and a sigmoid head produces the realness score. The quality branch
is a fixed perceptual prior: no gradient flows through it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .errors import ConfigError, ShapeError
from .generator import _bn_params, _he_conv, residual_block

FUSION_MODES = ("spatial", "channel", "none")


@dataclass
class QualityMap:
    """Non-negative per-pixel quality features (local Shannon entropy)."""

    values: np.ndarray          # (N, 1, H, W), in [0, log2(bins)]
    window: int
    bins: int


def _box_sum(x: np.ndarray, window: int) -> np.ndarray:
    """Sliding window-sum over the two trailing axes via integral images."""
    c = x.cumsum(axis=-2).cumsum(axis=-1)
    c = np.pad(c, [(0, 0)] * (c.ndim - 2) + [(1, 0), (1, 0)])
    return (c[..., window:, window:] - c[..., :-window, window:]
            - c[..., window:, :-window] + c[..., :-window, :-window])


def entropy_map(x: np.ndarray, window: int = 7, bins: int = 16) -> QualityMap:
    """Shannon entropy (bits) of the intensity histogram in each window.

    Values are clipped to [0,1] before binning; borders are reflection
    padded, so the output matches the input extents.
    """
    if window < 3 or window % 2 == 0:
        raise ConfigError(f"entropy window must be odd and >= 3, got {window}")
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None, None]
    if arr.ndim != 4 or arr.shape[1] != 1:
        raise ShapeError(f"entropy_map expects (N,1,H,W) or (H,W), got {arr.shape}")
    index = np.minimum((np.clip(arr, 0.0, 1.0) * bins).astype(np.int64), bins - 1)
    pad = window // 2
    padded = np.pad(index, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="reflect")
    area = float(window * window)
    entropy = np.zeros_like(arr)
    for b in range(bins):
        counts = _box_sum((padded == b).astype(np.float64), window)
        prob = counts / area
        term = np.zeros_like(prob)
        np.log2(prob, out=term, where=prob > 0)
        entropy -= prob * term
    entropy = np.maximum(entropy, 0.0)
    return QualityMap(values=entropy, window=window, bins=bins)


def iqa_features(x: np.ndarray, windows: tuple[int, ...] = (3, 7, 11),
                 bins: int = 16) -> list[QualityMap]:
    """Multi-scale quality feature stack (one entropy map per window size)."""
    return [entropy_map(x, window=w, bins=bins) for w in windows]


def _pool_to(values: np.ndarray, hf: int, wf: int) -> np.ndarray:
    """Average-pool a (N,1,H,W) map down to (N,1,hf,wf); extents must divide."""
    n, c, h, w = values.shape
    if h % hf or w % wf:
        raise ShapeError(f"quality map {h}x{w} not divisible down to {hf}x{wf}")
    return values.reshape(n, c, hf, h // hf, wf, w // wf).mean(axis=(3, 5))


def spatial_modulate(features: Tensor, phi: QualityMap) -> Tensor:
    """Gate features per position by phi / max(phi) (per sample).

    The gate is identical across channels and carries no gradient. A
    degenerate all-zero map (constant image) gates with ones.
    """
    n, c, hf, wf = features.data.shape
    pooled = _pool_to(phi.values, hf, wf)
    peak = pooled.max(axis=(1, 2, 3), keepdims=True)
    gate = np.where(peak > 0, pooled / np.where(peak > 0, peak, 1.0), 1.0)
    return ad.mul(features, Tensor(gate))


@dataclass
class DiscriminatorConfig:
    in_channels: int = 1
    base_channels: int = 16
    entropy_window: int = 7
    entropy_bins: int = 16
    fusion_mode: str = "spatial"
    iqa_off: bool = False

    def conv_channels(self) -> list[int]:
        b = self.base_channels
        return [b, 2 * b, 4 * b, 4 * b]

    def validate(self) -> None:
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(
                f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.entropy_window % 2 == 0 or self.entropy_window < 3:
            raise ConfigError("entropy_window must be odd and >= 3")


@dataclass
class Discriminator:
    config: DiscriminatorConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    stats: dict[str, RunningStats] = field(default_factory=dict)

    @classmethod
    def build(cls, config: DiscriminatorConfig, seed: int = 0) -> "Discriminator":
        config.validate()
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(23,)))
        d = cls(config=config)
        p, st = d.params, d.stats
        chans = config.conv_channels()
        cin = config.in_channels
        for i, cout in enumerate(chans):
            w, b = _he_conv(rng, cin, cout, 3)
            p[f"b{i}.w"], p[f"b{i}.b"] = w, b
            if i > 0:  # first block runs without normalization
                p[f"b{i}.bn.gamma"], p[f"b{i}.bn.beta"] = _bn_params(cout)
                st[f"b{i}.bn"] = RunningStats.create(cout)
            cin = cout
        c = chans[-1]
        for tag, sub in (("conv1", c), ("conv2", c)):
            w, b = _he_conv(rng, c, c, 3)
            p[f"res.{tag}.w"], p[f"res.{tag}.b"] = w, b
        p["res.bn.gamma"], p["res.bn.beta"] = _bn_params(c)
        st["res.bn"] = RunningStats.create(c)
        head_in = c
        if not config.iqa_off and config.fusion_mode == "none":
            head_in += 1  # pooled quality mean joins the feature vector
        if not config.iqa_off and config.fusion_mode == "channel":
            p["fuse.stats.w"] = Tensor(rng.normal(0.0, 0.1, size=(c, 2)), requires_grad=True)
            p["fuse.stats.b"] = Tensor(np.zeros(c), requires_grad=True)
        p["head.w"] = Tensor(rng.normal(0.0, math.sqrt(1.0 / head_in), size=(1, head_in)),
                             requires_grad=True)
        p["head.b"] = Tensor(np.zeros(1), requires_grad=True)
        return d

    def quality_map(self, x: np.ndarray) -> QualityMap:
        return entropy_map(x, self.config.entropy_window, self.config.entropy_bins)

    def forward(self, x: Tensor, training: bool = True) -> Tensor:
        """Score an (N,1,H,W) batch; returns (N,1) probabilities in (0,1)."""
        cfg, p = self.config, self.params
        if x.data.ndim != 4 or x.data.shape[1] != cfg.in_channels:
            raise ShapeError(
                f"discriminator expects (N,{cfg.in_channels},H,W), got {x.data.shape}")
        f = x
        for i in range(4):
            f = ad.conv2d(f, p[f"b{i}.w"], p[f"b{i}.b"], stride=2, padding=1)
            if i > 0:
                f = ad.batch_norm(f, p[f"b{i}.bn.gamma"], p[f"b{i}.bn.beta"],
                                  self.stats[f"b{i}.bn"], training=training)
            f = ad.leaky_relu(f)
        f = residual_block(
            f, p["res.conv1.w"], p["res.conv1.b"],
            p["res.bn.gamma"], p["res.bn.beta"], self.stats["res.bn"],
            p["res.conv2.w"], p["res.conv2.b"], training=training)

        phi: QualityMap | None = None
        if not cfg.iqa_off:
            phi = self.quality_map(x.data)  # detached: quality prior is fixed
        if phi is not None and cfg.fusion_mode == "spatial":
            f = spatial_modulate(f, phi)
        elif phi is not None and cfg.fusion_mode == "channel":
            norm = phi.values / math.log2(cfg.entropy_bins)
            feats = np.stack([norm.mean(axis=(1, 2, 3)), norm.std(axis=(1, 2, 3))], axis=1)
            gates = ad.sigmoid(ad.linear(Tensor(feats), p["fuse.stats.w"], p["fuse.stats.b"]))
            f = ad.mul(f, ad.reshape(gates, gates.data.shape + (1, 1)))

        z = ad.global_avg_pool(f)
        if phi is not None and cfg.fusion_mode == "none":
            norm = phi.values / math.log2(cfg.entropy_bins)
            z = ad.concat([z, Tensor(norm.mean(axis=(1, 2, 3), keepdims=False)[:, None])],
                          axis=1)
        score = ad.linear(z, p["head.w"], p["head.b"])
        return ad.sigmoid(score)

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())
