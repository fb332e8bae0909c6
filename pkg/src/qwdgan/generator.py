"""Dual-branch multi-scale denoising generator.

Per scale, a wavelet-convolution branch (grouped wavelet-domain residual
blocks) runs beside a plain residual-convolution branch; a difference-gated
fusion stage merges them and feeds both the next scale and a decoder skip.
The network predicts a residual correction added to its input, so with a
zero-initialized output head it is exactly the identity map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .errors import ConfigError, ShapeError
from .wavelets import wcg_block_grouped


@dataclass
class GeneratorConfig:
    in_channels: int = 1
    base_channels: int = 16
    scales: int = 3
    wcg_groups: int = 4
    blocks_per_scale: int = 1
    wavelet_family: str = "haar"
    max_channels: int = 32
    wtc_kernel_size: int = 3
    # ablation switches (architecture-level)
    fsff_off: bool = False
    wavelet_branch_off: bool = False
    wcg_off: bool = False
    naive_fusion: bool = False

    def channels_at(self, scale: int) -> int:
        return min(self.base_channels << scale, self.max_channels)

    def validate(self) -> None:
        if self.scales < 1:
            raise ConfigError(f"generator needs >= 1 scale, got {self.scales}")
        if self.blocks_per_scale < 1:
            raise ConfigError("blocks_per_scale must be >= 1")
        if self.base_channels % self.wcg_groups:
            raise ConfigError(
                f"base_channels {self.base_channels} not divisible by "
                f"wcg_groups {self.wcg_groups}")
        if self.fsff_off and self.naive_fusion:
            raise ConfigError("fsff_off and naive_fusion are mutually exclusive")
        if self.wtc_kernel_size % 2 == 0:
            raise ConfigError("wtc_kernel_size must be odd")


def _he_conv(rng, cin: int, cout: int, k: int, scale: float = 1.0):
    fan_in = cin * k * k
    w = Tensor(rng.normal(0.0, scale * math.sqrt(2.0 / fan_in), size=(cout, cin, k, k)),
               requires_grad=True)
    b = Tensor(np.zeros(cout), requires_grad=True)
    return w, b


def _zero_conv(cin: int, cout: int, k: int):
    w = Tensor(np.zeros((cout, cin, k, k)), requires_grad=True)
    b = Tensor(np.zeros(cout), requires_grad=True)
    return w, b


def _bn_params(channels: int):
    gamma = Tensor(np.ones(channels), requires_grad=True)
    beta = Tensor(np.zeros(channels), requires_grad=True)
    return gamma, beta


# ---------------------------------------------------------------------------
# building blocks (functional, explicit parameters)
# ---------------------------------------------------------------------------

def residual_block(x: Tensor, conv1_w, conv1_b, bn_gamma, bn_beta,
                   stats: RunningStats, conv2_w, conv2_b,
                   training: bool = True) -> Tensor:
    """conv -> batch norm -> relu -> conv, plus the input skip."""
    h = ad.conv2d(x, conv1_w, conv1_b, padding=conv1_w.data.shape[-1] // 2)
    h = ad.batch_norm(h, bn_gamma, bn_beta, stats, training=training)
    h = ad.relu(h)
    h = ad.conv2d(h, conv2_w, conv2_b, padding=conv2_w.data.shape[-1] // 2)
    return ad.add(x, h)


def fsff_fuse(f_wavelet: Tensor, f_spatial: Tensor,
              proj_w_w, proj_w_b, proj_s_w, proj_s_b,
              attn_w, attn_b) -> Tensor:
    """Difference-gated convex fusion of the two branch features.

    Both branches pass a 1x1 projection; a gate A = sigmoid(conv(|pw - ps|))
    then mixes them as A*pw + (1-A)*ps, so every fused element lies between
    the two projected features.
    """
    pw = ad.conv2d(f_wavelet, proj_w_w, proj_w_b)
    ps = ad.conv2d(f_spatial, proj_s_w, proj_s_b)
    if pw.data.shape != ps.data.shape:
        raise ShapeError(
            f"projected branch shapes differ: {pw.data.shape} vs {ps.data.shape}")
    diff = ad.absolute(ad.sub(pw, ps))
    gate = ad.sigmoid(ad.conv2d(diff, attn_w, attn_b, padding=attn_w.data.shape[-1] // 2))
    keep = ad.add_scalar(ad.mul_scalar(gate, -1.0), 1.0)
    return ad.add(ad.mul(gate, pw), ad.mul(keep, ps))


def naive_fuse(f_wavelet: Tensor, f_spatial: Tensor, w, b) -> Tensor:
    """Difference-blind fusion: channel concat followed by a 1x1 convolution."""
    return ad.conv2d(ad.concat([f_wavelet, f_spatial], axis=1), w, b)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

@dataclass
class Generator:
    """Owns the named parameter map, batch-norm buffers, and the forward pass."""

    config: GeneratorConfig
    params: dict[str, Tensor] = field(default_factory=dict)
    stats: dict[str, RunningStats] = field(default_factory=dict)

    @classmethod
    def build(cls, config: GeneratorConfig, seed: int = 0) -> "Generator":
        config.validate()
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
        g = cls(config=config)
        p, st = g.params, g.stats
        cfg = config
        ksize = 3

        def add_conv(name, cin, cout, k=ksize, scale=1.0, zero=False):
            w, b = _zero_conv(cin, cout, k) if zero else _he_conv(rng, cin, cout, k, scale)
            p[f"{name}.w"], p[f"{name}.b"] = w, b

        def add_bn(name, channels):
            p[f"{name}.gamma"], p[f"{name}.beta"] = _bn_params(channels)
            st[name] = RunningStats.create(channels)

        def add_res_block(name, channels):
            add_conv(f"{name}.conv1", channels, channels)
            add_bn(f"{name}.bn", channels)
            add_conv(f"{name}.conv2", channels, channels)

        add_conv("stem", cfg.in_channels, cfg.channels_at(0))
        for s in range(cfg.scales):
            c = cfg.channels_at(s)
            if c % cfg.wcg_groups:
                raise ConfigError(
                    f"channels {c} at scale {s} not divisible by wcg_groups {cfg.wcg_groups}")
            for i in range(cfg.blocks_per_scale):
                add_res_block(f"enc{s}.spatial{i}", c)
                if cfg.wavelet_branch_off:
                    continue
                if cfg.wcg_off:
                    add_res_block(f"enc{s}.wavelet{i}", c)
                else:
                    add_bn(f"enc{s}.wavelet{i}.wcg.bn", c)
                    cg = c // cfg.wcg_groups
                    fan = cg * cfg.wtc_kernel_size ** 2
                    for band in ("ll", "lh", "hl", "hh"):
                        # grouped weight: group g's kernels sit in rows [g*cg, (g+1)*cg)
                        p[f"enc{s}.wavelet{i}.wcg.{band}"] = Tensor(
                            rng.normal(0.0, math.sqrt(1.0 / fan),
                                       size=(c, cg, cfg.wtc_kernel_size,
                                             cfg.wtc_kernel_size)),
                            requires_grad=True)
                if cfg.naive_fusion:
                    add_conv(f"enc{s}.fuse{i}.naive", 2 * c, c, k=1)
                elif not cfg.fsff_off:
                    add_conv(f"enc{s}.fuse{i}.proj_w", c, c, k=1)
                    add_conv(f"enc{s}.fuse{i}.proj_s", c, c, k=1)
                    # single-channel gate shared across channels
                    add_conv(f"enc{s}.fuse{i}.attn", c, 1, scale=0.01)
            if s < cfg.scales - 1:
                add_conv(f"down{s}", c, cfg.channels_at(s + 1))
        for s in range(cfg.scales - 2, -1, -1):
            c = cfg.channels_at(s)
            add_conv(f"dec{s}.reduce", cfg.channels_at(s + 1), c, k=1)
            add_conv(f"dec{s}.merge", 2 * c, c, k=1)
            add_conv(f"dec{s}.conv", c, c)
        add_conv("out", cfg.channels_at(0), cfg.in_channels, zero=True)
        return g

    # -- forward ----------------------------------------------------------

    def _wavelet_weights(self, prefix: str) -> dict[str, Tensor]:
        return {band: self.params[f"{prefix}.{band}"]
                for band in ("ll", "lh", "hl", "hh")}

    def _res(self, x: Tensor, name: str, training: bool) -> Tensor:
        p = self.params
        return residual_block(
            x, p[f"{name}.conv1.w"], p[f"{name}.conv1.b"],
            p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"], self.stats[f"{name}.bn"],
            p[f"{name}.conv2.w"], p[f"{name}.conv2.b"], training=training)

    def _fuse(self, fw: Tensor, fs: Tensor, name: str) -> Tensor:
        cfg, p = self.config, self.params
        if cfg.naive_fusion:
            return naive_fuse(fw, fs, p[f"{name}.naive.w"], p[f"{name}.naive.b"])
        if cfg.fsff_off:
            return ad.add(fw, fs)
        return fsff_fuse(
            fw, fs,
            p[f"{name}.proj_w.w"], p[f"{name}.proj_w.b"],
            p[f"{name}.proj_s.w"], p[f"{name}.proj_s.b"],
            p[f"{name}.attn.w"], p[f"{name}.attn.b"])

    def forward(self, noisy: Tensor, training: bool = True,
                internals: dict | None = None) -> Tensor:
        """Denoise an NCHW batch; output = input + predicted correction.

        Inference mode (training=False) additionally clamps to [0,1].
        """
        cfg, p = self.config, self.params
        n, c, h, w = noisy.data.shape
        div = 2 ** cfg.scales
        if c != cfg.in_channels:
            raise ShapeError(f"expected {cfg.in_channels} input channels, got {c}")
        if h % div or w % div:
            raise ShapeError(
                f"input extents {h}x{w} must be divisible by 2^scales = {div}")

        f = ad.relu(ad.conv2d(noisy, p["stem.w"], p["stem.b"], padding=1))
        skips: list[Tensor] = []
        for s in range(cfg.scales):
            hblk = f
            for i in range(cfg.blocks_per_scale):
                fs = self._res(hblk, f"enc{s}.spatial{i}", training)
                if cfg.wavelet_branch_off:
                    hblk = fs
                    continue
                if cfg.wcg_off:
                    fw = self._res(hblk, f"enc{s}.wavelet{i}", training)
                else:
                    name = f"enc{s}.wavelet{i}.wcg"
                    fw = wcg_block_grouped(
                        hblk, self._wavelet_weights(name), cfg.wcg_groups,
                        p[f"{name}.bn.gamma"], p[f"{name}.bn.beta"],
                        self.stats[f"{name}.bn"], training=training,
                        family=cfg.wavelet_family)
                hblk = self._fuse(fw, fs, f"enc{s}.fuse{i}")
            if internals is not None:
                internals[f"scale{s}"] = hblk.data.shape
            skips.append(hblk)
            if s < cfg.scales - 1:
                f = ad.relu(ad.conv2d(ad.resample(hblk, "down2"),
                                      p[f"down{s}.w"], p[f"down{s}.b"], padding=1))

        g = skips[-1]
        for s in range(cfg.scales - 2, -1, -1):
            g = ad.relu(ad.conv2d(g, p[f"dec{s}.reduce.w"], p[f"dec{s}.reduce.b"]))
            g = ad.resample(g, "up2")
            g = ad.concat([g, skips[s]], axis=1)
            g = ad.relu(ad.conv2d(g, p[f"dec{s}.merge.w"], p[f"dec{s}.merge.b"]))
            g = ad.relu(ad.conv2d(g, p[f"dec{s}.conv.w"], p[f"dec{s}.conv.b"], padding=1))
        correction = ad.conv2d(g, p["out.w"], p["out.b"], padding=1)
        out = ad.add(noisy, correction)
        if not training:
            out = Tensor(np.clip(out.data, 0.0, 1.0))
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.params.values())
