"""Image ingestion, synthetic phantoms, noise simulation, frame averaging,
patch sampling, and the line-oriented dataset manifest.

All randomness flows from explicit integer seeds, so a (seed, model, clean)
triple fully determines every noisy output regardless of evaluation order.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError, ShapeError
from .ioutil import atomic_write_bytes
from .metrics import gaussian_blur

PHANTOM_KINDS = ("filaments", "blobs", "edges", "mixed")
NOISE_KINDS = ("gaussian", "poisson", "mixed", "none")
TARGET_MODES = ("clean", "avg50", "independent")

# noisy samples keep headroom above 1 so frame averaging stays unclipped
NOISE_CLAMP = 1.5


# ---------------------------------------------------------------------------
# noise model
# ---------------------------------------------------------------------------

@dataclass
class NoiseModel:
    """Poisson/Gaussian/mixed noise description.

    ``sigma`` is the additive-Gaussian standard deviation; ``peak`` the
    Poisson photon count corresponding to intensity 1.0.
    """

    kind: str = "gaussian"
    sigma: float = 0.1
    peak: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; choose from {NOISE_KINDS}")
        if self.sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.kind in ("poisson", "mixed") and self.peak <= 0:
            raise ConfigError(f"poisson peak must be > 0, got {self.peak}")

    def label(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian:sigma={self.sigma:g}"
        if self.kind == "poisson":
            return f"poisson:peak={self.peak:g}"
        if self.kind == "mixed":
            return f"mixed:sigma={self.sigma:g},peak={self.peak:g}"
        return "none"


def _draw_rng(model: NoiseModel, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=model.seed, spawn_key=(index,)))


def add_noise(clean: np.ndarray, model: NoiseModel, index: int = 0) -> np.ndarray:
    """One noisy realization of ``clean`` (values in [0,1]).

    ``index`` selects an independent stream, used by frame averaging.
    """
    x = np.asarray(clean, dtype=np.float64)
    rng = _draw_rng(model, index)
    if model.kind == "none":
        return x.copy()
    if model.kind == "gaussian":
        noisy = x if model.sigma == 0 else x + rng.normal(0.0, model.sigma, size=x.shape)
    elif model.kind == "poisson":
        noisy = rng.poisson(np.clip(x, 0.0, None) * model.peak).astype(np.float64) / model.peak
    else:  # mixed: shot noise first, then read noise
        noisy = rng.poisson(np.clip(x, 0.0, None) * model.peak).astype(np.float64) / model.peak
        if model.sigma > 0:
            noisy = noisy + rng.normal(0.0, model.sigma, size=x.shape)
    return np.clip(noisy, 0.0, NOISE_CLAMP)


def frame_average(clean: np.ndarray, model: NoiseModel, frames: int) -> np.ndarray:
    """Mean of ``frames`` independent noisy draws (residual std ~ sigma/sqrt(N))."""
    if frames < 1:
        raise ConfigError(f"frame count must be >= 1, got {frames}")
    acc = np.zeros_like(np.asarray(clean, dtype=np.float64))
    for i in range(frames):
        acc += add_noise(clean, model, index=i)
    return acc / frames


def sample_patches(image: np.ndarray, patch_size: int, count: int,
                   seed: int = 0) -> list[np.ndarray]:
    """Uniformly random ``patch_size`` square crops, deterministic per seed."""
    h, w = image.shape[-2], image.shape[-1]
    if patch_size > h or patch_size > w:
        raise ShapeError(f"patch size {patch_size} exceeds image extents {h}x{w}")
    rng = np.random.default_rng(seed)
    patches = []
    for _ in range(count):
        top = int(rng.integers(0, h - patch_size + 1))
        left = int(rng.integers(0, w - patch_size + 1))
        patches.append(image[..., top:top + patch_size, left:left + patch_size].copy())
    return patches


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

def _norm01(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo < 1e-9:
        return np.full_like(x, 0.5)
    return 0.05 + 0.9 * (x - lo) / (hi - lo)


def _filaments(size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.zeros((size, size))
    for _ in range(int(rng.integers(6, 12))):
        y, x = rng.uniform(0, size, 2)
        ang = rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.6, 1.0)
        for _ in range(int(size * rng.uniform(1.0, 2.0))):
            ang += rng.normal(0.0, 0.18)
            y += math.sin(ang)
            x += math.cos(ang)
            img[int(round(y)) % size, int(round(x)) % size] = amp
    img = gaussian_blur(img, 0.6)
    yy, xx = np.mgrid[0:size, 0:size] / size
    bg = 0.15 + 0.1 * np.sin(2 * math.pi * (0.7 * yy + 0.4 * xx) + rng.uniform(0, 2 * math.pi))
    return _norm01(img + bg)


def _blobs(size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = np.zeros((size, size))
    for _ in range(int(rng.integers(6, 12))):
        cy, cx = rng.uniform(0, size, 2)
        s = rng.uniform(2.5, 8.0)
        amp = rng.uniform(0.3, 1.0)
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    # faint fine-grained mottle keeps some energy in the upper frequency band
    texture = gaussian_blur(rng.normal(0.0, 1.0, (size, size)), 0.45)
    return _norm01(img + 0.08 * texture)


def _edges(size: int, rng: np.random.Generator) -> np.ndarray:
    img = np.full((size, size), 0.2)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    for _ in range(int(rng.integers(4, 8))):
        amp = rng.uniform(0.3, 0.9)
        if rng.integers(0, 2) == 0:
            y0, x0 = rng.uniform(0, size * 0.8, 2)
            h, w = rng.uniform(size * 0.1, size * 0.5, 2)
            img[(yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)] += amp
        else:
            cy, cx = rng.uniform(0, size, 2)
            r = rng.uniform(size * 0.05, size * 0.25)
            img[((yy - cy) ** 2 + (xx - cx) ** 2) < r * r] += amp
    return _norm01(gaussian_blur(img, 0.4))


def _mixed(size: int, rng: np.random.Generator) -> np.ndarray:
    base = 0.5 * _blobs(size, rng) + 0.7 * _filaments(size, rng)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    y0, x0 = rng.uniform(0, size * 0.7, 2)
    h, w = rng.uniform(size * 0.15, size * 0.4, 2)
    base[(yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)] += 0.3
    return _norm01(base)


_PHANTOMS = {"filaments": _filaments, "blobs": _blobs, "edges": _edges, "mixed": _mixed}


def phantom(kind: str, size: int, seed: int) -> np.ndarray:
    """Deterministic synthetic test image in [0,1] with smooth regions and
    genuine high-frequency structure (fine lines, sharp boundaries, mottle).
    """
    if kind not in _PHANTOMS:
        raise ConfigError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")
    if size < 16:
        raise ConfigError(f"phantom size must be >= 16, got {size}")
    return _PHANTOMS[kind](size, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# PNG input/output
# ---------------------------------------------------------------------------

def load_image(path, mode: str = "luminance") -> np.ndarray:
    """Load an 8- or 16-bit grayscale/RGB PNG as float64 in [0,1].

    ``mode``: 'luminance' collapses RGB to a single channel; 'channels'
    keeps a leading channel axis.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if img.format != "PNG":
        raise DataError(f"unsupported image format {img.format!r} for {path}; PNG required")
    if img.mode == "L":
        arr = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode in ("I;16", "I;16B"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode == "I":
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode == "RGB":
        rgb = np.asarray(img, dtype=np.float64) / 255.0
        if mode == "channels":
            return rgb.transpose(2, 0, 1)
        arr = rgb @ np.array([0.299, 0.587, 0.114])
    else:
        raise DataError(
            f"unsupported PNG mode {img.mode!r} for {path}; need 8/16-bit grayscale or RGB")
    return arr


def save_image(path, image: np.ndarray, bit_depth: int = 16) -> None:
    """Write a grayscale PNG (values clipped to [0,1]); writes are atomic."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if arr.ndim != 2:
        raise ShapeError(f"save_image expects a 2-D image, got shape {arr.shape}")
    if bit_depth == 8:
        pil = Image.fromarray(np.round(arr * 255.0).astype(np.uint8), mode="L")
    elif bit_depth == 16:
        pil = Image.fromarray(np.round(arr * 65535.0).astype(np.uint16))
    else:
        raise ConfigError(f"bit_depth must be 8 or 16, got {bit_depth}")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class ManifestRecord:
    """One dataset item: a source image, its noise model, frame count,
    split tag, and how the training/eval target is formed."""

    source: str                 # "phantom:<kind>:<size>:<seed>" or a PNG path
    noise: NoiseModel
    frames: int = 1
    split: str = "train"
    target: str = "clean"

    def is_phantom(self) -> bool:
        return self.source.startswith("phantom:")

    def image_id(self) -> str:
        if self.is_phantom():
            return self.source.replace(":", "_")
        return Path(self.source).stem

    def load_clean(self, base_dir: Path | None = None) -> np.ndarray:
        if self.is_phantom():
            parts = self.source.split(":")
            if len(parts) != 4:
                raise DataError(f"bad phantom spec {self.source!r}; "
                                "expected phantom:<kind>:<size>:<seed>")
            _, kind, size, seed = parts
            return phantom(kind, int(size), int(seed))
        path = Path(self.source)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_image(path)

    def realize(self, base_dir: Path | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Return the (input, target) image pair for this record."""
        clean = self.load_clean(base_dir)
        noisy = frame_average(clean, self.noise, self.frames)
        if self.target == "clean":
            target = clean
        elif self.target == "avg50":
            target = frame_average(clean, self.noise, 50)
        elif self.target == "independent":
            shifted = NoiseModel(kind=self.noise.kind, sigma=self.noise.sigma,
                                 peak=self.noise.peak, seed=self.noise.seed + 1_000_003)
            target = frame_average(clean, shifted, self.frames)
        else:
            raise DataError(f"unknown target mode {self.target!r}")
        return noisy, target

    def to_line(self) -> str:
        fields = [self.source, self.noise.label() +
                  (f",seed={self.noise.seed}" if self.noise.kind != "none" else ""),
                  f"frames={self.frames}", f"split={self.split}"]
        if self.target != "clean":
            fields.append(f"target={self.target}")
        return " | ".join(fields)


def _parse_noise(spec: str, default_seed: int) -> NoiseModel:
    spec = spec.strip()
    if spec == "none":
        return NoiseModel(kind="none", sigma=0.0, seed=default_seed)
    if ":" not in spec:
        raise DataError(f"bad noise spec {spec!r}; expected kind:key=value[,...]")
    kind, _, args = spec.partition(":")
    kind = kind.strip()
    params: dict[str, float] = {}
    for piece in args.split(","):
        piece = piece.strip()
        if not piece:
            continue
        if "=" not in piece:
            raise DataError(f"bad noise parameter {piece!r} in {spec!r}")
        key, _, value = piece.partition("=")
        try:
            params[key.strip()] = float(value)
        except ValueError:
            raise DataError(f"non-numeric noise parameter {piece!r} in {spec!r}") from None
    try:
        return NoiseModel(kind=kind,
                          sigma=params.get("sigma", 0.0),
                          peak=params.get("peak", 100.0),
                          seed=int(params.get("seed", default_seed)))
    except ConfigError as exc:
        raise DataError(str(exc)) from exc


@dataclass
class DatasetManifest:
    """Ordered record list; serialized one record per line."""

    records: list[ManifestRecord] = field(default_factory=list)
    base_dir: Path | None = None

    @classmethod
    def parse(cls, text: str, base_dir: Path | None = None) -> "DatasetManifest":
        records = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = [f.strip() for f in line.split("|")]
            if len(fields) < 4:
                raise DataError(
                    f"manifest line {lineno}: expected at least 4 '|'-separated fields, "
                    f"got {len(fields)}: {line!r}")
            source = fields[0]
            noise = _parse_noise(fields[1], default_seed=len(records))
            extras = {"frames": "1", "split": "train", "target": "clean"}
            for piece in fields[2:]:
                if "=" not in piece:
                    raise DataError(f"manifest line {lineno}: bad field {piece!r}")
                key, _, value = piece.partition("=")
                key = key.strip()
                if key not in extras:
                    raise DataError(f"manifest line {lineno}: unknown field {key!r}")
                extras[key] = value.strip()
            try:
                frames = int(extras["frames"])
            except ValueError:
                raise DataError(
                    f"manifest line {lineno}: frames must be an integer") from None
            if frames < 1:
                raise DataError(f"manifest line {lineno}: frames must be >= 1")
            if extras["target"] not in TARGET_MODES:
                raise DataError(
                    f"manifest line {lineno}: unknown target {extras['target']!r}")
            records.append(ManifestRecord(source=source, noise=noise, frames=frames,
                                          split=extras["split"], target=extras["target"]))
        return cls(records=records, base_dir=base_dir)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise DataError(f"manifest file not found: {path}")
        manifest = cls.parse(path.read_text(), base_dir=path.parent)
        missing = [r.source for r in manifest.records
                   if not r.is_phantom() and not (path.parent / r.source).exists()
                   and not Path(r.source).exists()]
        if missing:
            raise DataError(f"manifest references missing files: {missing}")
        return manifest

    def to_text(self) -> str:
        return "\n".join(r.to_line() for r in self.records) + "\n"

    def split(self, tag: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == tag]


def phantom_manifest(count_train: int, count_eval: int, size: int,
                     noise: NoiseModel, frames: int = 1, seed: int = 0,
                     target: str = "clean") -> DatasetManifest:
    """Deterministic all-phantom manifest cycling through the four kinds."""
    records = []
    for i in range(count_train + count_eval):
        kind = PHANTOM_KINDS[i % len(PHANTOM_KINDS)]
        split = "train" if i < count_train else "eval"
        model = NoiseModel(kind=noise.kind, sigma=noise.sigma, peak=noise.peak,
                           seed=noise.seed + 7919 * i)
        records.append(ManifestRecord(
            source=f"phantom:{kind}:{size}:{seed + i}",
            noise=model, frames=frames, split=split, target=target))
    return DatasetManifest(records=records)
