"""Adversarial training loop, checkpoint state, evaluation, and ablations."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import AdamState, Tape, Tensor
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .config import TrainConfig, config_from_dict, config_to_dict
from .data import DatasetManifest, ManifestRecord
from .discriminator import Discriminator
from .errors import ConfigError, DataError, NumericError
from .generator import Generator
from .ioutil import atomic_write_text
from .metrics import (MetricsReport, compute_image_metrics, gaussian_blur,
                      radial_spectrum)

LOG_COLUMNS = ("step", "g_loss", "d_loss", "gan", "recon", "percep", "wavelet", "iqa")


@dataclass
class StepLog:
    step: int
    g_loss: float
    d_loss: float
    terms: dict[str, float]

    def row(self) -> str:
        vals = [str(self.step), f"{self.g_loss:.12g}", f"{self.d_loss:.12g}"]
        vals += [f"{self.terms[k]:.12g}" for k in LOG_COLUMNS[3:]]
        return ",".join(vals)


def _first_non_finite(named: dict[str, Tensor]) -> str | None:
    for name, t in named.items():
        if not np.all(np.isfinite(t.data)):
            return name
    return None


@dataclass
class Trainer:
    """One training run: models, optimizer states, data pairs, and the loop."""

    config: TrainConfig
    items: list[tuple[np.ndarray, np.ndarray]]   # (noisy, target) in [0, ~1.5]
    generator: Generator = field(init=False)
    discriminator: Discriminator = field(init=False)
    extractor: L.PerceptualExtractor = field(init=False)
    adam_g: AdamState = field(init=False)
    adam_d: AdamState = field(init=False)
    step: int = 0
    logs: list[StepLog] = field(default_factory=list)

    def __post_init__(self):
        cfg = self.config
        cfg.validate()
        if not self.items:
            raise DataError("training set is empty")
        self.generator = Generator.build(cfg.generator_config(), seed=cfg.seed)
        self.discriminator = Discriminator.build(cfg.discriminator_config(), seed=cfg.seed)
        self.extractor = L.PerceptualExtractor(in_channels=cfg.generator.in_channels,
                                               seed=cfg.seed)
        self.adam_g = AdamState(learning_rate=cfg.learning_rate)
        self.adam_d = AdamState(learning_rate=cfg.learning_rate)
        self._batch_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=cfg.seed, spawn_key=(101,)))

    # -- batching ----------------------------------------------------------

    def sample_batch(self) -> tuple[Tensor, Tensor]:
        cfg = self.config
        idx = self._batch_rng.integers(0, len(self.items), size=cfg.batch_size)
        noisy, target = [], []
        for i in idx:
            xn, xt = self.items[int(i)]
            h, w = xn.shape[-2], xn.shape[-1]
            ps = min(cfg.patch_size, h, w)
            top = int(self._batch_rng.integers(0, h - ps + 1))
            left = int(self._batch_rng.integers(0, w - ps + 1))
            noisy.append(xn[top:top + ps, left:left + ps])
            target.append(xt[top:top + ps, left:left + ps])
        return (Tensor(np.stack(noisy)[:, None]), Tensor(np.stack(target)[:, None]))

    # -- single step -------------------------------------------------------

    def train_step(self, batch: tuple[Tensor, Tensor] | None = None) -> StepLog:
        """One discriminator update followed by one generator update (1:1)."""
        cfg = self.config
        weights = cfg.weights
        if batch is None:
            batch = self.sample_batch()
        noisy, target = batch

        d_loss_val = 0.0
        if not cfg.gan_off:
            fake_fixed = self.generator.forward(noisy, training=True).detach()
            with Tape():
                d_real = self.discriminator.forward(target, training=True)
                d_fake = self.discriminator.forward(fake_fixed, training=True)
                d_loss = L.l_gan_d(d_real, d_fake)
                ad.backward(d_loss)
            d_loss_val = d_loss.item()
            if not np.isfinite(d_loss_val):
                culprit = _first_non_finite(self.discriminator.params) or "d_loss"
                raise NumericError(f"non-finite discriminator loss (first bad tensor: {culprit})")
            ad.adam_step(self.discriminator.params, self.adam_d)
            ad.zero_grads(self.discriminator.params)
            ad.zero_grads(self.generator.params)

        with Tape():
            fake = self.generator.forward(noisy, training=True)
            zero = Tensor(0.0)
            gan_term = zero
            if not cfg.gan_off:
                d_fake = self.discriminator.forward(fake, training=True)
                gan_term = L.l_gan_g(d_fake)
            recon_term = ad.mul_scalar(L.l_recon(fake, target), weights.mu1_l1)
            percep_term = zero
            if not cfg.percep_loss_off:
                percep_term = ad.mul_scalar(L.l_percep(fake, target, self.extractor),
                                            weights.lambda2_percep)
            wavelet_term = zero
            if not cfg.wavelet_loss_off:
                wavelet_term = ad.mul_scalar(
                    L.l_wavelet(fake, target, cfg.wavelet_loss_levels,
                                cfg.generator.wavelet_family),
                    weights.lambda3_wavelet)
            iqa_term = zero
            if not cfg.iqa_loss_off:
                iqa_term = ad.mul_scalar(L.l_iqa(target.data, fake.data), weights.mu2_iqa)
            g_loss = ad.add(ad.add(ad.add(ad.add(gan_term, recon_term), percep_term),
                                   wavelet_term), iqa_term)
            ad.backward(g_loss)
        g_loss_val = g_loss.item()
        if not np.isfinite(g_loss_val):
            culprit = _first_non_finite(self.generator.params) or "g_loss"
            raise NumericError(f"non-finite generator loss (first bad tensor: {culprit})")
        ad.adam_step(self.generator.params, self.adam_g)
        ad.zero_grads(self.generator.params)
        if not cfg.gan_off:
            ad.zero_grads(self.discriminator.params)

        self.step += 1
        log = StepLog(step=self.step, g_loss=g_loss_val, d_loss=d_loss_val,
                      terms={"gan": gan_term.item(), "recon": recon_term.item(),
                             "percep": percep_term.item(), "wavelet": wavelet_term.item(),
                             "iqa": iqa_term.item()})
        self.logs.append(log)
        return log

    def run(self, steps: int | None = None) -> list[StepLog]:
        for _ in range(steps if steps is not None else self.config.steps):
            self.train_step()
        return self.logs

    def write_log_csv(self, path) -> None:
        lines = [",".join(LOG_COLUMNS)] + [log.row() for log in self.logs]
        atomic_write_text(path, "\n".join(lines) + "\n")

    # -- persistence -------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for prefix, model in (("g", self.generator), ("d", self.discriminator)):
            for name, t in model.params.items():
                out[f"{prefix}.param.{name}"] = t.data
            for name, rs in model.stats.items():
                out[f"{prefix}.stats.{name}.mean"] = rs.mean
                out[f"{prefix}.stats.{name}.var"] = rs.var
        for prefix, adam in (("adam_g", self.adam_g), ("adam_d", self.adam_d)):
            for name, buf in adam.m.items():
                out[f"{prefix}.m.{name}"] = buf
            for name, buf in adam.v.items():
                out[f"{prefix}.v.{name}"] = buf
            out[f"{prefix}.step"] = np.array(float(adam.step))
        return out

    def save(self, path) -> None:
        meta = {"config": config_to_dict(self.config), "step": self.step,
                "seed": self.config.seed}
        save_checkpoint(path, meta, self.state_tensors())

    def restore_tensors(self, data: CheckpointData) -> None:
        tensors = data.tensors
        for prefix, model in (("g", self.generator), ("d", self.discriminator)):
            for name, t in model.params.items():
                key = f"{prefix}.param.{name}"
                if key not in tensors:
                    raise DataError(f"checkpoint missing tensor {key}")
                if tensors[key].shape != t.data.shape:
                    raise DataError(f"checkpoint tensor {key} has shape "
                                    f"{tensors[key].shape}, expected {t.data.shape}")
                t.data = tensors[key].copy()
            for name, rs in model.stats.items():
                rs.mean = tensors[f"{prefix}.stats.{name}.mean"].copy()
                rs.var = tensors[f"{prefix}.stats.{name}.var"].copy()
        for prefix, adam, model in (("adam_g", self.adam_g, self.generator),
                                    ("adam_d", self.adam_d, self.discriminator)):
            step_key = f"{prefix}.step"
            if step_key in tensors:
                adam.step = int(tensors[step_key].reshape(()).item())
            for name in model.params:
                mk, vk = f"{prefix}.m.{name}", f"{prefix}.v.{name}"
                if mk in tensors:
                    adam.m[name] = tensors[mk].copy()
                    adam.v[name] = tensors[vk].copy()
        self.step = data.step


def trainer_from_checkpoint(path, items: list[tuple[np.ndarray, np.ndarray]] | None = None
                            ) -> Trainer:
    data = load_checkpoint(path)
    config = config_from_dict(data.meta.get("config", {}))
    placeholder = [(np.zeros((16, 16)), np.zeros((16, 16)))]
    trainer = Trainer(config=config, items=items if items else placeholder)
    if not items:
        trainer.items = []
    trainer.restore_tensors(data)
    return trainer


# ---------------------------------------------------------------------------
# dataset realization
# ---------------------------------------------------------------------------

def realize_records(records: list[ManifestRecord], base_dir: Path | None = None
                    ) -> list[tuple[np.ndarray, np.ndarray]]:
    return [record.realize(base_dir) for record in records]


def realize_manifest(manifest: DatasetManifest, split: str
                     ) -> list[tuple[np.ndarray, np.ndarray]]:
    records = manifest.split(split)
    if not records:
        raise DataError(f"manifest has no records with split={split!r}")
    return realize_records(records, manifest.base_dir)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def denoise_image(generator: Generator, noisy: np.ndarray) -> np.ndarray:
    """Run the generator on one grayscale image (inference mode, clamped)."""
    x = Tensor(np.clip(noisy, 0.0, 1.0)[None, None])
    return generator.forward(x, training=False).data[0, 0]


def evaluate(generator: Generator, records: list[ManifestRecord],
             base_dir: Path | None = None, out_dir: Path | None = None,
             hfrr_cutoff: float = 0.25, wavelet_levels: int = 2,
             family: str = "haar", spectra: bool = False,
             svg: bool = False) -> MetricsReport:
    """Metrics for the model plus noisy-input and Gaussian-blur baselines.

    Writes metrics.csv (and optional per-image radial-spectrum CSV/SVG)
    under ``out_dir`` when given.
    """
    report = MetricsReport(metadata={"hfrr_cutoff": hfrr_cutoff,
                                     "wavelet_levels": wavelet_levels})
    spectra_rows = []
    for record in records:
        noisy, target = record.realize(base_dir)
        noisy = np.clip(noisy, 0.0, 1.0)  # evaluation happens in display range
        outputs = {
            "model": denoise_image(generator, noisy),
            "noisy": noisy,
            "blur": gaussian_blur(noisy, sigma=1.0),
        }
        label = f"{record.noise.label()},frames={record.frames}"
        for method, img in outputs.items():
            report.add(compute_image_metrics(
                img, target, image_id=record.image_id(), method=method,
                noise_level=label, hfrr_cutoff=hfrr_cutoff,
                wavelet_levels=wavelet_levels, family=family))
        if spectra:
            spectra_rows.append((record.image_id(), outputs))
    if out_dir is not None:
        out_dir = Path(out_dir)
        report.write_csv(out_dir / "metrics.csv")
        if spectra:
            from .svgplot import svg_line_plot
            for image_id, outputs in spectra_rows:
                series = []
                for method, img in outputs.items():
                    spec = radial_spectrum(img)
                    spec.write_csv(out_dir / f"spectrum_{image_id}_{method}.csv")
                    series.append((spec.rho, spec.power, method))
                if svg:
                    svg_line_plot(series, out_dir / f"spectrum_{image_id}.svg",
                                  title=f"radial power: {image_id}",
                                  xlabel="cycles/pixel", ylabel="mean power",
                                  log_y=True)
    return report


# ---------------------------------------------------------------------------
# ablations
# ---------------------------------------------------------------------------

GENERATOR_VARIANTS = ("full", "fsff_off", "wavelet_branch_off", "wcg_off",
                      "wavelet_loss_off", "naive_fusion")
DISCRIMINATOR_VARIANTS = ("no_iqa_baseline", "iqa_no_fusion", "iqa_channel",
                          "iqa_spatial", "iqa_channel_with_loss")
ALL_VARIANTS = GENERATOR_VARIANTS + DISCRIMINATOR_VARIANTS


def apply_variant(config: TrainConfig, variant: str) -> TrainConfig:
    """Fresh config with one comparison-table row's toggles applied."""
    import dataclasses

    cfg = dataclasses.replace(
        config,
        generator=dataclasses.replace(config.generator),
        discriminator=dataclasses.replace(config.discriminator),
        weights=dataclasses.replace(config.weights),
    )
    if variant == "full":
        return cfg
    if variant in ("fsff_off", "wavelet_branch_off", "wcg_off",
                   "wavelet_loss_off", "naive_fusion"):
        setattr(cfg, variant, True)
        return cfg
    if variant == "no_iqa_baseline":
        cfg.iqa_off = True
        cfg.fusion_mode = "none"
        cfg.iqa_loss_off = True
        return cfg
    if variant == "iqa_no_fusion":
        cfg.fusion_mode = "none"
        cfg.iqa_loss_off = True
        return cfg
    if variant == "iqa_channel":
        cfg.fusion_mode = "channel"
        cfg.iqa_loss_off = True
        return cfg
    if variant == "iqa_spatial":
        cfg.fusion_mode = "spatial"
        cfg.iqa_loss_off = True
        return cfg
    if variant == "iqa_channel_with_loss":
        cfg.fusion_mode = "channel"
        return cfg
    raise ConfigError(f"unknown ablation variant {variant!r}; "
                      f"choose from {ALL_VARIANTS}")


@dataclass
class VariantResult:
    variant: str
    aggregates: dict[str, float]
    seconds: float


def ablate(base_config: TrainConfig, variants: list[str],
           train_items: list[tuple[np.ndarray, np.ndarray]],
           eval_records: list[ManifestRecord], base_dir: Path | None = None,
           out_csv: Path | None = None) -> list[VariantResult]:
    """Train every variant under identical seed/steps and compare metrics.

    The full-model row, when present, is listed first, mirroring the usual
    comparison-table ordering.
    """
    ordered = (["full"] if "full" in variants else []) + \
        [v for v in variants if v != "full"]
    results = []
    for variant in ordered:
        cfg = apply_variant(base_config, variant)
        started = time.monotonic()
        trainer = Trainer(config=cfg, items=train_items)
        trainer.run()
        report = evaluate(trainer.generator, eval_records, base_dir=base_dir,
                          wavelet_levels=cfg.wavelet_loss_levels,
                          family=cfg.generator.wavelet_family)
        results.append(VariantResult(
            variant=variant,
            aggregates=report.aggregate("model"),
            seconds=time.monotonic() - started))
    if out_csv is not None:
        lines = ["variant,psnr_db,ssim,hfrr,wavelet_mae,seconds"]
        for r in results:
            a = r.aggregates
            lines.append(f"{r.variant},{a['psnr_db']:.6f},{a['ssim']:.6f},"
                         f"{a['hfrr']:.6f},{a['wavelet_mae']:.8f},{r.seconds:.2f}")
        atomic_write_text(out_csv, "\n".join(lines) + "\n")
    return results
