"""FastAPI service wrapping the denoising stack.

Endpoints mirror the CLI subcommands one-to-one: simulate, train, denoise,
eval, spectrum, ablate. Library errors map to structured JSON bodies with
an ``error_kind`` the thin client translates into exit codes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..config import TrainConfig, apply_override, load_config
from ..data import DatasetManifest, NoiseModel, load_image, phantom_manifest, save_image
from ..errors import DataError, QwdganError
from ..metrics import radial_spectrum
from ..svgplot import svg_line_plot
from ..training import (ALL_VARIANTS, Trainer, ablate, evaluate,
                        realize_manifest, trainer_from_checkpoint)
from . import schemas as S

_STATUS = {"usage": 400, "data": 422, "numeric": 500}


def _resolve_config(config_path: str | None, overrides: dict[str, str]) -> TrainConfig:
    config = load_config(config_path) if config_path else TrainConfig()
    for key, value in overrides.items():
        apply_override(config, key, value)
    config.validate()
    return config


def _training_manifest(manifest_path: str | None, config: TrainConfig) -> DatasetManifest:
    if manifest_path:
        return DatasetManifest.load(manifest_path)
    return phantom_manifest(32, 8, 64, NoiseModel(kind="gaussian", sigma=0.1, seed=0),
                            seed=config.seed)


def create_app() -> FastAPI:
    app = FastAPI(title="qwdgan", version=__version__)

    @app.exception_handler(QwdganError)
    async def _handle_qwdgan(request: Request, exc: QwdganError):
        return JSONResponse(
            status_code=_STATUS.get(exc.kind, 500),
            content={"detail": {"error_kind": exc.kind, "message": str(exc)}})

    @app.get("/health", response_model=S.HealthResponse)
    def health():
        return S.HealthResponse(status="ok", version=__version__)

    @app.post("/simulate", response_model=S.SimulateResponse)
    def simulate(req: S.SimulateRequest):
        manifest = DatasetManifest.load(req.manifest_path)
        out_dir = Path(req.output_dir)
        written: list[str] = []
        derived_lines = []
        for record in manifest.records:
            noisy, target = record.realize(manifest.base_dir)
            noisy_path = out_dir / f"{record.image_id()}_noisy.png"
            save_image(noisy_path, np.clip(noisy, 0.0, 1.0), bit_depth=req.bit_depth)
            written.append(str(noisy_path))
            if req.write_clean:
                clean_path = out_dir / f"{record.image_id()}_clean.png"
                save_image(clean_path, target, bit_depth=req.bit_depth)
                written.append(str(clean_path))
            derived_lines.append(
                f"{noisy_path.name} | none | frames=1 | split={record.split}")
        derived = out_dir / "simulated_manifest.txt"
        from ..ioutil import atomic_write_text
        atomic_write_text(derived, "\n".join(derived_lines) + "\n")
        return S.SimulateResponse(written=written, manifest_path=str(derived))

    @app.post("/train", response_model=S.TrainResponse)
    def train(req: S.TrainRequest):
        config = _resolve_config(req.config_path, req.overrides)
        if req.resume_from:
            # architecture comes from the checkpoint; only [train] keys may change
            from ..config import apply_override
            from ..errors import ConfigError

            for key in req.overrides:
                section = key.partition(".")[0] if "." in key else "train"
                if section != "train":
                    raise ConfigError(
                        f"cannot override {key} when resuming; architecture and "
                        "loss weights are fixed by the checkpoint")
            manifest = _training_manifest(req.manifest_path, config)
            items = realize_manifest(manifest, "train")
            trainer = trainer_from_checkpoint(req.resume_from, items=items)
            for key, value in req.overrides.items():
                apply_override(trainer.config, key, value)
            trainer.config.validate()
        else:
            manifest = _training_manifest(req.manifest_path, config)
            items = realize_manifest(manifest, "train")
            trainer = Trainer(config=config, items=items)
        trainer.run()
        trainer.save(req.checkpoint_out)
        if req.log_csv:
            trainer.write_log_csv(req.log_csv)
        last = trainer.logs[-1] if trainer.logs else None
        return S.TrainResponse(
            checkpoint_path=req.checkpoint_out,
            steps=trainer.step,
            final_g_loss=last.g_loss if last else 0.0,
            final_d_loss=last.d_loss if last else 0.0,
            log_csv=req.log_csv)

    @app.post("/denoise", response_model=S.DenoiseResponse)
    def denoise(req: S.DenoiseRequest):
        trainer = trainer_from_checkpoint(req.checkpoint_path)
        input_dir = Path(req.input_dir)
        if not input_dir.is_dir():
            raise DataError(f"input directory not found: {input_dir}")
        pngs = sorted(input_dir.glob("*.png"))
        if not pngs:
            raise DataError(f"no PNG files in {input_dir}")
        out_dir = Path(req.output_dir)
        written = []
        from ..training import denoise_image
        for path in pngs:
            image = load_image(path)
            restored = denoise_image(trainer.generator, image)
            out_path = out_dir / f"{path.stem}_denoised.png"
            save_image(out_path, restored, bit_depth=req.bit_depth)
            written.append(str(out_path))
        return S.DenoiseResponse(written=written)

    @app.post("/eval", response_model=S.EvalResponse)
    def eval_endpoint(req: S.EvalRequest):
        trainer = trainer_from_checkpoint(req.checkpoint_path)
        manifest = DatasetManifest.load(req.manifest_path)
        records = manifest.split(req.split)
        if not records:
            raise DataError(f"manifest has no records with split={req.split!r}")
        out_dir = Path(req.output_dir)
        report = evaluate(trainer.generator, records, base_dir=manifest.base_dir,
                          out_dir=out_dir, hfrr_cutoff=req.hfrr_cutoff,
                          wavelet_levels=req.wavelet_levels,
                          family=trainer.config.generator.wavelet_family,
                          spectra=req.spectra, svg=req.svg)
        aggregates = [S.MethodAggregate(method=m, **report.aggregate(m))
                      for m in report.methods()]
        return S.EvalResponse(metrics_csv=str(out_dir / "metrics.csv"),
                              aggregates=aggregates, images=len(records))

    @app.post("/spectrum", response_model=S.SpectrumResponse)
    def spectrum(req: S.SpectrumRequest):
        if not req.images:
            raise DataError("no input images given")
        out_dir = Path(req.output_dir)
        csv_paths = []
        series = []
        for path_str in req.images:
            path = Path(path_str)
            image = load_image(path)
            spec = radial_spectrum(image, n_bins=req.n_bins)
            csv_path = out_dir / f"spectrum_{path.stem}.csv"
            spec.write_csv(csv_path)
            csv_paths.append(str(csv_path))
            series.append((spec.rho, spec.power, path.stem))
        svg_path = None
        if req.svg:
            svg_path = str(out_dir / "spectrum.svg")
            svg_line_plot(series, svg_path, title="radial power spectrum",
                          xlabel="cycles/pixel", ylabel="mean power", log_y=True)
        return S.SpectrumResponse(csv_paths=csv_paths, svg_path=svg_path)

    @app.post("/ablate", response_model=S.AblateResponse)
    def ablate_endpoint(req: S.AblateRequest):
        config = _resolve_config(req.config_path, req.overrides)
        manifest = _training_manifest(req.manifest_path, config)
        train_items = realize_manifest(manifest, "train")
        eval_records = manifest.split("eval")
        if not eval_records:
            raise DataError("manifest has no eval split for ablation comparison")
        variants = req.variants or list(ALL_VARIANTS)
        results = ablate(config, variants, train_items, eval_records,
                         base_dir=manifest.base_dir, out_csv=Path(req.output_csv))
        rows = [S.VariantRow(variant=r.variant, seconds=r.seconds, **r.aggregates)
                for r in results]
        return S.AblateResponse(output_csv=req.output_csv, rows=rows)

    return app


app = create_app()
