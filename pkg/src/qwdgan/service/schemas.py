"""Pydantic request/response models for the HTTP service.

Paths in requests refer to the filesystem the service runs on; the CLI
talks to an in-process app by default, so they are ordinary local paths.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SimulateRequest(BaseModel):
    manifest_path: str = Field(description="dataset manifest to realize")
    output_dir: str = Field(description="directory for noisy/clean PNG pairs")
    bit_depth: int = Field(default=16, description="PNG bit depth (8 or 16)")
    write_clean: bool = Field(default=True, description="also write the clean images")


class SimulateResponse(BaseModel):
    written: list[str]
    manifest_path: str


class TrainRequest(BaseModel):
    config_path: str | None = Field(default=None, description="INI config file")
    overrides: dict[str, str] = Field(default_factory=dict,
                                      description="section.key -> value overrides")
    manifest_path: str | None = Field(
        default=None, description="training manifest; omitted = built-in phantom set")
    checkpoint_out: str = Field(description="where to write the trained checkpoint")
    log_csv: str | None = Field(default=None, description="per-step loss log CSV")
    resume_from: str | None = Field(default=None, description="checkpoint to resume")


class TrainResponse(BaseModel):
    checkpoint_path: str
    steps: int
    final_g_loss: float
    final_d_loss: float
    log_csv: str | None


class DenoiseRequest(BaseModel):
    checkpoint_path: str
    input_dir: str = Field(description="directory of PNG images to denoise")
    output_dir: str
    bit_depth: int = 16


class DenoiseResponse(BaseModel):
    written: list[str]


class EvalRequest(BaseModel):
    checkpoint_path: str
    manifest_path: str
    output_dir: str
    split: str = Field(default="eval", description="manifest split to evaluate")
    hfrr_cutoff: float = 0.25
    wavelet_levels: int = 2
    spectra: bool = Field(default=False, description="emit radial-spectrum CSVs")
    svg: bool = Field(default=False, description="emit SVG spectrum plots")


class MethodAggregate(BaseModel):
    method: str
    psnr_db: float
    ssim: float
    hfrr: float
    wavelet_mae: float


class EvalResponse(BaseModel):
    metrics_csv: str
    aggregates: list[MethodAggregate]
    images: int


class SpectrumRequest(BaseModel):
    images: list[str] = Field(description="PNG paths to analyze")
    output_dir: str
    n_bins: int = 16
    svg: bool = False


class SpectrumResponse(BaseModel):
    csv_paths: list[str]
    svg_path: str | None


class AblateRequest(BaseModel):
    config_path: str | None = None
    overrides: dict[str, str] = Field(default_factory=dict)
    manifest_path: str | None = None
    variants: list[str] = Field(default_factory=list,
                                description="empty = all comparison-table variants")
    output_csv: str = Field(description="comparison table destination")


class VariantRow(BaseModel):
    variant: str
    psnr_db: float
    ssim: float
    hfrr: float
    wavelet_mae: float
    seconds: float


class AblateResponse(BaseModel):
    output_csv: str
    rows: list[VariantRow]


class ErrorBody(BaseModel):
    error_kind: str
    message: str
