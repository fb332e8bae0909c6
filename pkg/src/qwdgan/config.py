"""Training configuration: dataclass, INI-style file round trip, overrides.

The config file is human-readable ``key = value`` under four sections
([train], [generator], [discriminator], [losses]); every field of
``TrainConfig`` is representable, and CLI flags override file values.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass
from pathlib import Path

from .discriminator import DiscriminatorConfig
from .errors import ConfigError, DataError
from .generator import GeneratorConfig
from .ioutil import atomic_write_text
from .losses import CompositeLossWeights

FUSION_MODES = ("spatial", "channel", "none")


@dataclass
class TrainConfig:
    """Everything a training run needs, ablation toggles included."""

    generator: GeneratorConfig = dataclasses.field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = dataclasses.field(default_factory=DiscriminatorConfig)
    weights: CompositeLossWeights = dataclasses.field(default_factory=CompositeLossWeights)

    # ablation toggles (one per comparison-table row)
    fsff_off: bool = False
    wavelet_branch_off: bool = False
    wcg_off: bool = False
    wavelet_loss_off: bool = False
    naive_fusion: bool = False
    iqa_off: bool = False
    fusion_mode: str = "spatial"
    iqa_loss_off: bool = False
    percep_loss_off: bool = False
    gan_off: bool = False

    # optimization
    learning_rate: float = 1e-4
    batch_size: int = 4
    steps: int = 2000
    seed: int = 0
    patch_size: int = 64
    wavelet_loss_levels: int = 2

    def validate(self) -> None:
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.patch_size < 8:
            raise ConfigError("patch_size must be >= 8")
        self.weights.validate()
        self.generator_config().validate()
        self.discriminator_config().validate()

    def generator_config(self) -> GeneratorConfig:
        """Generator architecture with the ablation toggles applied."""
        return dataclasses.replace(
            self.generator,
            fsff_off=self.fsff_off,
            wavelet_branch_off=self.wavelet_branch_off,
            wcg_off=self.wcg_off,
            naive_fusion=self.naive_fusion,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return dataclasses.replace(
            self.discriminator,
            fusion_mode=self.fusion_mode,
            iqa_off=self.iqa_off,
        )


_TRAIN_FIELDS = ("fsff_off", "wavelet_branch_off", "wcg_off", "wavelet_loss_off",
                 "naive_fusion", "iqa_off", "fusion_mode", "iqa_loss_off",
                 "percep_loss_off", "gan_off", "learning_rate", "batch_size",
                 "steps", "seed", "patch_size", "wavelet_loss_levels")
_GEN_FIELDS = ("in_channels", "base_channels", "scales", "wcg_groups",
               "blocks_per_scale", "wavelet_family", "max_channels", "wtc_kernel_size")
_DISC_FIELDS = ("in_channels", "base_channels", "entropy_window", "entropy_bins")
_LOSS_FIELDS = ("lambda1_recon", "lambda2_percep", "lambda3_wavelet", "mu1_l1", "mu2_iqa")

_SECTIONS = {
    "train": (_TRAIN_FIELDS, None),
    "generator": (_GEN_FIELDS, "generator"),
    "discriminator": (_DISC_FIELDS, "discriminator"),
    "losses": (_LOSS_FIELDS, "weights"),
}


def _coerce(current, raw: str):
    if isinstance(current, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw.strip()


def config_to_text(config: TrainConfig) -> str:
    parser = configparser.ConfigParser()
    for section, (fields, attr) in _SECTIONS.items():
        target = config if attr is None else getattr(config, attr)
        parser[section] = {name: str(getattr(target, name)) for name in fields}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(config: TrainConfig, path) -> None:
    atomic_write_text(path, config_to_text(config))


def apply_override(config: TrainConfig, dotted_key: str, raw_value: str) -> None:
    """Set one field from a 'section.key' (or bare 'key' = train.key) string."""
    if "." in dotted_key:
        section, _, key = dotted_key.partition(".")
    else:
        section, key = "train", dotted_key
    if section not in _SECTIONS:
        raise ConfigError(f"unknown config section {section!r}")
    fields, attr = _SECTIONS[section]
    if key not in fields:
        raise ConfigError(f"unknown config key {section}.{key}")
    target = config if attr is None else getattr(config, attr)
    try:
        setattr(target, key, _coerce(getattr(target, key), raw_value))
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw_value!r}") from exc


def parse_config_text(text: str) -> TrainConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise DataError(f"malformed config file: {exc}") from exc
    config = TrainConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise DataError(f"unknown config section [{section}]")
        for key, value in parser[section].items():
            try:
                apply_override(config, f"{section}.{key}", value)
            except ConfigError as exc:
                raise DataError(str(exc)) from exc
    return config


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def config_to_dict(config: TrainConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(payload: dict) -> TrainConfig:
    config = TrainConfig()
    for section, (fields, attr) in _SECTIONS.items():
        source = payload if attr is None else payload.get(attr, {})
        target = config if attr is None else getattr(config, attr)
        for name in fields:
            if attr is None and name in payload:
                setattr(target, name, payload[name])
            elif attr is not None and name in source:
                setattr(target, name, source[name])
    return config
