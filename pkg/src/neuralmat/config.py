"""Layered run configuration: defaults < config file < environment < flags.

The config file is flat INI (key-value with sections). Every command writes
the fully resolved configuration into its run directory so any artifact is
reproducible from that directory alone.
"""

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

from .features import FeatureExtractor
from .nets import ModelConfig
from .training import FinetuneConfig, TrainConfig

ENV_DATA = "NEURALMAT_DATA"
ENV_CACHE = "NEURALMAT_CACHE"

DEFAULTS: dict[str, dict[str, str]] = {
    "model": {
        "latent_dim": "64",
        "noise_channels": "8",
        "widths": "32,64,128,256,256",
        "input_height": "384",
        "input_width": "512",
        "alpha_mode": "squared",
        "height_max": "2.0",
        "encoder_backbone": "resnet50",
        "decoder_only": "false",
        "reference_size": "512",
        "init_seed": "0",
    },
    "features": {
        "width_mult": "1.0",
        "seed": "911",
        "weights_file": "",
    },
    "train": {
        "batch_size": "4",
        "learning_rate": "1e-4",
        "weight_decay": "1e-5",
        "kl_weight": "1e-3",
        "kl_warmup_frac": "0.1",
        "steps": "1000",
        "n_crops": "4",
        "scale_min": "0.1",
        "scale_max": "8.0",
        "fourier": "true",
        "alignment": "true",
        "seed": "0",
        "render_every": "250",
        "checkpoint_every": "500",
    },
    "finetune": {
        "steps": "1000",
        "learning_rate": "1e-3",
        "weight_decay": "1e-5",
        "n_crops": "4",
        "fourier": "true",
        "alignment": "true",
        "seed": "0",
    },
    "paths": {
        "data": "",
        "cache": "",
    },
}


@dataclass
class AppConfig:
    """Fully resolved configuration for one run."""

    raw: dict[str, dict[str, str]]

    @property
    def model(self) -> ModelConfig:
        m = self.raw["model"]
        return ModelConfig(
            latent_dim=int(m["latent_dim"]),
            noise_channels=int(m["noise_channels"]),
            widths=tuple(int(x) for x in m["widths"].split(",")),
            input_size=(int(m["input_height"]), int(m["input_width"])),
            alpha_mode=m["alpha_mode"],
            height_max=float(m["height_max"]),
            encoder_backbone=m["encoder_backbone"],
            decoder_only=_bool(m["decoder_only"]),
            reference_size=int(m["reference_size"]),
            init_seed=int(m["init_seed"]),
        )

    @property
    def train(self) -> TrainConfig:
        t = self.raw["train"]
        return TrainConfig(
            batch_size=int(t["batch_size"]),
            learning_rate=float(t["learning_rate"]),
            weight_decay=float(t["weight_decay"]),
            kl_weight=float(t["kl_weight"]),
            kl_warmup_frac=float(t["kl_warmup_frac"]),
            steps=int(t["steps"]),
            n_crops=int(t["n_crops"]),
            scale_range=(float(t["scale_min"]), float(t["scale_max"])),
            fourier=_bool(t["fourier"]),
            alignment=_bool(t["alignment"]),
            seed=int(t["seed"]),
            render_every=int(t["render_every"]),
            checkpoint_every=int(t["checkpoint_every"]),
        )

    @property
    def finetune(self) -> FinetuneConfig:
        f = self.raw["finetune"]
        return FinetuneConfig(
            steps=int(f["steps"]),
            learning_rate=float(f["learning_rate"]),
            weight_decay=float(f["weight_decay"]),
            n_crops=int(f["n_crops"]),
            fourier=_bool(f["fourier"]),
            alignment=_bool(f["alignment"]),
            seed=int(f["seed"]),
        )

    @property
    def data_root(self) -> str | None:
        return self.raw["paths"]["data"] or None

    @property
    def cache_dir(self) -> str | None:
        return self.raw["paths"]["cache"] or None

    def make_extractor(self) -> FeatureExtractor:
        f = self.raw["features"]
        return FeatureExtractor(
            width_mult=float(f["width_mult"]),
            seed=int(f["seed"]),
            weights_file=f["weights_file"] or None,
        )


def _bool(value: str) -> bool:
    return value.strip().lower() in ("1", "true", "yes", "on")


def build_app_config(
    config_file: str | None = None,
    overrides: dict[str, dict[str, str]] | None = None,
    env: dict | None = None,
) -> AppConfig:
    env = os.environ if env is None else env
    raw = {section: dict(values) for section, values in DEFAULTS.items()}

    if config_file:
        parser = configparser.ConfigParser()
        read = parser.read(config_file)
        if not read:
            raise IOError(f"could not read config file: {config_file}")
        for section in parser.sections():
            if section == "meta":
                continue  # written by write_resolved; carries only the schema
            if section not in raw:
                raise ValueError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in raw[section]:
                    raise ValueError(f"unknown config key {key!r} in [{section}]")
                raw[section][key] = value

    if env.get(ENV_DATA):
        raw["paths"]["data"] = env[ENV_DATA]
    if env.get(ENV_CACHE):
        raw["paths"]["cache"] = env[ENV_CACHE]

    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if value is not None:
                raw[section][key] = str(value)
    return AppConfig(raw=raw)


CONFIG_SCHEMA = 1


def write_resolved(app: AppConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser["meta"] = {"schema": str(CONFIG_SCHEMA)}
    for section, values in app.raw.items():
        parser[section] = values
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
