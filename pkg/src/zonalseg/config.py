"""Experiment configuration: profiles, INI files and flag overrides.

A config file is plain INI; every key is optional and flags win over it::

    [experiment]
    architecture = unet        ; segnet | unet | pix2pix
    regime = mixed             ; d1 | d2 | mixed
    seed = 0
    profile = desk             ; full | desk
    output = runs/unet-mixed
    pretrained = runs/pretrain/unet.zseg

    [data]
    root = data                ; holds d1/, d2/, promise_like/
    patients = 8               ; phantom patients per dataset
    slices_per_patient = 32

    [model]
    base_width = 4
    levels = 4
    discriminator_levels = 5

    [training]
    epochs = 5
    target_size = 72
    crop_size = 64

    [optimizer.model]          ; any OptimizerConfig field
    lr = 0.01

    [optimizer.discriminator]
    lr = 0.0002
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .crossval import RunConfig
from .data import D1, D2, PROMISE_LIKE, DatasetDescriptor
from .evaluation import REGIMES
from .models import ARCHITECTURES, DEFAULT_LEVELS
from .optim import OptimizerConfig, default_optimizers
from .preprocess import PreprocConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    name: str
    base_width: int
    target_size: int
    crop_size: int
    epochs: Optional[int]
    levels: dict
    size_scale: float
    patients: dict
    slices: dict

    def descriptor(self, dataset_id: str) -> DatasetDescriptor:
        base = {"d1": D1, "d2": D2, "promise_like": PROMISE_LIKE}[dataset_id]
        if self.size_scale == 1.0:
            return base
        return base.scaled(self.size_scale)


PROFILES = {
    "full": Profile(
        "full", base_width=64, target_size=288, crop_size=256, epochs=None, levels=dict(DEFAULT_LEVELS),
        size_scale=1.0, patients={"d1": 21, "d2": 19, "promise_like": 50},
        slices={"d1": 18, "d2": 64, "promise_like": 28},
    ),
    "desk": Profile(
        "desk", base_width=4, target_size=72, crop_size=64, epochs=5,
        levels={"segnet": 4, "unet": 4, "pix2pix": 6, "discriminator": 5},
        size_scale=0.25, patients={"d1": 8, "d2": 8, "promise_like": 8},
        slices={"d1": 32, "d2": 32, "promise_like": 28},
    ),
}

# slices without prostate padded around each pre-training sample
PRETRAIN_EMPTY_MARGIN = (2, 2)


@dataclass(frozen=True)
class ExperimentConfig:
    architecture: str = "unet"
    regime: str = "mixed"
    seed: int = 0
    profile: str = "full"
    output: Path = Path("runs")
    data_root: Path = Path("data")
    pretrained: Optional[Path] = None
    patients: Optional[int] = None
    slices_per_patient: Optional[int] = None
    base_width: Optional[int] = None
    levels: Optional[int] = None
    discriminator_levels: Optional[int] = None
    epochs: Optional[int] = None
    target_size: Optional[int] = None
    crop_size: Optional[int] = None
    optimizer_overrides: dict = field(default_factory=dict)

    @property
    def pretrain(self) -> bool:
        return self.pretrained is not None

    @property
    def profile_obj(self) -> Profile:
        return PROFILES[self.profile]

    def _pick(self, name: str):
        value = getattr(self, name)
        return value if value is not None else getattr(self.profile_obj, name)

    @property
    def model_levels(self) -> int:
        return self.levels if self.levels is not None else self.profile_obj.levels[self.architecture]

    @property
    def disc_levels(self) -> int:
        if self.discriminator_levels is not None:
            return self.discriminator_levels
        return self.profile_obj.levels["discriminator"]

    def patient_count(self, dataset_id: str) -> int:
        return self.patients if self.patients is not None else self.profile_obj.patients[dataset_id]

    def slice_count(self, dataset_id: str) -> int:
        if self.slices_per_patient is not None:
            return self.slices_per_patient
        return self.profile_obj.slices[dataset_id]

    def preproc(self) -> PreprocConfig:
        t, c = self._pick("target_size"), self._pick("crop_size")
        return PreprocConfig(target_size=(t, t), crop_size=(c, c), seed=self.seed)

    def optimizers(self) -> dict[str, OptimizerConfig]:
        configs = default_optimizers(self.architecture)
        for role, changes in self.optimizer_overrides.items():
            configs[role] = configs[role].with_overrides(**changes)
        return configs

    def run_config(self) -> RunConfig:
        return RunConfig(
            architecture=self.architecture, base_width=self._pick("base_width"), levels=self.model_levels,
            discriminator_levels=self.disc_levels, epochs=self._pick("epochs"), seed=self.seed,
            preproc=self.preproc(), optimizers=self.optimizers(),
        )

    def effective(self) -> dict:
        """Resolved hyperparameters, for logging."""
        rc = self.run_config()
        return {
            "architecture": self.architecture, "regime": self.regime, "seed": self.seed, "profile": self.profile,
            "pretrained": str(self.pretrained) if self.pretrained else None, "base_width": rc.base_width,
            "levels": rc.model_levels, "epochs": rc.n_epochs,
            "target_size": list(rc.preproc.target_size), "crop_size": list(rc.preproc.crop_size),
            "optimizers": {role: cfg.to_dict() for role, cfg in rc.optimizer_configs().items()},
        }

    def validate(self, need_pretrained: bool = True) -> "ExperimentConfig":
        """Raise :class:`ConfigError` for anything that would fail later."""
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        if self.regime not in REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}; choose from {REGIMES}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {tuple(PROFILES)}")
        for name in ("patients", "slices_per_patient", "base_width", "levels", "discriminator_levels", "epochs",
                     "target_size", "crop_size"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.patients is not None and self.patients < 4:
            raise ConfigError("cross-validation needs at least 4 patients per dataset")
        for role in self.optimizer_overrides:
            if role not in default_optimizers(self.architecture):
                raise ConfigError(f"{self.architecture} has no {role!r} optimizer")
        try:
            preproc = self.preproc()
            self.optimizers()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        crop = preproc.crop_size[0]
        factor = 2**self.model_levels
        if self.architecture == "pix2pix":
            if crop != factor:
                raise ConfigError(f"pix2pix with {self.model_levels} levels needs crop_size {factor}, got {crop}")
            if crop % 2**self.disc_levels:
                raise ConfigError(f"discriminator with {self.disc_levels} levels cannot judge {crop}x{crop} inputs")
        elif crop % factor:
            raise ConfigError(f"crop_size {crop} is not divisible by 2**{self.model_levels}")
        if need_pretrained and self.pretrained is not None and not Path(self.pretrained).is_file():
            raise ConfigError(f"pretrained checkpoint {self.pretrained} does not exist")
        return self


_SECTIONS = {
    "experiment": {"architecture": str, "regime": str, "seed": int, "profile": str, "output": Path,
                   "pretrained": Path},
    "data": {"root": Path, "patients": int, "slices_per_patient": int},
    "model": {"base_width": int, "levels": int, "discriminator_levels": int},
    "training": {"epochs": int, "target_size": int, "crop_size": int},
}
_FIELD_NAMES = {("data", "root"): "data_root"}


def _parse_value(kind, raw: str, where: str):
    try:
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _parse_optimizer_value(raw: str, where: str):
    if "," in raw:
        return tuple(_parse_optimizer_value(part.strip(), where) for part in raw.split(","))
    for kind in (int, float):
        try:
            return kind(raw)
        except ValueError:
            pass
    return raw


def read_config_file(path) -> dict:
    """Flat dict of ``ExperimentConfig`` field values found in an INI file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values: dict = {}
    overrides: dict = {}
    for section in parser.sections():
        if section.startswith("optimizer."):
            role = section.split(".", 1)[1]
            overrides[role] = {k: _parse_optimizer_value(v, f"[{section}] {k}") for k, v in parser[section].items()}
            if "schedule" in overrides[role]:
                raise ConfigError(f"[{section}] schedule cannot be overridden from a config file")
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser[section].items():
            if key not in _SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            name = _FIELD_NAMES.get((section, key), key)
            values[name] = _parse_value(_SECTIONS[section][key], raw, f"[{section}] {key}")
    if overrides:
        values["optimizer_overrides"] = overrides
    return values


def build_config(file_values: Optional[dict] = None, **flags) -> ExperimentConfig:
    """Config file values overridden by every flag that is not ``None``."""
    values = dict(file_values or {})
    values.update({k: v for k, v in flags.items() if v is not None})
    for key in ("output", "data_root", "pretrained"):
        if values.get(key) is not None:
            values[key] = Path(values[key])
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
