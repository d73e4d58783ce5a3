"""Experiment configuration: dataclasses, per-dataset defaults and layered overrides.

Precedence is command line > config file > dataset defaults.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .backbone import BackboneConfig
from .data import CMAPSS_SUBSETS, MFD_CONDITIONS
from .objectives import LossWeights

# epochs, batch size, learning rate per source dataset
DATASET_DEFAULTS = {
    "FD001": dict(epochs=100, batch_size=256, learning_rate=3e-4),
    "FD002": dict(epochs=75, batch_size=256, learning_rate=3e-4),
    "FD003": dict(epochs=150, batch_size=256, learning_rate=3e-4),
    "FD004": dict(epochs=175, batch_size=256, learning_rate=3e-4),
    "MFD": dict(epochs=15, batch_size=512, learning_rate=1e-4),
}

ABLATIONS = ("full", "source_only", "no_target", "no_mixup", "no_ssl")


class ConfigValidationError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class SchedulerConfig:
    T: float = 0.05
    sigma: float = 0.2
    lambda0: float = 0.0
    n_projections: int = 32


@dataclass
class AblationConfig:
    source_only: bool = False
    no_target: bool = False
    no_mixup: bool = False
    no_ssl: bool = False

    @classmethod
    def named(cls, name: str) -> "AblationConfig":
        if name not in ABLATIONS:
            raise ConfigValidationError([f"unknown ablation {name!r}; expected one of {ABLATIONS}"])
        return cls() if name == "full" else cls(**{name: True})

    @property
    def name(self) -> str:
        on = [k for k, v in asdict(self).items() if v]
        return "+".join(on) if on else "full"


@dataclass
class DataConfig:
    kind: str = "cmapss"  # cmapss | mfd | synthetic
    window: int = 30
    step: int = 1
    normalization: str = "per_domain"
    mfd_window: int = 5120
    mfd_shift: int = 4096
    # synthetic pair only
    synthetic_task: str = "regression"
    synthetic_seed: int | None = None
    shift_scale: float = 2.0
    shift_offset: float = 0.5
    shift_noise: float = 0.0
    n_train_units: int = 40
    n_test_units: int = 20
    life_min: int = 60
    life_max: int = 140
    signal_window: int = 256
    signal_shift: int = 128


@dataclass
class ExperimentConfig:
    scenario: tuple = ("FD001", "FD002")
    epochs: int = 100
    batch_size: int = 256
    learning_rate: float = 3e-4
    weights: LossWeights = field(default_factory=LossWeights)
    beta_alpha: float = 0.2
    mask_prob: float = 0.5
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    rul_cap: float = 125.0
    pseudo_threshold: float = 0.9
    ablation: AblationConfig = field(default_factory=AblationConfig)
    seed: int = 0
    backbone: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    joint_objective: bool = False
    deterministic: bool = True
    eval_every_epoch: bool = True
    score_convention: str = "nasa"

    def __post_init__(self):
        self.scenario = tuple(self.scenario)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scenario"] = list(self.scenario)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        errors = []
        cfg = _build(cls, d, "", errors)
        try:
            cfg.validate()
        except ConfigValidationError as exc:
            errors.extend(exc.errors)
        if errors:
            raise ConfigValidationError(errors)
        return cfg

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    # -- validation --------------------------------------------------------

    def effective_weights(self) -> LossWeights:
        w = copy.copy(self.weights)
        if self.ablation.no_mixup:
            w.alpha1 = w.alpha3 = w.alpha5 = 0.0
        if self.ablation.no_ssl:
            w.alpha2 = 0.0
        return w

    def backbone_config(self, n_sensors: int, window: int, task: str, num_classes: int = 3) -> BackboneConfig:
        base = dict(n_sensors=n_sensors, window=window, task=task)
        if task == "classification":
            base.update(encoder_kind="temporal-convolutional", predictor_widths=(num_classes,),
                        num_classes=num_classes, dropout_rate=0.001)
        else:
            base.update(output_scale=self.rul_cap)
        base.update(self.backbone)
        return BackboneConfig(**base).validate()

    def validate(self):
        errors = []
        if len(self.scenario) != 2:
            errors.append("scenario must name a (source, target) pair")
        kind = self.data.kind
        if kind not in ("cmapss", "mfd", "synthetic"):
            errors.append(f"data.kind must be cmapss, mfd or synthetic (got {kind!r})")
        elif kind == "cmapss":
            bad = [s for s in self.scenario if s not in CMAPSS_SUBSETS]
            if bad:
                errors.append(f"unknown C-MAPSS subsets {bad}")
        elif kind == "mfd":
            bad = [s for s in self.scenario if s not in MFD_CONDITIONS]
            if bad:
                errors.append(f"unknown MFD conditions {bad}")
        if self.epochs < 1:
            errors.append("epochs must be >= 1")
        if self.batch_size < 1:
            errors.append("batch_size must be >= 1")
        if not self.learning_rate > 0:
            errors.append("learning_rate must be positive")
        if not self.beta_alpha > 0:
            errors.append("beta_alpha must be positive")
        if not 0 < self.mask_prob < 1:
            errors.append("mask_prob must lie in (0, 1)")
        if not self.scheduler.T > 0:
            errors.append("scheduler.T must be positive")
        if not 0 <= self.scheduler.sigma <= 1:
            errors.append("scheduler.sigma must lie in [0, 1]")
        if not 0 <= self.scheduler.lambda0 <= 1:
            errors.append("scheduler.lambda0 must lie in [0, 1]")
        if not self.rul_cap > 0:
            errors.append("rul_cap must be positive")
        if not 0 <= self.pseudo_threshold <= 1:
            errors.append("pseudo_threshold must lie in [0, 1]")
        if self.data.normalization not in ("per_domain", "source"):
            errors.append("data.normalization must be per_domain or source")
        if self.score_convention not in ("nasa", "paper-literal"):
            errors.append("score_convention must be nasa or paper-literal")
        for k in ("alpha1", "alpha2", "alpha3", "alpha4", "alpha5"):
            if getattr(self.weights, k) < 0:
                errors.append(f"weights.{k} must be non-negative")
        unknown = set(self.backbone) - {f.name for f in fields(BackboneConfig)}
        if unknown:
            errors.append(f"unknown backbone keys {sorted(unknown)}")
        if errors:
            raise ConfigValidationError(errors)
        return self


def _build(cls, d, prefix, errors):
    if d is None:
        return cls()
    if not isinstance(d, dict):
        errors.append(f"{prefix or 'config'} must be a mapping")
        return cls()
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in d.items():
        if key not in known:
            errors.append(f"unknown key {prefix}{key}")
            continue
        default = getattr(cls(), key) if key in ("weights", "scheduler", "ablation", "data") else None
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{prefix}{key}.", errors)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{prefix or 'config'}: {exc}")
        return cls()


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (update or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def defaults_for(scenario, kind: str = "cmapss") -> dict:
    """Dataset-level defaults keyed by the source domain."""
    if kind == "mfd":
        return dict(DATASET_DEFAULTS["MFD"], data={"kind": "mfd"})
    src = scenario[0] if scenario else "FD001"
    return dict(DATASET_DEFAULTS.get(src, DATASET_DEFAULTS["FD001"]))


def resolve_config(file_dict: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Layer dataset defaults, a config file mapping and command-line overrides."""
    file_dict = file_dict or {}
    overrides = overrides or {}
    layered = deep_merge(file_dict, overrides)
    scenario = layered.get("scenario", ExperimentConfig().scenario)
    kind = layered.get("data", {}).get("kind", "cmapss")
    base = defaults_for(scenario, kind)
    return ExperimentConfig.from_dict(deep_merge(base, layered))


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    d = yaml.safe_load(path.read_text()) or {}
    if not isinstance(d, dict):
        raise ConfigValidationError([f"{path}: top level must be a mapping"])
    return d


def bundled_configs() -> list[Path]:
    return sorted((Path(__file__).parent / "configs").glob("*.yaml"))
