"""Mixup domain adaptation for time-series regression and classification."""

__version__ = "0.1.0"

from .backbone import Backbone, BackboneConfig, init_params, load_model, save_model
from .config import ExperimentConfig, resolve_config
from .data import DomainDataset, ShiftSpec, WindowSet, load_cmapss, load_mfd, make_synthetic_pair
from .evaluation import MetricReport, evaluate, export_embeddings, kl_probe, rmse, score
from .mixup import SchedulerState, domain_distance, mixup_pair, sample_beta, scheduler_step
from .objectives import LossWeights
from .trainer import TrainState, checkpoint, resume, train_mdan

__all__ = [
    "Backbone", "BackboneConfig", "init_params", "load_model", "save_model",
    "ExperimentConfig", "resolve_config",
    "DomainDataset", "ShiftSpec", "WindowSet", "load_cmapss", "load_mfd", "make_synthetic_pair",
    "MetricReport", "evaluate", "export_embeddings", "kl_probe", "rmse", "score",
    "SchedulerState", "domain_distance", "mixup_pair", "sample_beta", "scheduler_step",
    "LossWeights",
    "TrainState", "checkpoint", "resume", "train_mdan",
]
