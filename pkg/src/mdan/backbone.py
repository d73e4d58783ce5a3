"""Encoder, predictor head and reconstruction decoder, plus checkpoint archives."""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

ENCODER_KINDS = ("bidirectional-recurrent", "temporal-convolutional")


class ConfigError(ValueError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class BackboneConfig:
    n_sensors: int = 14
    window: int = 30
    encoder_kind: str = "bidirectional-recurrent"
    num_layers: int = 5
    hidden_units: int = 32
    predictor_widths: tuple = (32, 16, 1)
    dropout_rate: float = 0.5
    task: str = "regression"
    num_classes: int = 1
    # fixed multiplier on the predictor output, lets the head work in unit scale
    output_scale: float = 1.0
    # temporal-convolutional encoder only
    conv_channels: tuple = (32, 32, 64, 64, 128)
    kernel_size: int = 8
    conv_stride: int = 2

    def __post_init__(self):
        self.predictor_widths = tuple(self.predictor_widths)
        self.conv_channels = tuple(self.conv_channels)

    def validate(self):
        errors = []
        if self.encoder_kind not in ENCODER_KINDS:
            errors.append(f"encoder_kind must be one of {ENCODER_KINDS}")
        if self.task not in ("regression", "classification"):
            errors.append("task must be regression or classification")
        if not self.predictor_widths:
            errors.append("predictor_widths must not be empty")
        elif self.task == "regression" and self.predictor_widths[-1] != 1:
            errors.append("regression requires a final predictor width of 1")
        elif self.task == "classification" and self.predictor_widths[-1] != self.num_classes:
            errors.append("classification requires final predictor width == num_classes")
        if not 0 <= self.dropout_rate < 1:
            errors.append("dropout_rate must be in [0, 1)")
        if min(self.num_layers, self.hidden_units, self.n_sensors, self.window) < 1:
            errors.append("layer, unit, sensor and window counts must be positive")
        if self.encoder_kind == "temporal-convolutional" and len(self.conv_channels) != self.num_layers:
            errors.append("conv_channels must list one width per layer")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    @property
    def feature_dim(self) -> int:
        if self.encoder_kind == "bidirectional-recurrent":
            return 2 * self.hidden_units
        return self.conv_channels[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["predictor_widths"] = list(self.predictor_widths)
        d["conv_channels"] = list(self.conv_channels)
        return d


class FeatureBatch(NamedTuple):
    g: torch.Tensor  # (batch, feature_dim)
    g_seq: torch.Tensor  # (batch, steps, hidden)


class Backbone(nn.Module):
    """Sequence encoder ``g``, predictor ``f`` and a per-step reconstruction decoder."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config.validate()
        c = config
        if c.encoder_kind == "bidirectional-recurrent":
            self.rnn = nn.LSTM(
                c.n_sensors, c.hidden_units, num_layers=c.num_layers, batch_first=True,
                bidirectional=True, dropout=c.dropout_rate if c.num_layers > 1 else 0.0,
            )
        else:
            convs = []
            in_ch = c.n_sensors
            for out_ch in c.conv_channels:
                convs.append(nn.Conv1d(in_ch, out_ch, c.kernel_size, stride=c.conv_stride,
                                       padding=c.kernel_size // 2))
                in_ch = out_ch
            self.convs = nn.ModuleList(convs)
        self.feature_dropout = nn.Dropout(c.dropout_rate)
        layers = []
        width = c.feature_dim
        for i, w in enumerate(c.predictor_widths):
            layers.append(nn.Linear(width, w))
            if i < len(c.predictor_widths) - 1:
                layers += [nn.ReLU(), nn.Dropout(c.dropout_rate)]
            width = w
        self.predictor = nn.Sequential(*layers)
        self.decoder = nn.Linear(c.feature_dim, c.n_sensors)

    def _check_input(self, x):
        c = self.config
        if x.ndim != 3 or x.shape[1] != c.n_sensors or x.shape[2] != c.window:
            raise ValueError(f"expected input (batch, {c.n_sensors}, {c.window}), got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor) -> FeatureBatch:
        self._check_input(x)
        if len(x) == 0:
            h = self.config.feature_dim
            return FeatureBatch(x.new_zeros(0, h), x.new_zeros(0, self.config.window, h))
        if self.config.encoder_kind == "bidirectional-recurrent":
            seq, _ = self.rnn(x.transpose(1, 2))
            g = seq[:, -1, :]
        else:
            h = x
            for i, conv in enumerate(self.convs):
                h = F.relu(conv(h))
                if i < len(self.convs) - 1:
                    h = self.feature_dropout(h)
            g = h.mean(dim=2)
            seq = h.transpose(1, 2)
        return FeatureBatch(self.feature_dropout(g), seq)

    def predict(self, g) -> torch.Tensor:
        if isinstance(g, FeatureBatch):
            g = g.g
        if g.ndim != 2 or g.shape[1] != self.config.feature_dim:
            raise ValueError(f"expected features (batch, {self.config.feature_dim}), got {tuple(g.shape)}")
        return self.predictor(g) * self.config.output_scale

    def reconstruct(self, g_seq) -> torch.Tensor:
        if isinstance(g_seq, FeatureBatch):
            g_seq = g_seq.g_seq
        if g_seq.ndim != 3 or g_seq.shape[2] != self.config.feature_dim:
            raise ValueError(f"expected per-step features (batch, steps, {self.config.feature_dim})")
        if g_seq.shape[1] != self.config.window:
            g_seq = F.interpolate(g_seq.transpose(1, 2), size=self.config.window, mode="linear",
                                  align_corners=False).transpose(1, 2)
        return self.decoder(g_seq).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.predict(self.encode(x).g)


def init_params(config: BackboneConfig, seed: int, dtype=torch.float32) -> Backbone:
    """Build a backbone with PyTorch's default initialisation under a private seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Backbone(config)
    return model.to(dtype)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# archives

_EPOCH = (1980, 1, 1, 0, 0, 0)


def tensor_bytes(t) -> bytes:
    buf = io.BytesIO()
    a = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    np.save(buf, a, allow_pickle=False)
    return buf.getvalue()


def bytes_tensor(b: bytes) -> torch.Tensor:
    return torch.from_numpy(np.load(io.BytesIO(b), allow_pickle=False).copy())


def write_archive(path, entries: dict[str, bytes]) -> Path:
    """Zip archive with fixed timestamps and a sha256 index, so equal content gives equal bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {name: hashlib.sha256(data).hexdigest() for name, data in sorted(entries.items())}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, data in [("index.json", json.dumps(index, sort_keys=True).encode())] + sorted(entries.items()):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)
    tmp.replace(path)
    return path


def read_archive(path) -> dict[str, bytes]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            entries = {name: zf.read(name) for name in zf.namelist()}
    except (zipfile.BadZipFile, OSError, zlib.error) as exc:
        raise CheckpointError(f"{path}: corrupt archive ({exc})") from exc
    if "index.json" not in entries:
        raise CheckpointError(f"{path}: archive has no index")
    index = json.loads(entries.pop("index.json"))
    if set(index) != set(entries):
        raise CheckpointError(f"{path}: archive entries do not match index")
    for name, digest in index.items():
        if hashlib.sha256(entries[name]).hexdigest() != digest:
            raise CheckpointError(f"{path}: integrity check failed for {name}")
    return entries


def save_model(path, model: Backbone, extra: dict | None = None) -> Path:
    entries = {"config.json": json.dumps(model.config.to_dict(), sort_keys=True, indent=1).encode()}
    for name, t in model.state_dict().items():
        entries[f"params/{name}.npy"] = tensor_bytes(t)
    if extra:
        entries.update(extra)
    return write_archive(path, entries)


def model_from_entries(entries: dict[str, bytes]) -> Backbone:
    cfg = BackboneConfig(**json.loads(entries["config.json"]))
    state = {k[len("params/"):-len(".npy")]: bytes_tensor(v) for k, v in entries.items() if k.startswith("params/")}
    dtype = next(iter(state.values())).dtype
    model = Backbone(cfg).to(dtype)
    model.load_state_dict(state)
    return model


def load_model(path) -> Backbone:
    return model_from_entries(read_archive(path))
