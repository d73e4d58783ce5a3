"""Metrics, the embedding-space KL probe and embedding export."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

log = logging.getLogger(__name__)

SCORE_CONVENTIONS = ("nasa", "paper-literal")
EXP_CLIP = 700.0
VAR_FLOOR = 1e-6


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if len(y) != len(y_hat):
        raise ValueError(f"length mismatch: {len(y)} targets vs {len(y_hat)} predictions")
    if len(y) == 0:
        raise ValueError("metric of an empty set is undefined")
    return y, y_hat


def rmse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y_hat - y) ** 2)))


def _safe_exp(z: np.ndarray) -> np.ndarray:
    if np.any(z > EXP_CLIP):
        warnings.warn(f"score exponent clipped at {EXP_CLIP}", RuntimeWarning, stacklevel=3)
        z = np.minimum(z, EXP_CLIP)
    return np.exp(z)


def score(y, y_hat, convention: str = "nasa", reduction: str = "mean") -> float:
    """Asymmetric exponential RUL score; late predictions (``y_hat > y``) cost more.

    ``nasa``: ``exp(-d/13) - 1`` early, ``exp(d/10) - 1`` late, with ``d = y_hat - y``.
    ``paper-literal``: ``exp(d/13 - 1)`` early, ``exp(d/10 - 1)`` late.
    """
    y, y_hat = _pair(y, y_hat)
    d = y_hat - y
    early = d < 0
    if convention == "nasa":
        s = np.where(early, _safe_exp(np.where(early, -d / 13.0, 0.0)) - 1.0,
                     _safe_exp(np.where(early, 0.0, d / 10.0)) - 1.0)
    elif convention == "paper-literal":
        s = np.where(early, _safe_exp(np.where(early, d / 13.0 - 1.0, 0.0)),
                     _safe_exp(np.where(early, 0.0, d / 10.0 - 1.0)))
    else:
        raise ValueError(f"unknown score convention {convention!r}")
    if reduction == "mean":
        return float(np.mean(s))
    if reduction == "sum":
        return float(np.sum(s))
    raise ValueError(f"unknown reduction {reduction!r}")


def accuracy(labels, predictions) -> float:
    labels = np.asarray(labels).ravel()
    predictions = np.asarray(predictions).ravel()
    if len(labels) != len(predictions):
        raise ValueError("length mismatch")
    if len(labels) == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(labels == predictions))


def _gaussian_fit(emb: np.ndarray):
    mu = emb.mean(axis=0)
    var = emb.var(axis=0) if len(emb) >= 2 else np.zeros(emb.shape[1])
    if len(emb) < 2 or np.any(var < VAR_FLOOR):
        warnings.warn(f"embedding variance floored at {VAR_FLOOR}", RuntimeWarning, stacklevel=3)
        var = np.maximum(var, VAR_FLOOR)
    return mu, var


def kl_probe(source_emb, target_emb) -> float:
    """Closed-form KL(source || target) between diagonal Gaussians fitted to each set."""
    p = np.asarray(source_emb.detach() if hasattr(source_emb, "detach") else source_emb, dtype=np.float64)
    q = np.asarray(target_emb.detach() if hasattr(target_emb, "detach") else target_emb, dtype=np.float64)
    if p.ndim == 1:
        p, q = p[:, None], q[:, None]
    if len(p) == 0 or len(q) == 0:
        raise ValueError("kl_probe needs non-empty embedding sets")
    mu_p, var_p = _gaussian_fit(p)
    mu_q, var_q = _gaussian_fit(q)
    kl = 0.5 * np.sum(np.log(var_q / var_p) + (var_p + (mu_p - mu_q) ** 2) / var_q - 1.0)
    return float(max(kl, 0.0))


@dataclass
class KLProbeResult:
    before: float
    after: float
    scenario: str

    @property
    def decreased(self) -> bool:
        return self.after < self.before


# ---------------------------------------------------------------------------
# model-facing helpers


@torch.no_grad()
def embed(model, x, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode pooled features for an ``(n, M, K)`` array."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = [model.encode(torch.tensor(np.asarray(x[i:i + batch_size]), dtype=dtype)).g.numpy()
           for i in range(0, len(x), batch_size)]
    model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.config.feature_dim))


@torch.no_grad()
def predict_array(model, x, batch_size: int = 1024) -> np.ndarray:
    """Eval-mode predictions (RUL reals or logits)."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = [model(torch.tensor(np.asarray(x[i:i + batch_size]), dtype=dtype)).numpy()
           for i in range(0, len(x), batch_size)]
    model.train(was_training)
    width = model.config.predictor_widths[-1]
    return np.concatenate(out) if out else np.zeros((0, width))


@dataclass
class MetricReport:
    n: int
    rmse: float = float("nan")
    score_paper: float = float("nan")
    score_nasa: float = float("nan")
    score_paper_sum: float = float("nan")
    score_nasa_sum: float = float("nan")
    accuracy: float = float("nan")
    per_unit: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("per_unit")
        return d

    def to_text(self) -> str:
        return "".join(f"{k}: {v!r}\n" for k, v in self.summary().items())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        vals = {}
        for line in text.splitlines():
            if ":" in line:
                k, v = line.split(":", 1)
                vals[k.strip()] = float(v) if k.strip() != "n" else int(v)
        return cls(**vals)


def evaluate(model, split, task: str = "regression") -> MetricReport:
    """Metrics of ``model`` on a :class:`~mdan.data.WindowSet`."""
    pred = predict_array(model, split.x)
    if task == "regression":
        y_hat = pred.reshape(-1)
        y = np.asarray(split.y, dtype=np.float64)
        return MetricReport(
            n=len(y),
            rmse=rmse(y, y_hat),
            score_paper=score(y, y_hat, "paper-literal"),
            score_nasa=score(y, y_hat, "nasa"),
            score_paper_sum=score(y, y_hat, "paper-literal", "sum"),
            score_nasa_sum=score(y, y_hat, "nasa", "sum"),
            per_unit=[(int(u), float(a), float(b)) for u, a, b in zip(split.unit, y, y_hat)],
        )
    labels = np.asarray(split.y)
    return MetricReport(n=len(labels), accuracy=accuracy(labels, pred.argmax(axis=1)))


def export_embeddings(splits: Mapping[str, object], model, path, batch_size: int = 1024) -> Path:
    """Write ``domain, label, f0..f{d-1}`` rows for every sample of every split.

    ``splits`` maps a domain tag to a :class:`~mdan.data.WindowSet`; rows keep
    mapping order and then sample order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dim = model.config.feature_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["domain", "label"] + [f"f{i}" for i in range(dim)])
        for tag, split in splits.items():
            if len(split) == 0:
                continue
            feats = embed(model, split.x, batch_size)
            for label, row in zip(split.y, feats):
                w.writerow([tag, repr(label.item())] + [repr(float(v)) for v in row])
    return path


def read_embeddings(path):
    """Inverse of :func:`export_embeddings`: ``(domains, labels, features)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    dim = len(rows[0]) - 2
    domains = [r[0] for r in body]
    labels = np.array([float(r[1]) for r in body])
    feats = np.array([[float(v) for v in r[2:]] for r in body]).reshape(len(body), dim)
    return domains, labels, feats
