"""Mixup ratios, convex combinations, the progressive ratio scheduler and
the sliced Wasserstein estimate that drives it."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np


class SchedulerExhausted(RuntimeError):
    pass


def sample_beta(alpha: float, rng: np.random.Generator) -> float:
    if not alpha > 0:
        raise ValueError(f"Beta concentration must be positive, got {alpha}")
    return float(rng.beta(alpha, alpha))


class MixedBatch(NamedTuple):
    x_or_g: Any
    y: Any
    lam: float


def mixup_pair(a_i, a_j, y_i, y_j, lam: float) -> MixedBatch:
    """``lam * a_i + (1 - lam) * a_j`` with labels mixed by the same ratio.

    Works on numpy arrays, torch tensors or plain floats; for classification
    pass one-hot / probability labels.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixup ratio must lie in [0, 1], got {lam}")
    if np.shape(a_i) != np.shape(a_j):
        raise ValueError(f"cannot mix shapes {tuple(np.shape(a_i))} and {tuple(np.shape(a_j))}")
    if lam == 1.0:
        return MixedBatch(a_i, y_i, lam)
    if lam == 0.0:
        return MixedBatch(a_j, y_j, lam)
    return MixedBatch(lam * a_i + (1.0 - lam) * a_j, lam * y_i + (1.0 - lam) * y_j, lam)


# ---------------------------------------------------------------------------
# sliced Wasserstein


def _as_2d(a) -> np.ndarray:
    if hasattr(a, "detach"):
        a = a.detach().cpu().numpy()
    a = np.asarray(a, dtype=np.float64)
    return a[:, None] if a.ndim == 1 else a


def wasserstein_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Exact W1 between two empirical 1-D distributions (quantile matching)."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    # integrate |Fa^-1(u) - Fb^-1(u)| over the merged quantile grid
    grid = np.union1d(np.arange(1, len(a) + 1) / len(a), np.arange(1, len(b) + 1) / len(b))
    widths = np.diff(np.concatenate([[0.0], grid]))
    mid = grid - widths / 2
    qa = a[np.minimum((mid * len(a)).astype(int), len(a) - 1)]
    qb = b[np.minimum((mid * len(b)).astype(int), len(b) - 1)]
    return float(np.sum(widths * np.abs(qa - qb)))


def random_projections(dim: int, n_projections: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n_projections, dim))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def domain_distance(emb_a, emb_b, n_projections: int = 32, seed: int = 0) -> float:
    """Sliced W1 between two feature batches, averaged over random unit directions."""
    a, b = _as_2d(emb_a), _as_2d(emb_b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("domain_distance needs two non-empty batches")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    proj = random_projections(a.shape[1], n_projections, seed)
    pa, pb = a @ proj.T, b @ proj.T
    return float(np.mean([wasserstein_1d(pa[:, k], pb[:, k]) for k in range(n_projections)]))


# ---------------------------------------------------------------------------
# progressive ratio


@dataclass(frozen=True)
class SchedulerState:
    lambda_prev: float = 0.0
    n: int = 1
    N: int = 1
    T: float = 0.05
    sigma: float = 0.2
    last_q: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.lambda_prev <= 1.0:
            raise ValueError("lambda_prev must lie in [0, 1]")
        if self.N < 1 or self.n < 1:
            raise ValueError("iteration counters must be >= 1")
        if not self.T > 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lambda_prev", "n", "N", "T", "sigma", "last_q")}


def source_similarity(d_s_mix: float, d_t_mix: float, T: float) -> float:
    """Weighting factor ``q = exp(-d_s / ((d_s + d_t) * T))``."""
    if d_s_mix < 0 or d_t_mix < 0:
        raise ValueError("distances must be non-negative")
    total = d_s_mix + d_t_mix
    if total == 0:
        raise ValueError("d_s_mix and d_t_mix cannot both be zero")
    return math.exp(-d_s_mix / (total * T))


def scheduler_step(state: SchedulerState, d_s_mix: float, d_t_mix: float, rng: np.random.Generator,
                   q: float | None = None) -> tuple[float, SchedulerState]:
    """Advance the ratio schedule by one iteration.

    ``q`` may be forced (tests, degenerate batches); otherwise it is computed
    from the two distances. Returns the perturbed, clamped ratio and the new
    state whose ``lambda_prev`` holds the unperturbed ``lambda_n``.
    """
    if state.n > state.N:
        raise SchedulerExhausted(f"scheduler exhausted after {state.N} iterations")
    if q is None:
        q = source_similarity(d_s_mix, d_t_mix, state.T)
    lam_n = state.n * (1.0 - q) / state.N + q * state.lambda_prev
    lam_n = min(max(lam_n, 0.0), 1.0)
    lam_tilde = float(np.clip(rng.uniform(lam_n - state.sigma, lam_n + state.sigma), 0.0, 1.0))
    return lam_tilde, replace(state, lambda_prev=lam_n, n=state.n + 1, last_q=q)


TRACE_FIELDS = ("n", "q", "lambda_n", "lambda_tilde", "d_s_mix", "d_t_mix")


class SchedulerTrace:
    """Append-only CSV diagnostic stream of scheduler steps."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(TRACE_FIELDS)

    def append(self, n, q, lambda_n, lambda_tilde, d_s_mix, d_t_mix):
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([n, repr(q), repr(lambda_n), repr(lambda_tilde), repr(d_s_mix), repr(d_t_mix)])
