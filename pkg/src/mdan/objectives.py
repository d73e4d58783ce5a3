"""Losses of the source, intermediate and target stages.

Every function takes the live :class:`~mdan.backbone.Backbone` and returns
torch scalars so the trainer (and the gradient checks) can differentiate
through them. Pseudo-labels always arrive as detached inputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .mixup import mixup_pair

log = logging.getLogger(__name__)


@dataclass
class LossWeights:
    alpha1: float = 0.5
    alpha2: float = 0.5
    alpha3: float = 1.0
    alpha4: float = 1.0
    alpha5: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "alpha3", "alpha4", "alpha5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


def sample_mask(batch: int, steps: int, prob: float, generator: torch.Generator | None = None) -> torch.Tensor:
    """Boolean ``(batch, steps)`` mask; ``True`` zeroes every channel at that step."""
    if not 0.0 < prob < 1.0:
        raise ValueError("mask probability must lie in (0, 1)")
    return torch.rand(batch, steps, generator=generator) < prob


def _targets(y, task: str, num_classes: int, like: torch.Tensor) -> torch.Tensor:
    y = torch.as_tensor(y, device=like.device)
    if task == "classification":
        if y.ndim == 1:
            return F.one_hot(y.long(), num_classes).to(like.dtype)
        return y.to(like.dtype)
    return y.to(like.dtype).reshape(-1)


def base_loss(pred: torch.Tensor, target, task: str = "regression") -> torch.Tensor:
    """MSE for regression; cross-entropy (hard or soft targets) for classification."""
    if len(pred) == 0:
        raise ValueError("loss of an empty batch is undefined")
    if task == "regression":
        pred = pred.reshape(-1)
        target = _targets(target, task, 1, pred)
        if pred.shape != target.shape:
            raise ValueError(f"prediction/target shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
        return torch.mean((pred - target) ** 2)
    target = _targets(target, task, pred.shape[1], pred)
    return torch.mean(-(target * F.log_softmax(pred, dim=1)).sum(dim=1))


def _num_classes(model) -> int:
    return model.config.num_classes if model.config.task == "classification" else 1


def source_supervised(model, x, y, g=None) -> torch.Tensor:
    if y is None or (torch.is_floating_point(torch.as_tensor(y)) and torch.isnan(torch.as_tensor(y)).any()):
        raise ValueError("source batch carries no labels")
    if g is None:
        g = model.encode(x).g
    return base_loss(model.predict(g), y, model.config.task)


def source_mixup(model, x, y, lam: float, perm: torch.Tensor, g=None) -> torch.Tensor:
    """Feature-level mixup of a batch against a permutation of itself."""
    if len(x) < 2:
        log.warning("source mixup needs at least two samples; contributing 0")
        return torch.zeros((), dtype=x.dtype)
    if g is None:
        g = model.encode(x).g
    task = model.config.task
    y = _targets(y, task, _num_classes(model), g)
    mixed = mixup_pair(g, g[perm], y, y[perm], lam)
    return base_loss(model.predict(mixed.x_or_g), mixed.y, task)


def reconstruction_losses(model, x: torch.Tensor, mask: torch.Tensor, gamma: float):
    """Masked, unmasked and combined reconstruction errors of a time-step-masked input.

    Means are taken over the selected (sample, step) positions of each side;
    an empty side contributes 0.
    """
    mask = torch.as_tensor(mask, dtype=torch.bool)
    if mask.ndim == 1:
        mask = mask.expand(len(x), -1)
    masked_x = x * (~mask).unsqueeze(1).to(x.dtype)
    recon = model.reconstruct(model.encode(masked_x).g_seq)
    err = ((recon - x) ** 2).mean(dim=1)  # (batch, steps)
    zero = err.new_zeros(())
    l_m = err[mask].mean() if mask.any() else zero
    l_um = err[~mask].mean() if (~mask).any() else zero
    return l_m, l_um, gamma * l_m + (1.0 - gamma) * l_um


def source_total(model, x, y, lam, perm, mask, weights: LossWeights):
    """``L_or + alpha1 * L_mx + alpha2 * L_R``; zero-weighted terms are not computed."""
    g = model.encode(x).g
    parts = {"L_S_or": source_supervised(model, x, y, g=g)}
    total = parts["L_S_or"]
    if weights.alpha1 > 0:
        parts["L_S_mx"] = source_mixup(model, x, y, lam, perm, g=g)
        total = total + weights.alpha1 * parts["L_S_mx"]
    if weights.alpha2 > 0:
        parts["L_m"], parts["L_um"], parts["L_R"] = reconstruction_losses(model, x, mask, weights.gamma)
        total = total + weights.alpha2 * parts["L_R"]
    parts["L_S"] = total
    return total, parts


def intermediate_loss(model, xs, ys, xt, yt_hat, lam_tilde: float):
    """Input-level plus feature-level source/target mixup against mixed (pseudo) labels.

    Returns the unweighted ``L_cd`` and its two terms. Unequal batches are
    truncated to the smaller one.
    """
    n = min(len(xs), len(xt))
    if len(xs) != len(xt):
        log.info("intermediate batches differ (%d vs %d); truncating to %d", len(xs), len(xt), n)
        xs, ys, xt, yt_hat = xs[:n], ys[:n], xt[:n], yt_hat[:n]
    if n == 0:
        z = torch.zeros((), dtype=xs.dtype)
        return z, {"L_cd_input": z, "L_cd_feature": z}
    task = model.config.task
    k = _num_classes(model)
    ys_t = _targets(ys, task, k, xs)
    yt_t = _targets(yt_hat, task, k, xs).detach()
    x_mix = mixup_pair(xs, xt, ys_t, yt_t, lam_tilde)
    term_input = base_loss(model.predict(model.encode(x_mix.x_or_g).g), x_mix.y, task)
    g_s, g_t = model.encode(xs).g, model.encode(xt).g
    g_mix = mixup_pair(g_s, g_t, ys_t, yt_t, lam_tilde)
    term_feature = base_loss(model.predict(g_mix.x_or_g), g_mix.y, task)
    return term_input + term_feature, {"L_cd_input": term_input, "L_cd_feature": term_feature}


def target_total(model, xt, yt_hat, lam: float, perm, weights: LossWeights):
    """``alpha4 * L_T_or + alpha5 * L_T_mx`` on a pseudo-labelled target batch."""
    if len(xt) == 0:
        log.info("no target sample survived pseudo-labelling; target stage contributes 0")
        z = torch.zeros((), dtype=xt.dtype)
        return z, {"L_T_or": z, "L_T": z}
    yt_hat = torch.as_tensor(yt_hat).detach()
    g = model.encode(xt).g
    parts = {"L_T_or": base_loss(model.predict(g), yt_hat, model.config.task)}
    total = weights.alpha4 * parts["L_T_or"]
    if weights.alpha5 > 0:
        parts["L_T_mx"] = source_mixup(model, xt, yt_hat, lam, perm, g=g)
        total = total + weights.alpha5 * parts["L_T_mx"]
    parts["L_T"] = total
    return total, parts
