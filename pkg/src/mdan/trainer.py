"""The three-stage training loop (source, intermediate mixup domain, target).

Randomness is derived from ``(seed, iteration)`` rather than carried in a
stream, so a run resumed from a checkpoint continues bit-identically.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .backbone import (
    Backbone,
    bytes_tensor,
    init_params,
    model_from_entries,
    read_archive,
    save_model,
    tensor_bytes,
)
from .config import ExperimentConfig
from .data import DomainDataset
from .evaluation import MetricReport, embed, evaluate, kl_probe, predict_array
from .mixup import SchedulerState, domain_distance, sample_beta, scheduler_step, source_similarity
from .objectives import base_loss, intermediate_loss, sample_mask, source_total, target_total

log = logging.getLogger(__name__)

HISTORY_FIELDS = (
    "iteration", "epoch",
    "L_S_or", "L_S_mx", "L_m", "L_um", "L_R", "L_S",
    "L_cd", "L_T_or", "L_T_mx", "L_T",
    "lam", "lam_tilde", "lambda_n", "q", "d_s_mix", "d_t_mix", "kept_fraction",
)
EPOCH_FIELDS = ("epoch", "train_loss", "test_loss", "rmse", "score_nasa", "score_paper", "accuracy")
KL_SUBSET = 1024


class DivergenceError(RuntimeError):
    def __init__(self, component: str, value: float):
        self.component = component
        super().__init__(f"non-finite {component} ({value}); training aborted")


# ---------------------------------------------------------------------------
# deterministic plumbing


def iteration_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([seed, iteration]).generate_state(1)[0])


def iterations_per_epoch(n_source: int, n_target: int, batch_size: int) -> int:
    return math.ceil(max(n_source, n_target) / batch_size)


def batch_indices(seed: int, epoch: int, k: int, n_source: int, n_target: int, batch_size: int):
    """Indices of the ``k``-th batch of ``epoch``; the smaller domain cycles."""
    n_max = max(n_source, n_target)
    pos = np.arange(k * batch_size, min((k + 1) * batch_size, n_max))
    ps = np.random.default_rng([seed, epoch, 0]).permutation(n_source)
    pt = np.random.default_rng([seed, epoch, 1]).permutation(n_target) if n_target else None
    return ps[pos % n_source], (pt[pos % n_target] if n_target else None)


@torch.no_grad()
def pseudo_label(model: Backbone, x: torch.Tensor, task: str, threshold: float = 0.9):
    """Eval-mode labels for ``x``.

    Returns ``(labels, keep, kept_fraction)``; in classification mode only
    samples whose top softmax probability reaches ``threshold`` are kept.
    """
    was_training = model.training
    model.eval()
    out = model(x) if len(x) else x.new_zeros(0, model.config.predictor_widths[-1])
    model.train(was_training)
    if task == "regression":
        return out.reshape(-1), torch.ones(len(x), dtype=torch.bool), 1.0
    conf, labels = torch.softmax(out, dim=1).max(dim=1)
    keep = conf >= threshold
    frac = float(keep.float().mean()) if len(x) else 0.0
    return labels[keep], keep, frac


def _kl_subset(n: int) -> np.ndarray:
    return np.unique(np.linspace(0, n - 1, min(n, KL_SUBSET)).astype(int)) if n else np.zeros(0, int)


def domain_kl(model, source: DomainDataset, target: DomainDataset) -> float:
    """KL probe on a fixed, evenly spaced subset of both training splits."""
    es = embed(model, source.train.x[_kl_subset(len(source.train))])
    et = embed(model, target.train.x[_kl_subset(len(target.train))])
    return kl_probe(es, et)


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    config: ExperimentConfig
    model: Backbone
    optimizer: torch.optim.Optimizer
    scheduler: SchedulerState
    iteration: int = 0
    history: list = field(default_factory=list)
    epoch_metrics: list = field(default_factory=list)
    kl_before: float = float("nan")
    epoch_loss_sum: float = 0.0
    meta: dict = field(default_factory=dict)


def new_state(config: ExperimentConfig, source: DomainDataset, target: DomainDataset) -> TrainState:
    bcfg = config.backbone_config(source.n_sensors, source.window, source.task, max(source.num_classes, 1))
    model = init_params(bcfg, config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    per_epoch = iterations_per_epoch(len(source.train), len(target.train), config.batch_size)
    total = per_epoch * config.epochs
    sched = SchedulerState(lambda_prev=config.scheduler.lambda0, n=1, N=total,
                           T=config.scheduler.T, sigma=config.scheduler.sigma)
    return TrainState(config, model, optimizer, sched, meta={"per_epoch": per_epoch, "total": total})


def _check_finite(name: str, loss: torch.Tensor):
    v = float(loss.detach())
    if not math.isfinite(v):
        raise DivergenceError(name, v)


def _step(state: TrainState, loss: torch.Tensor, name: str):
    _check_finite(name, loss)
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    for p in state.model.parameters():
        if not torch.isfinite(p).all():
            raise DivergenceError(f"parameters after {name} step", float("nan"))


def _to_tensor(a, dtype):
    return torch.tensor(np.asarray(a), dtype=dtype)


def _mix_distances(model, xs, xt, lam_prev, n_projections, seed):
    n = min(len(xs), len(xt))
    if n == 0:
        return float("nan"), float("nan")
    xs, xt = xs[:n], xt[:n]
    with torch.no_grad():
        was = model.training
        model.eval()
        gs = model.encode(xs).g
        gt = model.encode(xt).g
        gm = model.encode(lam_prev * xs + (1.0 - lam_prev) * xt).g
        model.train(was)
    return (domain_distance(gs, gm, n_projections, seed), domain_distance(gt, gm, n_projections, seed))


def _run_iteration(state: TrainState, src, tgt, idx_s, idx_t):
    cfg = state.config
    model = state.model
    task = model.config.task
    w = cfg.effective_weights()
    ab = cfg.ablation
    it = state.iteration
    seed = iteration_seed(cfg.seed, it)
    rng = np.random.default_rng([cfg.seed, it, 1])
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    dtype = next(model.parameters()).dtype

    xs = _to_tensor(src.train.x[idx_s], dtype)
    ys = torch.as_tensor(np.asarray(src.train.y[idx_s]))
    if task == "regression":
        ys = ys.to(dtype)
    run_intermediate = not ab.source_only and not ab.no_mixup and w.alpha3 > 0
    run_target = not ab.source_only and not ab.no_target
    xt = _to_tensor(tgt.train.x[idx_t], dtype) if (run_intermediate or run_target) else None

    row = dict.fromkeys(HISTORY_FIELDS)
    row["iteration"] = it
    row["epoch"] = it // state.meta["per_epoch"]
    lam = sample_beta(cfg.beta_alpha, rng)
    row["lam"] = lam
    model.train()
    joint_terms = []

    # source domain
    perm = torch.randperm(len(xs), generator=gen)
    mask = sample_mask(len(xs), model.config.window, cfg.mask_prob, gen) if w.alpha2 > 0 else None
    loss_s, parts = source_total(model, xs, ys, lam, perm, mask, w)
    for k, v in parts.items():
        row[k] = float(v.detach())
    if cfg.joint_objective:
        _check_finite("L_S", loss_s)
        joint_terms.append(loss_s)
    else:
        _step(state, loss_s, "L_S")

    # intermediate mixup domain
    if run_intermediate:
        yt_hat, keep, frac = pseudo_label(model, xt, task, cfg.pseudo_threshold)
        row["kept_fraction"] = frac
        xt_kept = xt[keep]
        if len(xt_kept):
            d_s, d_t = _mix_distances(model, xs, xt_kept, state.scheduler.lambda_prev,
                                      cfg.scheduler.n_projections, cfg.seed)
            q = None
            if d_s + d_t == 0:
                q = source_similarity(1.0, 1.0, state.scheduler.T)
            lam_tilde, state.scheduler = scheduler_step(state.scheduler, d_s, d_t, rng, q=q)
            row.update(lam_tilde=lam_tilde, lambda_n=state.scheduler.lambda_prev, q=state.scheduler.last_q,
                       d_s_mix=d_s, d_t_mix=d_t)
            l_cd, _ = intermediate_loss(model, xs, ys, xt_kept, yt_hat, lam_tilde)
            row["L_cd"] = float(l_cd.detach())
            if cfg.joint_objective:
                _check_finite("L_cd", l_cd)
                joint_terms.append(w.alpha3 * l_cd)
            else:
                _step(state, w.alpha3 * l_cd, "L_cd")

    # target domain
    if run_target:
        yt_hat, keep, frac = pseudo_label(model, xt, task, cfg.pseudo_threshold)
        row["kept_fraction"] = frac
        xt_kept = xt[keep]
        perm_t = torch.randperm(len(xt_kept), generator=gen)
        loss_t, parts = target_total(model, xt_kept, yt_hat, lam, perm_t, w)
        for k, v in parts.items():
            row[k] = float(v.detach())
        if loss_t.requires_grad:
            if cfg.joint_objective:
                _check_finite("L_T", loss_t)
                joint_terms.append(loss_t)
            else:
                _step(state, loss_t, "L_T")

    if cfg.joint_objective:
        _step(state, sum(joint_terms), "joint objective")

    state.history.append(row)
    state.epoch_loss_sum += row["L_S_or"]
    state.iteration += 1


def _epoch_eval(state: TrainState, target: DomainDataset) -> dict:
    per_epoch = state.meta["per_epoch"]
    epoch = state.iteration // per_epoch - 1
    rec = dict.fromkeys(EPOCH_FIELDS)
    rec["epoch"] = epoch
    rec["train_loss"] = state.epoch_loss_sum / per_epoch
    state.epoch_loss_sum = 0.0
    if len(target.test):
        task = state.model.config.task
        pred = predict_array(state.model, target.test.x)
        dtype = torch.float64
        rec["test_loss"] = float(base_loss(torch.as_tensor(pred, dtype=dtype),
                                           torch.tensor(np.asarray(target.test.y)), task))
        rep = evaluate(state.model, target.test, task)
        if task == "regression":
            rec.update(rmse=rep.rmse, score_nasa=rep.score_nasa, score_paper=rep.score_paper)
        else:
            rec["accuracy"] = rep.accuracy
    return rec


def train_mdan(source: DomainDataset, target: DomainDataset, config: ExperimentConfig,
               state: TrainState | None = None, stop_after: int | None = None):
    """Run (or continue) training; returns ``(state, report)``.

    ``report`` is ``None`` when ``stop_after`` interrupts the run before the
    final iteration. Target labels are only touched by evaluation.
    """
    if source.task != target.task:
        raise ValueError("source and target tasks differ")
    if config.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)
    if state is None:
        state = new_state(config, source, target)
    if not math.isfinite(state.kl_before):
        state.kl_before = domain_kl(state.model, source, target)
    per_epoch, total = state.meta["per_epoch"], state.meta["total"]
    end = total if stop_after is None else min(total, state.iteration + stop_after)
    ns, nt = len(source.train), len(target.train)
    while state.iteration < end:
        epoch, k = divmod(state.iteration, per_epoch)
        idx_s, idx_t = batch_indices(config.seed, epoch, k, ns, nt, config.batch_size)
        _run_iteration(state, source, target, idx_s, idx_t)
        if state.iteration % per_epoch == 0:
            rec = _epoch_eval(state, target) if config.eval_every_epoch else {"epoch": epoch}
            state.epoch_metrics.append(rec)
            log.info("epoch %d: %s", epoch, {k: v for k, v in rec.items() if v is not None})
    if state.iteration < total:
        return state, None
    return state, final_report(state, source, target)


def final_report(state: TrainState, source: DomainDataset, target: DomainDataset) -> dict:
    task = state.model.config.task
    report = {
        "target": evaluate(state.model, target.test, task) if len(target.test) else None,
        "source": evaluate(state.model, source.test, task) if len(source.test) else None,
        "kl_before": state.kl_before,
        "kl_after": domain_kl(state.model, source, target),
        "iterations": state.iteration,
    }
    return report


# ---------------------------------------------------------------------------
# logs and checkpoints


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows, fields) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r.get(f)) for f in fields])
    return buf.getvalue()


def write_history(state: TrainState, path) -> Path:
    path = Path(path)
    path.write_text(rows_to_csv(state.history, HISTORY_FIELDS))
    return path


def write_epoch_metrics(state: TrainState, path) -> Path:
    path = Path(path)
    path.write_text(rows_to_csv(state.epoch_metrics, EPOCH_FIELDS))
    return path


def write_scheduler_trace(state: TrainState, path) -> Path:
    rows = [dict(n=r["iteration"] + 1, q=r["q"], lambda_n=r["lambda_n"], lambda_tilde=r["lam_tilde"],
                 d_s_mix=r["d_s_mix"], d_t_mix=r["d_t_mix"]) for r in state.history if r["q"] is not None]
    path = Path(path)
    path.write_text(rows_to_csv(rows, ("n", "q", "lambda_n", "lambda_tilde", "d_s_mix", "d_t_mix")))
    return path


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (None if v == "" else _parse(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def _parse(v: str):
    for kind in (int, float):
        try:
            return kind(v)
        except ValueError:
            pass
    return v


def checkpoint(state: TrainState, path) -> Path:
    """Write model, optimizer, scheduler and log state into one archive."""
    entries = {}
    opt = state.optimizer.state_dict()
    for pid, pstate in opt["state"].items():
        for key, val in pstate.items():
            entries[f"optim/{pid}/{key}.npy"] = tensor_bytes(val if torch.is_tensor(val) else torch.tensor(val))
    entries["optim/groups.json"] = json.dumps(opt["param_groups"], sort_keys=True).encode()
    trainer = {
        "iteration": state.iteration,
        "scheduler": state.scheduler.to_dict(),
        "kl_before": state.kl_before,
        "epoch_loss_sum": state.epoch_loss_sum,
        "meta": state.meta,
        "history": state.history,
        "epoch_metrics": state.epoch_metrics,
    }
    entries["trainer.json"] = json.dumps(trainer, sort_keys=True).encode()
    entries["experiment.json"] = json.dumps(state.config.to_dict(), sort_keys=True).encode()
    return save_model(path, state.model, extra=entries)


def resume(path) -> TrainState:
    entries = read_archive(path)
    model = model_from_entries(entries)
    config = ExperimentConfig.from_dict(json.loads(entries["experiment.json"]))
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    groups = json.loads(entries["optim/groups.json"])
    opt_state = {}
    for name, data in entries.items():
        if name.startswith("optim/") and name.endswith(".npy"):
            _, pid, key = name.split("/")
            opt_state.setdefault(int(pid), {})[key[:-4]] = bytes_tensor(data)
    for g in groups:
        if "betas" in g:
            g["betas"] = tuple(g["betas"])
    optimizer.load_state_dict({"state": opt_state, "param_groups": groups})
    trainer = json.loads(entries["trainer.json"])
    return TrainState(
        config=config,
        model=model,
        optimizer=optimizer,
        scheduler=SchedulerState(**trainer["scheduler"]),
        iteration=trainer["iteration"],
        history=trainer["history"],
        epoch_metrics=trainer["epoch_metrics"],
        kl_before=trainer["kl_before"],
        epoch_loss_sum=trainer["epoch_loss_sum"],
        meta=trainer["meta"],
    )


def report_to_dict(report: dict) -> dict:
    out = {}
    for k, v in report.items():
        out[k] = v.summary() if isinstance(v, MetricReport) else v
    return out
