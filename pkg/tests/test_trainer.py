from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from torch import nn

from mdan.backbone import init_params
from mdan.config import AblationConfig, ExperimentConfig
from mdan.data import ShiftSpec, make_synthetic_pair
from mdan.trainer import (
    HISTORY_FIELDS,
    DivergenceError,
    batch_indices,
    checkpoint,
    iteration_seed,
    new_state,
    pseudo_label,
    read_csv_rows,
    resume,
    train_mdan,
    write_epoch_metrics,
    write_history,
    write_scheduler_trace,
)


@pytest.fixture(scope="module")
def pair():
    return make_synthetic_pair(3, ShiftSpec(2.0, 0.5), normalization="source", n_train_units=3, n_test_units=3,
                               life_range=(35, 50))


def _config(**kw):
    d = dict(scenario=["SYN-S", "SYN-T"], epochs=2, batch_size=64, learning_rate=1e-3, seed=5,
             data={"kind": "synthetic"}, backbone=dict(num_layers=1, hidden_units=4))
    d.update(kw)
    return ExperimentConfig.from_dict(d)


def _params(model):
    return {k: v.clone() for k, v in model.state_dict().items()}


def _same_params(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


def test_history_and_epoch_lengths(pair):
    src, tgt = pair
    state, report = train_mdan(src, tgt, _config())
    per_epoch = state.meta["per_epoch"]
    assert per_epoch == int(np.ceil(max(len(src.train), len(tgt.train)) / 64))
    assert len(state.history) == 2 * per_epoch == report["iterations"]
    assert len(state.epoch_metrics) == 2
    assert report["target"].n == len(tgt.test)
    assert report["kl_before"] >= 0 and report["kl_after"] >= 0
    row = state.history[-1]
    for k in ("L_S_or", "L_S_mx", "L_R", "L_cd", "L_T_or", "L_T_mx", "lam", "lam_tilde", "q"):
        assert np.isfinite(row[k]), k
    assert 0 <= row["lam_tilde"] <= 1


@pytest.mark.parametrize("name, absent, present", [
    ("source_only", ("L_cd", "L_T", "lam_tilde"), ("L_S_mx", "L_R")),
    ("no_target", ("L_T", "L_T_or"), ("L_cd", "L_S_mx")),
    ("no_mixup", ("L_S_mx", "L_cd", "L_T_mx", "lam_tilde"), ("L_T_or", "L_R")),
    ("no_ssl", ("L_R", "L_m", "L_um"), ("L_cd", "L_T_mx")),
])
def test_ablations_drop_stages(pair, name, absent, present):
    src, tgt = pair
    state, _ = train_mdan(src, tgt, _config(epochs=1, ablation=AblationConfig.named(name).__dict__))
    for row in state.history:
        assert all(row[k] is None for k in absent)
        assert all(row[k] is not None for k in present)


def test_same_seed_same_run(pair):
    src, tgt = pair
    a, ra = train_mdan(src, tgt, _config())
    b, rb = train_mdan(src, tgt, _config())
    assert _same_params(a.model.state_dict(), b.model.state_dict())
    assert a.history == b.history
    assert ra["target"].rmse == rb["target"].rmse


def test_resume_mid_epoch_matches_uninterrupted(pair, tmp_path):
    src, tgt = pair
    full, _ = train_mdan(src, tgt, _config(batch_size=16))
    assert full.meta["per_epoch"] >= 3
    cut = full.meta["per_epoch"] + 1
    part, report = train_mdan(src, tgt, _config(batch_size=16), stop_after=cut)
    assert report is None and part.iteration == cut
    path = checkpoint(part, tmp_path / "mid.ckpt")
    resumed, _ = train_mdan(src, tgt, resume(path).config, state=resume(path))
    assert _same_params(resumed.model.state_dict(), full.model.state_dict())
    assert resumed.history == full.history
    assert resumed.epoch_metrics == full.epoch_metrics


def test_checkpoints_bitwise_identical(pair, tmp_path):
    src, tgt = pair
    a, _ = train_mdan(src, tgt, _config(epochs=1))
    b, _ = train_mdan(src, tgt, _config(epochs=1))
    assert checkpoint(a, tmp_path / "a.ckpt").read_bytes() == checkpoint(b, tmp_path / "b.ckpt").read_bytes()


def test_all_off_equals_plain_supervised_loop(pair):
    src, tgt = pair
    ablation = dict(source_only=True, no_mixup=True, no_ssl=True)
    cfg = _config(ablation=ablation)
    state, _ = train_mdan(src, tgt, cfg)

    model = init_params(cfg.backbone_config(src.n_sensors, src.window, "regression"), cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    per_epoch = state.meta["per_epoch"]
    for it in range(per_epoch * cfg.epochs):
        epoch, k = divmod(it, per_epoch)
        idx_s, _ = batch_indices(cfg.seed, epoch, k, len(src.train), len(tgt.train), cfg.batch_size)
        torch.manual_seed(iteration_seed(cfg.seed, it))
        model.train()
        x = torch.tensor(src.train.x[idx_s], dtype=torch.float32)
        y = torch.tensor(src.train.y[idx_s], dtype=torch.float32)
        loss = torch.mean((model(x).reshape(-1) - y) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert _same_params(model.state_dict(), state.model.state_dict())


def test_joint_objective_runs(pair):
    src, tgt = pair
    state, report = train_mdan(src, tgt, _config(epochs=1, joint_objective=True))
    assert np.isfinite(report["target"].rmse)
    sep, _ = train_mdan(src, tgt, _config(epochs=1))
    assert not _same_params(state.model.state_dict(), sep.model.state_dict())


def test_divergence_raises(pair):
    src, tgt = pair
    cfg = _config(epochs=1)
    state = new_state(cfg, src, tgt)
    with torch.no_grad():
        next(state.model.parameters()).fill_(float("nan"))
    with pytest.raises(DivergenceError):
        train_mdan(src, tgt, cfg, state=state)


class FixedLogits(nn.Module):
    def __init__(self, probs):
        super().__init__()
        self.logits = torch.log(torch.tensor(probs))
        self.config = SimpleNamespace(predictor_widths=(3,), task="classification")

    def forward(self, x):
        return self.logits[: len(x)]


def test_pseudo_label_threshold():
    model = FixedLogits([[0.95, 0.025, 0.025], [0.25, 0.5, 0.25]])
    labels, keep, frac = pseudo_label(model, torch.zeros(2, 1, 4), "classification", 0.9)
    assert keep.tolist() == [True, False]
    assert labels.tolist() == [0]
    assert frac == 0.5
    labels, keep, frac = pseudo_label(model, torch.zeros(2, 1, 4), "classification", 0.4)
    assert labels.tolist() == [0, 1] and frac == 1.0


def test_pseudo_label_regression_keeps_all(pair):
    src, _ = pair
    model = init_params(_config().backbone_config(14, 30, "regression"), 0).train()
    y, keep, frac = pseudo_label(model, torch.rand(5, 14, 30), "regression")
    assert keep.all() and frac == 1.0 and y.shape == (5,)
    assert model.training


def test_classification_pair_trains():
    src, tgt = make_synthetic_pair(1, ShiftSpec(1.5, 0.1), task="classification", n_signals_per_class=1,
                                   signal_length=1024)
    cfg = _config(epochs=1, batch_size=16, data={"kind": "synthetic", "synthetic_task": "classification"},
                  backbone=dict(num_layers=2, conv_channels=[4, 4], kernel_size=4))
    state, report = train_mdan(src, tgt, cfg)
    assert 0 <= report["target"].accuracy <= 1
    fracs = [r["kept_fraction"] for r in state.history if r["kept_fraction"] is not None]
    assert fracs and all(0 <= f <= 1 for f in fracs)


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 64), st.integers(0, 5))
def test_batch_indices_cover_larger_domain(ns, nt, bs, seed):
    per_epoch = int(np.ceil(max(ns, nt) / bs))
    s_all, t_all = [], []
    for k in range(per_epoch):
        s, t = batch_indices(seed, 0, k, ns, nt, bs)
        assert len(s) == len(t) <= bs
        s_all.extend(s)
        t_all.extend(t)
    bigger = s_all if ns >= nt else t_all
    assert sorted(bigger) == list(range(max(ns, nt)))
    assert max(s_all) < ns and max(t_all) < nt


def test_log_files(pair, tmp_path):
    src, tgt = pair
    state, _ = train_mdan(src, tgt, _config(epochs=1))
    hist = read_csv_rows(write_history(state, tmp_path / "h.csv"))
    assert len(hist) == len(state.history)
    assert list(hist[0]) == list(HISTORY_FIELDS)
    assert hist[-1]["L_S_or"] == state.history[-1]["L_S_or"]
    ep = read_csv_rows(write_epoch_metrics(state, tmp_path / "e.csv"))
    assert ep[0]["rmse"] == state.epoch_metrics[0]["rmse"]
    trace = read_csv_rows(write_scheduler_trace(state, tmp_path / "s.csv"))
    assert [r["n"] for r in trace] == list(range(1, len(state.history) + 1))
