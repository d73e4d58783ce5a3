"""Acceptance suite: one test group per criterion, tolerances pinned.

A terminal summary (see conftest.py) prints one PASS/FAIL/SKIP line per
criterion. Criteria needing the public C-MAPSS files skip unless
``MDAN_DATA_ROOT`` points at a directory with a ``CMAPSS`` subfolder; the
full-budget run additionally needs ``MDAN_LONG=1``.
"""

import csv
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from mdan import cli
from mdan.backbone import BackboneConfig, init_params
from mdan.evaluation import rmse, score
from mdan.mixup import SchedulerState, mixup_pair, scheduler_step, source_similarity
from mdan.objectives import (
    LossWeights,
    base_loss,
    intermediate_loss,
    reconstruction_losses,
    source_mixup,
    source_supervised,
    source_total,
    target_total,
)

CONFIGS = Path(cli.__file__).parent / "configs"
SYN = CONFIGS / "synthetic.yaml"
SEEDS = "0,1,2"
TEN_MINUTES = 600.0


def _cmapss_root():
    root = os.environ.get(cli.DATA_ROOT_ENV)
    if not root or not (Path(root) / "CMAPSS" / "train_FD001.txt").exists():
        return None
    return Path(root)


needs_cmapss = pytest.mark.skipif(_cmapss_root() is None,
                                  reason=f"C-MAPSS files not found under ${cli.DATA_ROOT_ENV}/CMAPSS")


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _seed_rows(summary):
    return [r for r in _rows(summary) if r["seed"] != "mean"]


# ---------------------------------------------------------------------------
# 1. data fidelity

TABLE_COUNTS = {"FD001": (17731, 100), "FD002": (48558, 259), "FD003": (21220, 100), "FD004": (56815, 248)}


@pytest.mark.criterion(1, "C-MAPSS window counts match the published table exactly")
@pytest.mark.needs_data
@needs_cmapss
def test_cmapss_window_counts(tmp_path):
    start = time.perf_counter()
    code = cli.main(["prepare", "--dataset", "cmapss", "--data-dir", str(_cmapss_root()), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    assert code == cli.EXIT_OK
    got = {r["domain"]: (int(r["train_windows"]), int(r["test_windows"])) for r in _rows(tmp_path / "summary.csv")}
    for name, expected in TABLE_COUNTS.items():
        print(f"{name}: got {got[name]}, expected {expected}")
    assert got == TABLE_COUNTS
    assert elapsed < 60.0


# ---------------------------------------------------------------------------
# 2. metric correctness against a straight-line reimplementation


def _rmse_loop(y, p):
    total = 0.0
    for a, b in zip(y, p):
        total += (b - a) * (b - a)
    return math.sqrt(total / len(y))


def _score_loop(y, p, convention):
    out = []
    for a, b in zip(y, p):
        d = b - a
        if convention == "nasa":
            out.append(math.exp(-d / 13.0) - 1.0 if d < 0 else math.exp(d / 10.0) - 1.0)
        else:
            out.append(math.exp(d / 13.0 - 1.0) if d < 0 else math.exp(d / 10.0 - 1.0))
    return out


@pytest.mark.criterion(2, "RMSE and score agree with a loop reimplementation within 1e-10")
def test_metrics_match_reference():
    rng = np.random.default_rng(20)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        y = rng.uniform(0, 125, n)
        p = y + rng.normal(0, 25, n)
        assert rmse(y, p) == pytest.approx(_rmse_loop(y, p), rel=1e-10, abs=1e-10)
        for conv in ("nasa", "paper-literal"):
            ref = _score_loop(y, p, conv)
            assert score(y, p, conv, "sum") == pytest.approx(math.fsum(ref), rel=1e-10, abs=1e-10)
            assert score(y, p, conv, "mean") == pytest.approx(math.fsum(ref) / n, rel=1e-10, abs=1e-10)


# ---------------------------------------------------------------------------
# 3. mixup and scheduler correctness


@pytest.mark.criterion(3, "mixup endpoints, ratio bounds and scheduler closed forms")
def test_mixup_endpoints_exact():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(16, 4, 5)), rng.normal(size=(16, 4, 5))
    ya, yb = rng.uniform(0, 125, 16), rng.uniform(0, 125, 16)
    one = mixup_pair(a, b, ya, yb, 1.0)
    zero = mixup_pair(a, b, ya, yb, 0.0)
    assert np.array_equal(one.x_or_g, a) and np.array_equal(one.y, ya)
    assert np.array_equal(zero.x_or_g, b) and np.array_equal(zero.y, yb)


@pytest.mark.criterion(3, "mixup endpoints, ratio bounds and scheduler closed forms")
def test_ratio_stays_in_unit_interval_fuzzed():
    rng = np.random.default_rng(33)
    state = SchedulerState(N=100_000)
    for _ in range(100_000):
        d_s, d_t = rng.exponential(1.0, 2) * rng.choice([1e-6, 1.0, 1e6])
        lam_tilde, state = scheduler_step(state, d_s, d_t, rng)
        assert 0.0 <= lam_tilde <= 1.0
        assert 0.0 <= state.lambda_prev <= 1.0


@pytest.mark.criterion(3, "mixup endpoints, ratio bounds and scheduler closed forms")
def test_scheduler_closed_forms():
    rng = np.random.default_rng(0)
    N = 50
    state = SchedulerState(lambda_prev=0.7, N=N)
    for n in range(1, N + 1):
        _, state = scheduler_step(state, 1.0, 1.0, rng, q=0.0)
        assert state.lambda_prev == pytest.approx(n / N, abs=1e-15)
    assert abs(source_similarity(1.0, 1.0, 0.05) - math.exp(-10.0)) <= 1e-12
    assert abs(source_similarity(3.5, 3.5, 0.05) - math.exp(-10.0)) <= 1e-12


# ---------------------------------------------------------------------------
# 4. finite-difference gradient check

REL_TOL = 1e-3
STEP = 1e-6


def _tiny_regressor():
    cfg = BackboneConfig(n_sensors=2, window=5, num_layers=1, hidden_units=4, predictor_widths=(3, 1),
                         dropout_rate=0.5).validate()
    return init_params(cfg, seed=4, dtype=torch.float64).eval()


def _tiny_classifier():
    cfg = BackboneConfig(n_sensors=2, window=16, encoder_kind="temporal-convolutional", task="classification",
                         num_classes=3, predictor_widths=(3,), num_layers=2, conv_channels=(3, 4), kernel_size=3,
                         conv_stride=1, dropout_rate=0.5).validate()
    return init_params(cfg, seed=4, dtype=torch.float64).eval()


def _regression_losses():
    g = torch.Generator().manual_seed(7)
    x = torch.randn(6, 2, 5, generator=g, dtype=torch.float64)
    xt = torch.randn(6, 2, 5, generator=g, dtype=torch.float64) * 2 + 0.5
    y = torch.rand(6, generator=g, dtype=torch.float64) * 2
    yt = torch.rand(6, generator=g, dtype=torch.float64) * 2
    perm = torch.tensor([3, 0, 5, 1, 4, 2])
    mask = torch.rand(6, 5, generator=g) < 0.5
    w = LossWeights()
    return {
        "base_loss": lambda m: base_loss(m(x), y),
        "source_supervised": lambda m: source_supervised(m, x, y),
        "source_mixup": lambda m: source_mixup(m, x, y, 0.37, perm),
        "L_m": lambda m: reconstruction_losses(m, x, mask, w.gamma)[0],
        "L_um": lambda m: reconstruction_losses(m, x, mask, w.gamma)[1],
        "L_R": lambda m: reconstruction_losses(m, x, mask, w.gamma)[2],
        "source_total": lambda m: source_total(m, x, y, 0.37, perm, mask, w)[0],
        "intermediate_loss": lambda m: intermediate_loss(m, x, y, xt, yt, 0.61)[0],
        "target_total": lambda m: target_total(m, xt, yt, 0.37, perm, w)[0],
    }


def _classification_losses():
    g = torch.Generator().manual_seed(8)
    x = torch.randn(5, 2, 16, generator=g, dtype=torch.float64)
    xt = torch.randn(5, 2, 16, generator=g, dtype=torch.float64)
    y = torch.tensor([0, 1, 2, 1, 0])
    yt = torch.tensor([2, 2, 0, 1, 1])
    perm = torch.tensor([1, 2, 3, 4, 0])
    w = LossWeights()
    return {
        "cross_entropy": lambda m: base_loss(m(x), y, "classification"),
        "source_mixup_soft": lambda m: source_mixup(m, x, y, 0.3, perm),
        "intermediate_loss_soft": lambda m: intermediate_loss(m, x, y, xt, yt, 0.45)[0],
        "target_total_soft": lambda m: target_total(m, xt, yt, 0.3, perm, w)[0],
    }


def _gradient_errors(model, loss_fn, n_entries=10, seed=0):
    params = list(model.parameters())
    model.zero_grad()
    loss_fn(model).backward()
    candidates = [(i, j) for i, p in enumerate(params) if p.grad is not None for j in range(p.numel())]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=min(n_entries, len(candidates)), replace=False)
    errors = []
    with torch.no_grad():
        for k in picks:
            i, j = candidates[k]
            flat = params[i].view(-1)
            analytic = params[i].grad.view(-1)[j].item()
            orig = flat[j].item()
            flat[j] = orig + STEP
            up = loss_fn(model).item()
            flat[j] = orig - STEP
            down = loss_fn(model).item()
            flat[j] = orig
            numeric = (up - down) / (2 * STEP)
            scale = max(abs(analytic), abs(numeric))
            # both sides vanish: compare absolutely, a ratio of round-off is meaningless
            errors.append(abs(analytic - numeric) / scale if scale > 1e-8 else abs(analytic - numeric))
    return errors


@pytest.mark.criterion(4, "analytic gradients match central differences (rel 1e-3)")
@pytest.mark.parametrize("name", list(_regression_losses()))
def test_gradient_check_regression(name):
    errors = _gradient_errors(_tiny_regressor(), _regression_losses()[name])
    assert len(errors) == 10
    assert max(errors) < REL_TOL, errors


@pytest.mark.criterion(4, "analytic gradients match central differences (rel 1e-3)")
@pytest.mark.parametrize("name", list(_classification_losses()))
def test_gradient_check_classification(name):
    errors = _gradient_errors(_tiny_classifier(), _classification_losses()[name])
    assert len(errors) == 10
    assert max(errors) < REL_TOL, errors


# ---------------------------------------------------------------------------
# 5 and 8. adaptation trend and alignment on the synthetic pair


@pytest.fixture(scope="module")
def synthetic_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic_acceptance")
    start = time.perf_counter()
    results = {}
    for ablation in ("full", "source_only"):
        out = root / ablation
        assert cli.main(["train", "--config", str(SYN), "--seed", SEEDS, "--ablation", ablation,
                         "--out", str(out)]) == cli.EXIT_OK
        results[ablation] = _seed_rows(out / "summary.csv")
    results["elapsed"] = time.perf_counter() - start
    return results


@pytest.mark.criterion(5, "synthetic pair: full beats source-only by >= 10% target RMSE over 3 seeds")
@pytest.mark.slow
def test_adaptation_beats_source_only(synthetic_runs):
    full = np.mean([float(r["rmse"]) for r in synthetic_runs["full"]])
    base = np.mean([float(r["rmse"]) for r in synthetic_runs["source_only"]])
    gain = (base - full) / base
    print(f"mean target RMSE full={full:.3f} source_only={base:.3f} relative gain={gain:.3f} "
          f"runtime={synthetic_runs['elapsed']:.0f}s")
    assert len(synthetic_runs["full"]) == 3
    assert gain >= 0.10
    assert synthetic_runs["elapsed"] < TEN_MINUTES


@pytest.mark.criterion(8, "feature KL decreases after adaptation in >= 2 of 3 seeds")
@pytest.mark.slow
def test_kl_decreases(synthetic_runs):
    rows = synthetic_runs["full"]
    for r in rows:
        print(f"seed {r['seed']}: KL {float(r['kl_before']):.2f} -> {float(r['kl_after']):.2f}")
    decreased = sum(float(r["kl_after"]) < float(r["kl_before"]) for r in rows)
    assert len(rows) == 3
    assert decreased >= 2


# ---------------------------------------------------------------------------
# 6 and 7. C-MAPSS runs


def _cmapss_rmse(tmp_path, config, ablation, seeds, epochs=None):
    args = ["train", "--config", str(CONFIGS / config), "--seed", seeds, "--ablation", ablation,
            "--data-dir", str(_cmapss_root()), "--out", str(tmp_path / ablation)]
    if epochs is not None:
        args += ["--epochs", str(epochs)]
    assert cli.main(args) == cli.EXIT_OK
    return np.mean([float(r["rmse"]) for r in _seed_rows(tmp_path / ablation / "summary.csv")])


@pytest.mark.criterion(6, "FD001->FD003 at 25 epochs: full < no_ssl < source_only")
@pytest.mark.slow
@pytest.mark.needs_data
@needs_cmapss
def test_cmapss_ablation_ordering(tmp_path):
    start = time.perf_counter()
    got = {a: _cmapss_rmse(tmp_path, "cmapss_FD001_FD003.yaml", a, SEEDS, epochs=25)
           for a in ("full", "no_ssl", "source_only")}
    print(f"mean target RMSE {got}, runtime {time.perf_counter() - start:.0f}s")
    assert got["full"] < got["no_ssl"] < got["source_only"]
    assert time.perf_counter() - start < 2 * 3600


@pytest.mark.criterion(7, "FD002->FD003 at the full budget reaches target RMSE <= 16.7")
@pytest.mark.slow
@pytest.mark.needs_data
@pytest.mark.skipif(_cmapss_root() is None or os.environ.get("MDAN_LONG") != "1",
                    reason=f"needs C-MAPSS files under ${cli.DATA_ROOT_ENV}/CMAPSS and MDAN_LONG=1")
def test_cmapss_full_budget(tmp_path):
    value = _cmapss_rmse(tmp_path, "cmapss_FD002_FD003.yaml", "full", "0")
    print(f"FD002->FD003 target RMSE {value:.3f}")
    assert value <= 16.7


# ---------------------------------------------------------------------------
# 9. determinism

DETERMINISTIC_OUTPUTS = ("model.ckpt", "history.csv", "epochs.csv", "scheduler.csv", "metrics.txt", "summary.csv")


@pytest.mark.criterion(9, "two identical deterministic runs give bitwise-identical checkpoint and metrics")
def test_bitwise_reproducible_training(tmp_path):
    start = time.perf_counter()
    for name in ("a", "b"):
        assert cli.main(["train", "--config", str(SYN), "--seed", "0", "--epochs", "3", "--deterministic",
                         "--out", str(tmp_path / name)]) == cli.EXIT_OK
    for f in DETERMINISTIC_OUTPUTS:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert time.perf_counter() - start < TEN_MINUTES
