"""Command-line driver: ``mdan prepare | train | sweep | report``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 training
divergence, 3 missing or unreadable files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import statistics
import subprocess
import sys
import traceback
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .backbone import tensor_bytes, write_archive
from .config import (
    ABLATIONS,
    AblationConfig,
    ConfigValidationError,
    ExperimentConfig,
    deep_merge,
    load_config_file,
    resolve_config,
)
from .data import DataError, DomainDataset, ShiftSpec, load_cmapss, load_mfd, make_synthetic_pair
from .evaluation import MetricReport, export_embeddings
from .trainer import (
    DivergenceError,
    checkpoint,
    read_csv_rows,
    report_to_dict,
    train_mdan,
    write_epoch_metrics,
    write_history,
    write_scheduler_trace,
)

log = logging.getLogger("mdan")

DATA_ROOT_ENV = "MDAN_DATA_ROOT"
EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_IO = 0, 1, 2, 3

# column headers of the ablation table, in display order
ABLATION_HEADERS = {
    "source_only": "Source Only",
    "no_target": "Source + Intermediate",
    "no_mixup": "Source + Target (w/o mixup)",
    "no_ssl": "w/o Self-supervised",
    "full": "MDAN",
}
SUMMARY_FIELDS = ("seed", "n", "rmse", "score_nasa", "score_paper", "score_nasa_sum", "score_paper_sum",
                  "accuracy", "kl_before", "kl_after")


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default, which is reserved for divergence here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# small helpers


def _csv_list(text: str | None) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def parse_seeds(text: str | None) -> list[int]:
    try:
        return [int(s) for s in _csv_list(text)]
    except ValueError as exc:
        raise UsageError(f"--seed expects a comma-separated list of integers (got {text!r})") from exc


def parse_scenario(text: str) -> list[str]:
    parts = [p.strip() for p in text.replace("->", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise UsageError(f"--scenario expects SOURCE,TARGET (got {text!r})")
    return parts


def parse_set(items) -> dict:
    """``key.sub=value`` overrides; values are parsed as YAML scalars."""
    out: dict = {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value (got {item!r})")
        key, value = item.split("=", 1)
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(value)
    return out


def data_root(explicit=None) -> Path:
    root = explicit or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise FileNotFoundError(f"no data directory: pass --data-dir or set {DATA_ROOT_ENV}")
    return Path(root)


def source_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=10)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"git:{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"artifact {__version__}"


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and np.isnan(v)):
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def _write_rows(path: Path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


# ---------------------------------------------------------------------------
# data


def load_pair(cfg: ExperimentConfig, seed: int, data_dir=None) -> tuple[DomainDataset, DomainDataset]:
    """Source and target datasets for ``cfg``; the synthetic pair needs no files."""
    d = cfg.data
    src_name, tgt_name = cfg.scenario
    if d.kind == "synthetic":
        sseed = seed if d.synthetic_seed is None else d.synthetic_seed
        return make_synthetic_pair(
            sseed, ShiftSpec(d.shift_scale, d.shift_offset, d.shift_noise), task=d.synthetic_task,
            normalization=d.normalization, n_train_units=d.n_train_units, n_test_units=d.n_test_units,
            life_range=(d.life_min, d.life_max), window=d.window, rul_cap=cfg.rul_cap,
            signal_window=d.signal_window, signal_shift=d.signal_shift,
        )
    root = data_root(data_dir)
    if d.kind == "cmapss":
        kw = dict(window=d.window, step=d.step, rul_cap=cfg.rul_cap)
        src = load_cmapss(root / "CMAPSS", src_name, **kw)
        stats = src.stats if d.normalization == "source" else None
        return src, load_cmapss(root / "CMAPSS", tgt_name, stats=stats, **kw)
    kw = dict(window=d.mfd_window, shift=d.mfd_shift)
    return load_mfd(root / "MFD", src_name, **kw), load_mfd(root / "MFD", tgt_name, **kw)


def dataset_archive(ds: DomainDataset, path: Path) -> str:
    """Write a domain's windows and labels to a deterministic archive; returns its sha256."""
    entries = {
        "train_x.npy": tensor_bytes(np.ascontiguousarray(ds.train.x)),
        "train_y.npy": tensor_bytes(np.ascontiguousarray(ds.train.y)),
        "train_unit.npy": tensor_bytes(np.ascontiguousarray(ds.train.unit)),
        "test_x.npy": tensor_bytes(np.ascontiguousarray(ds.test.x)),
        "test_y.npy": tensor_bytes(np.ascontiguousarray(ds.test.y)),
        "test_unit.npy": tensor_bytes(np.ascontiguousarray(ds.test.unit)),
        "stats_min.npy": tensor_bytes(ds.stats.per_sensor_min),
        "stats_max.npy": tensor_bytes(ds.stats.per_sensor_max),
    }
    write_archive(path, entries)
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# prepare

PREPARE_FIELDS = ("dataset", "domain", "train_windows", "test_windows", "train_units", "test_units",
                  "window", "step_or_shift", "sha256")


def cmd_prepare(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    if args.dataset == "synthetic":
        seed = args.seed_list[0] if args.seed_list else 0
        task = args.task or "regression"
        src, tgt = make_synthetic_pair(seed, ShiftSpec(args.shift_scale, args.shift_offset), task=task,
                                       normalization=args.normalization)
        domains = [src, tgt]
        window = src.window
        step = src.meta.get("step", src.meta.get("shift"))
    elif args.dataset == "cmapss":
        names = args.domains or ["FD001", "FD002", "FD003", "FD004"]
        root = data_root(args.data_dir) / "CMAPSS"
        domains = [load_cmapss(root, n, window=args.window or 30, step=1) for n in names]
        window, step = args.window or 30, 1
    else:
        names = args.domains or ["a", "b", "c", "d"]
        root = data_root(args.data_dir) / "MFD"
        window, step = args.window or 5120, args.shift or 4096
        domains = [load_mfd(root, n, window=window, shift=step) for n in names]
    for ds in domains:
        digest = dataset_archive(ds, out / f"{ds.name}.windows.zip")
        rows.append((args.dataset, ds.name, len(ds.train), len(ds.test), len(np.unique(ds.train.unit)),
                     len(np.unique(ds.test.unit)), window, step, digest))
    _write_rows(out / "summary.csv", PREPARE_FIELDS, rows)
    for r in rows:
        print(f"{r[1]}: {r[2]} training windows, {r[3]} test windows (window {r[6]}, step {r[7]})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


@dataclass
class RunManifest:
    run_id: str
    config: dict
    revision: str
    seeds: list
    outputs: dict = field(default_factory=dict)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True))
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _run_id(cfg: ExperimentConfig, seeds) -> str:
    digest = hashlib.sha256((cfg.to_yaml() + repr(list(seeds))).encode()).hexdigest()[:10]
    return f"{cfg.scenario[0]}-{cfg.scenario[1]}-{cfg.ablation.name}-{digest}"


def run_single(cfg: ExperimentConfig, out: Path, data_dir=None, export=False) -> dict:
    """Train one seed into ``out``; returns the summary row and output paths."""
    out.mkdir(parents=True, exist_ok=True)
    src, tgt = load_pair(cfg, cfg.seed, data_dir)
    state, report = train_mdan(src, tgt, cfg)
    outputs = {
        "history": write_history(state, out / "history.csv").name,
        "epochs": write_epoch_metrics(state, out / "epochs.csv").name,
        "scheduler_trace": write_scheduler_trace(state, out / "scheduler.csv").name,
        "checkpoint": checkpoint(state, out / "model.ckpt").name,
    }
    target = report["target"] or MetricReport(n=0)
    (out / "metrics.txt").write_text(target.to_text())
    outputs["metrics"] = "metrics.txt"
    info = report_to_dict(report)
    info["scenario"] = list(cfg.scenario)
    info["ablation"] = cfg.ablation.name
    info["seed"] = cfg.seed
    (out / "report.json").write_text(json.dumps(info, indent=1, sort_keys=True))
    outputs["report"] = "report.json"
    if export:
        path = export_embeddings({"source": src.train, "target": tgt.train}, state.model, out / "embeddings.csv")
        outputs["embeddings"] = path.name
    row = dict(target.summary(), seed=cfg.seed, kl_before=report["kl_before"], kl_after=report["kl_after"])
    return {"row": row, "outputs": outputs}


def aggregate_rows(rows: list[dict]) -> dict:
    """Arithmetic mean of every numeric summary field across seeds."""
    agg = {"seed": "mean"}
    for k in SUMMARY_FIELDS[1:]:
        vals = [r[k] for r in rows if r.get(k) is not None and not np.isnan(r[k])]
        agg[k] = float(np.mean(vals)) if vals else None
    return agg


def _train_overrides(args) -> dict:
    o = parse_set(args.set)
    if args.scenario:
        o["scenario"] = parse_scenario(args.scenario)
    if args.dataset:
        o.setdefault("data", {})["kind"] = args.dataset
    if args.ablation:
        o["ablation"] = asdict(AblationConfig.named(args.ablation))
    if args.deterministic is not None:
        o["deterministic"] = args.deterministic
    if args.epochs is not None:
        o["epochs"] = args.epochs
    return o


def cmd_train(args) -> int:
    file_dict = load_config_file(args.config) if args.config else {}
    base = resolve_config(file_dict, _train_overrides(args))
    seeds = args.seed_list or [base.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, outputs = [], {}
    for s in seeds:
        cfg = ExperimentConfig.from_dict(dict(base.to_dict(), seed=s))
        sub = out / f"seed_{s}" if len(seeds) > 1 else out
        res = run_single(cfg, sub, args.data_dir, export=args.export_embeddings)
        rows.append(res["row"])
        outputs[str(s)] = {k: str((sub / v).relative_to(out)) for k, v in res["outputs"].items()}
        print(f"seed {s}: " + ", ".join(f"{k}={res['row'][k]:.4g}" for k in ("rmse", "accuracy", "kl_before", "kl_after")
                                         if res["row"].get(k) is not None and not np.isnan(res["row"][k])))
    table = rows + ([aggregate_rows(rows)] if len(rows) > 1 else [])
    _write_rows(out / "summary.csv", SUMMARY_FIELDS, [[r.get(k) for k in SUMMARY_FIELDS] for r in table])
    (out / "config.yaml").write_text(base.to_yaml())
    manifest = RunManifest(_run_id(base, seeds), base.to_dict(), source_revision(), list(seeds),
                           dict(outputs, summary="summary.csv", config="config.yaml"))
    manifest.write(out / "manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


@dataclass
class SweepSpec:
    scenarios: list
    ablations: list
    seeds: list
    base: dict

    @classmethod
    def from_dict(cls, d) -> "SweepSpec":
        errors = []
        if not isinstance(d, dict):
            raise ConfigValidationError(["sweep file must be a mapping"])
        unknown = set(d) - {"scenarios", "ablations", "seeds", "base", "config"}
        if unknown:
            errors.append(f"unknown sweep keys {sorted(unknown)}")
        scenarios = [list(s) for s in d.get("scenarios") or []]
        if not scenarios:
            errors.append("sweep lists no scenarios")
        for s in scenarios:
            if len(s) != 2:
                errors.append(f"scenario {s} is not a (source, target) pair")
        ablations = list(d.get("ablations") or ["full"])
        for a in ablations:
            if a not in ABLATIONS:
                errors.append(f"unknown ablation {a!r}")
        base = dict(d.get("base") or {})
        kind = base.get("data", {}).get("kind", "cmapss")
        seeds = list(d.get("seeds") or (range(5) if kind == "mfd" else range(3)))
        if not seeds:
            errors.append("sweep lists no seeds")
        if errors:
            raise ConfigValidationError(errors)
        return cls(scenarios, ablations, [int(s) for s in seeds], base)


def load_sweep(path) -> SweepSpec:
    path = Path(path)
    raw = load_config_file(path)
    if "config" in raw:
        base = load_config_file((path.parent / raw["config"]) if not Path(raw["config"]).is_absolute()
                                else raw["config"])
        raw = dict(raw, base=deep_merge(base, raw.get("base") or {}))
    return SweepSpec.from_dict(raw)


def _tag(scenario) -> str:
    return f"{scenario[0]}->{scenario[1]}"


def cmd_sweep(args) -> int:
    grid = load_sweep(args.config)
    if args.seed_list:
        grid.seeds = args.seed_list
    extra = parse_set(args.set)
    if args.deterministic is not None:
        extra["deterministic"] = args.deterministic
    if args.epochs is not None:
        extra["epochs"] = args.epochs
    # validate every cell before training anything
    cells = []
    for scen in grid.scenarios:
        for abl in grid.ablations:
            for s in grid.seeds:
                over = dict(extra, scenario=scen, ablation=asdict(AblationConfig.named(abl)), seed=s)
                cells.append((scen, abl, s, resolve_config(grid.base, over)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results, failures = {}, []
    for scen, abl, s, cfg in cells:
        cell_dir = out / "cells" / f"{scen[0]}_{scen[1]}" / abl / f"seed_{s}"
        try:
            res = run_single(cfg, cell_dir, args.data_dir)
        except (DivergenceError, DataError, OSError, ValueError, RuntimeError) as exc:
            log.error("cell %s %s seed %d failed: %s", _tag(scen), abl, s, exc)
            failures.append((_tag(scen), abl, s, type(exc).__name__, str(exc)))
            continue
        results.setdefault((tuple(scen), abl), []).append(res["row"])
    task_kind = cells[0][3].data
    classification = task_kind.kind == "mfd" or (task_kind.kind == "synthetic" and
                                                  task_kind.synthetic_task == "classification")
    write_sweep_tables(out, grid, results, classification, cells[0][3].score_convention)
    _write_rows(out / "failures.csv", ("scenario", "ablation", "seed", "error", "message"), failures)
    manifest = RunManifest(f"sweep-{hashlib.sha256(repr(cells).encode()).hexdigest()[:10]}", grid.base,
                           source_revision(), grid.seeds,
                           {"table": "table.csv", "kl": "kl.csv", "failures": "failures.csv", "cells": "cells"})
    manifest.write(out / "manifest.json")
    print(f"{len(cells) - len(failures)} of {len(cells)} cells finished; table written to {out / 'table.csv'}")
    return EXIT_OK


def write_sweep_tables(out: Path, grid: SweepSpec, results: dict, classification: bool, convention: str):
    """Scenario-by-method tables of seed means (plus stdev for classification) and a KL table."""
    methods = grid.ablations
    heads = [ABLATION_HEADERS[a] for a in methods]
    rows = []
    if classification:
        header = ["scenario"] + [f"{h} {m}" for h in heads for m in ("Acc", "Stdv")]
        for scen in grid.scenarios:
            row = [_tag(scen)]
            for a in methods:
                accs = [100.0 * r["accuracy"] for r in results.get((tuple(scen), a), [])]
                row += [float(np.mean(accs)) if accs else None,
                        statistics.pstdev(accs) if accs else None]
            rows.append(row)
    else:
        skey = "score_nasa" if convention == "nasa" else "score_paper"
        header = ["scenario"] + [f"RMSE {h}" for h in heads] + [f"Score {h}" for h in heads]
        for scen in grid.scenarios:
            cell = {a: results.get((tuple(scen), a), []) for a in methods}
            row = [_tag(scen)]
            row += [float(np.mean([r["rmse"] for r in cell[a]])) if cell[a] else None for a in methods]
            row += [float(np.mean([r[skey + "_sum"] for r in cell[a]])) if cell[a] else None for a in methods]
            rows.append(row)
    _write_rows(out / "table.csv", header, rows)
    kl_rows = []
    kl_method = "full" if "full" in methods else methods[0]
    for scen in grid.scenarios:
        cell = results.get((tuple(scen), kl_method), [])
        kl_rows.append([_tag(scen), float(np.mean([r["kl_before"] for r in cell])) if cell else None,
                        float(np.mean([r["kl_after"] for r in cell])) if cell else None])
    _write_rows(out / "kl.csv", ("scenario", "before", "after"), kl_rows)


# ---------------------------------------------------------------------------
# report


def _find_runs(paths) -> list[Path]:
    runs = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            warnings.warn(f"{p} does not exist; skipped", RuntimeWarning, stacklevel=2)
            continue
        found = sorted({e.parent for e in p.rglob("epochs.csv")})
        if not found:
            warnings.warn(f"no training history under {p}; skipped", RuntimeWarning, stacklevel=2)
        runs.extend(found)
    return runs


def _slug(run: Path, roots) -> str:
    for r in roots:
        try:
            rel = run.resolve().relative_to(Path(r).resolve())
            parts = [Path(r).resolve().name] + list(rel.parts)
            return "_".join(p.replace("->", "-") for p in parts if p)
        except ValueError:
            continue
    return run.name


def _plot(path: Path, x, series: dict, ylabel: str, logy=False):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, ys in series.items():
        pts = [(a, b) for a, b in zip(x, ys) if b is not None]
        if pts:
            ax.plot([a for a, _ in pts], [b for _, b in pts], marker="o", ms=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = _find_runs(args.runs)
    kl_rows, lines = [], ["# Run report", ""]
    for run in runs:
        slug = _slug(run, args.runs)
        epochs = read_csv_rows(run / "epochs.csv")
        if not epochs:
            warnings.warn(f"{run} has an empty history; skipped", RuntimeWarning, stacklevel=2)
            continue
        x = [r["epoch"] for r in epochs]
        _write_rows(out / f"{slug}_loss.csv", ("epoch", "train_loss", "test_loss"),
                    [(r["epoch"], r["train_loss"], r["test_loss"]) for r in epochs])
        _plot(out / f"{slug}_loss.png", x, {"train": [r["train_loss"] for r in epochs],
                                             "test": [r["test_loss"] for r in epochs]}, "loss", logy=True)
        classification = all(r["rmse"] is None for r in epochs)
        if classification:
            _write_rows(out / f"{slug}_metric.csv", ("epoch", "accuracy"), [(r["epoch"], r["accuracy"]) for r in epochs])
            _plot(out / f"{slug}_metric.png", x, {"accuracy": [r["accuracy"] for r in epochs]}, "accuracy")
        else:
            _write_rows(out / f"{slug}_metric.csv", ("epoch", "rmse", "score_nasa", "score_paper"),
                        [(r["epoch"], r["rmse"], r["score_nasa"], r["score_paper"]) for r in epochs])
            _plot(out / f"{slug}_metric.png", x, {"RMSE": [r["rmse"] for r in epochs],
                                                   "Score": [r["score_nasa"] for r in epochs]}, "value", logy=True)
        info = json.loads((run / "report.json").read_text()) if (run / "report.json").exists() else {}
        if "kl_before" in info:
            kl_rows.append((_tag(info["scenario"]), info.get("ablation"), info.get("seed"),
                            info["kl_before"], info["kl_after"]))
        final = epochs[-1]
        lines.append(f"- {slug}: final epoch {final['epoch']}, "
                     + ("accuracy %s" % _fmt(final["accuracy"]) if classification else
                        "RMSE %s, Score %s" % (_fmt(final["rmse"]), _fmt(final["score_nasa"]))))
    kl_table = aggregate_kl(kl_rows)
    _write_rows(out / "kl_before_after.csv", ("scenario", "ablation", "runs", "before", "after"), kl_table)
    lines += ["", "| scenario | ablation | runs | KL before | KL after |", "|---|---|---|---|---|"]
    lines += [f"| {r[0]} | {r[1]} | {r[2]} | {r[3]:.4g} | {r[4]:.4g} |" for r in kl_table]
    (out / "summary.md").write_text("\n".join(lines) + "\n")
    print(f"{len(runs)} runs rendered into {out}")
    return EXIT_OK


def aggregate_kl(rows) -> list[tuple]:
    """One row per (scenario, ablation): mean KL before/after across seeds."""
    groups: dict = {}
    for scen, abl, _seed, before, after in rows:
        groups.setdefault((scen, abl), []).append((before, after))
    return [(s, a, len(v), float(np.mean([b for b, _ in v])), float(np.mean([x for _, x in v])))
            for (s, a), v in sorted(groups.items())]


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mdan", description="Mixup domain adaptation experiments for time series.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="YAML config (train) or sweep file (sweep)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", help="seed or comma-separated seeds, e.g. 1,2,3")
        sp.add_argument("--data-dir", help=f"data root; defaults to ${DATA_ROOT_ENV}")
        sp.add_argument("--deterministic", dest="deterministic", action="store_true", default=None,
                        help="deterministic kernels and single-threaded execution (default)")
        sp.add_argument("--no-deterministic", dest="deterministic", action="store_false")
        sp.add_argument("--epochs", type=int, help="override the epoch budget")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. --set weights.alpha3=0.5")

    sp = sub.add_parser("prepare", help="window a dataset and write a summary of the counts")
    sp.add_argument("--dataset", required=True, choices=("cmapss", "mfd", "synthetic"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--data-dir")
    sp.add_argument("--domains", type=_csv_list, help="subsets or conditions to prepare")
    sp.add_argument("--seed", help="synthetic seed")
    sp.add_argument("--task", choices=("regression", "classification"))
    sp.add_argument("--window", type=int)
    sp.add_argument("--shift", type=int, help="MFD window shift")
    sp.add_argument("--shift-scale", type=float, default=2.0)
    sp.add_argument("--shift-offset", type=float, default=0.5)
    sp.add_argument("--normalization", choices=("per_domain", "source"), default="source")
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train one scenario for one or more seeds")
    common(sp)
    sp.add_argument("--scenario", help="SOURCE,TARGET, e.g. FD001,FD002")
    sp.add_argument("--dataset", choices=("cmapss", "mfd", "synthetic"))
    sp.add_argument("--ablation", choices=ABLATIONS)
    sp.add_argument("--export-embeddings", action="store_true", help="write per-sample embeddings")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="run every scenario x ablation x seed cell of a sweep file")
    common(sp, config_required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="render curves and KL tables from run directories")
    sp.add_argument("runs", nargs="+", help="run or sweep directories")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.seed_list = parse_seeds(getattr(args, "seed", None))
        return args.func(args)
    except (ConfigValidationError, UsageError) as exc:
        print(f"mdan: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"mdan: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, DataError) as exc:
        print(f"mdan: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
