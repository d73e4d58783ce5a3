"""Data preparation for C-MAPSS, MFD and synthetic domain pairs.

Windows are stored as ``(n, M, K)`` float32 arrays (samples, sensors, time
steps). Everything here is pure: loaders return frozen :class:`DomainDataset`
objects whose arrays are marked read-only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

__all__ = [
    "CMAPSS_SUBSETS",
    "MFD_CLASSES",
    "MFD_CONDITIONS",
    "SELECTED_SENSORS",
    "DataError",
    "DomainDataset",
    "NormalizationStats",
    "RunRecord",
    "ShiftSpec",
    "WindowSet",
    "WindowedSample",
    "apply_minmax",
    "build_cmapss_dataset",
    "fit_minmax",
    "load_cmapss",
    "load_mfd",
    "make_synthetic_pair",
    "make_windows",
    "piecewise_rul",
    "select_sensors",
    "window_count",
    "write_cmapss_files",
]

CMAPSS_SUBSETS = ("FD001", "FD002", "FD003", "FD004")
# 1-based sensor numbers kept for every C-MAPSS transfer case
SELECTED_SENSORS = (2, 3, 4, 7, 8, 9, 11, 12, 13, 14, 15, 17, 20, 21)
N_RAW_SENSORS = 21
N_SETTINGS = 3
N_COLUMNS = 2 + N_SETTINGS + N_RAW_SENSORS

MFD_CONDITIONS = ("a", "b", "c", "d")
MFD_CLASSES = ("healthy", "inner", "outer")


class DataError(ValueError):
    """Raised for malformed input files or invalid preparation requests."""


@dataclass(frozen=True)
class RunRecord:
    unit_id: int
    cycle: int
    op_settings: tuple[float, ...]
    sensors: tuple[float, ...]


@dataclass(frozen=True)
class WindowedSample:
    x: np.ndarray
    y: float
    is_pseudo: bool = False


@dataclass(frozen=True)
class NormalizationStats:
    per_sensor_min: np.ndarray
    per_sensor_max: np.ndarray

    def __post_init__(self):
        if np.any(self.per_sensor_max < self.per_sensor_min):
            raise DataError("per_sensor_max must be >= per_sensor_min")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class WindowSet:
    """Columnar storage for a list of windowed samples."""

    x: np.ndarray
    y: np.ndarray
    unit: np.ndarray
    is_pseudo: np.ndarray = None

    def __post_init__(self):
        n = len(self.x)
        if self.is_pseudo is None:
            object.__setattr__(self, "is_pseudo", np.zeros(n, dtype=bool))
        if not (len(self.y) == len(self.unit) == len(self.is_pseudo) == n):
            raise DataError("WindowSet columns have inconsistent lengths")
        for name in ("x", "y", "unit", "is_pseudo"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> WindowedSample:
        y = self.y[i]
        y = int(y) if np.issubdtype(self.y.dtype, np.integer) else float(y)
        return WindowedSample(self.x[i], y, bool(self.is_pseudo[i]))

    def __iter__(self) -> Iterator[WindowedSample]:
        return (self[i] for i in range(len(self)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.x.shape


@dataclass(frozen=True)
class DomainDataset:
    name: str
    task: str
    train: WindowSet
    test: WindowSet
    stats: NormalizationStats
    num_classes: int = 0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise DataError(f"unknown task {self.task!r}")
        if len(self.train) and len(self.test) and self.train.x.shape[1:] != self.test.x.shape[1:]:
            raise DataError("train and test windows differ in shape")

    @property
    def n_sensors(self) -> int:
        return self.train.x.shape[1]

    @property
    def window(self) -> int:
        return self.train.x.shape[2]


# ---------------------------------------------------------------------------
# elementary transforms


def select_sensors(records):
    """Keep the 14 informative C-MAPSS channels, in listed order.

    Accepts a sequence of :class:`RunRecord` or an array whose last axis holds
    the 21 raw sensors.
    """
    idx = np.asarray(SELECTED_SENSORS) - 1
    if isinstance(records, np.ndarray):
        if records.shape[-1] != N_RAW_SENSORS:
            raise DataError(f"expected {N_RAW_SENSORS} sensor channels, got {records.shape[-1]}")
        return records[..., idx]
    out = []
    for r in records:
        if len(r.sensors) != N_RAW_SENSORS:
            raise DataError(f"expected {N_RAW_SENSORS} sensor channels, got {len(r.sensors)}")
        out.append(RunRecord(r.unit_id, r.cycle, r.op_settings, tuple(r.sensors[i] for i in idx)))
    return out


def fit_minmax(train_windows: np.ndarray) -> NormalizationStats:
    """Per-sensor range of ``(n, M, K)`` windows."""
    w = np.asarray(train_windows)
    if w.size == 0:
        raise DataError("cannot fit normalization on an empty training set")
    if w.ndim != 3:
        raise DataError(f"expected (n, M, K) windows, got shape {w.shape}")
    return NormalizationStats(w.min(axis=(0, 2)).astype(np.float64), w.max(axis=(0, 2)).astype(np.float64))


def apply_minmax(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """Map ``(..., M, K)`` windows into the fitted range; constant channels go to 0."""
    lo = stats.per_sensor_min[:, None]
    span = (stats.per_sensor_max - stats.per_sensor_min)[:, None]
    safe = np.where(span > 0, span, 1.0)
    out = (np.asarray(x, dtype=np.float64) - lo) / safe
    return np.where(span > 0, out, 0.0)


def window_count(length: int, window: int, step: int) -> int:
    if length < window:
        return 0
    return (length - window) // step + 1


def _window_array(series: np.ndarray, window: int, step: int) -> np.ndarray:
    """``(L, M)`` series -> ``(n, M, K)`` windows (a strided view)."""
    if window < 1 or step < 1:
        raise DataError("window and step must be >= 1")
    if len(series) < window:
        return np.empty((0, series.shape[1], window), dtype=series.dtype)
    return sliding_window_view(series, window, axis=0)[::step]


def make_windows(unit_series: np.ndarray, window: int, step: int, labels=None) -> list[WindowedSample]:
    """Contiguous slices ``[t, t + window)`` advanced by ``step``.

    ``labels`` is an optional per-time-step array; each window takes the label
    of its last step. Without labels every ``y`` is NaN.
    """
    series = np.asarray(unit_series)
    if series.ndim == 1:
        series = series[:, None]
    wins = _window_array(series, window, step)
    ends = np.arange(len(wins)) * step + window - 1
    ys = np.full(len(wins), np.nan) if labels is None else np.asarray(labels)[ends]
    return [WindowedSample(np.array(w), float(y)) for w, y in zip(wins, ys)]


def piecewise_rul(true_rul, cap: float = 125.0):
    if cap <= 0:
        raise DataError("cap must be positive")
    out = np.minimum(true_rul, cap)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# C-MAPSS


def _read_table(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"missing C-MAPSS file: {path}")
    with open(path) as fh:
        first = fh.readline().split()
    try:
        [float(tok) for tok in first]
        skip = 0
    except ValueError:
        skip = 1
    table = np.loadtxt(path, skiprows=skip, ndmin=2)
    if table.size and table.shape[1] != N_COLUMNS:
        raise DataError(f"{path}: expected {N_COLUMNS} columns, got {table.shape[1]}")
    return table


def _split_units(table: np.ndarray, path) -> list[tuple[int, np.ndarray]]:
    """Group rows by unit (sorted by unit then cycle) and validate cycle numbering."""
    order = np.lexsort((table[:, 1], table[:, 0]))
    table = table[order]
    units = []
    ids, starts = np.unique(table[:, 0], return_index=True)
    bounds = list(starts[1:]) + [len(table)]
    for uid, a, b in zip(ids, starts, bounds):
        rows = table[a:b]
        if not np.array_equal(rows[:, 1], np.arange(1, len(rows) + 1)):
            raise DataError(f"{path}: unit {int(uid)} cycles are not consecutive from 1")
        units.append((int(uid), rows))
    return units


def build_cmapss_dataset(
    name: str,
    train_table: np.ndarray,
    test_table: np.ndarray,
    test_rul: np.ndarray,
    *,
    window: int = 30,
    step: int = 1,
    rul_cap: float = 125.0,
    stats: NormalizationStats | None = None,
    source: str = "",
) -> DomainDataset:
    """Sensor selection, windowing, labeling and min-max scaling of raw 26-column tables.

    ``stats`` overrides the per-domain fit (used when a target is scaled with
    source statistics).
    """
    xs, ys, us = [], [], []
    skipped = 0
    for uid, rows in _split_units(train_table, source or name):
        sensors = select_sensors(rows[:, 2 + N_SETTINGS:])
        wins = _window_array(sensors, window, step)
        if len(wins) == 0:
            skipped += 1
            continue
        end_cycle = np.arange(len(wins)) * step + window
        xs.append(wins)
        ys.append(piecewise_rul(len(rows) - end_cycle, rul_cap))
        us.append(np.full(len(wins), uid))
    if skipped:
        log.warning("%s: skipped %d training units shorter than %d cycles", name, skipped, window)
    if not xs:
        raise DataError(f"{name}: no training unit reaches the window length {window}")
    train_x = np.concatenate(xs)

    test_units = _split_units(test_table, source or name)
    test_rul = np.asarray(test_rul, dtype=np.float64).ravel()
    if len(test_rul) != len(test_units):
        raise DataError(f"{name}: RUL file has {len(test_rul)} entries for {len(test_units)} test units")
    tx, ty, tu = [], [], []
    skipped = 0
    for (uid, rows), rul in zip(test_units, test_rul):
        if len(rows) < window:
            skipped += 1
            continue
        tx.append(select_sensors(rows[-window:, 2 + N_SETTINGS:]).T)
        ty.append(piecewise_rul(rul, rul_cap))
        tu.append(uid)
    if skipped:
        log.warning("%s: skipped %d test units shorter than %d cycles", name, skipped, window)
    m = len(SELECTED_SENSORS)
    test_x = np.stack(tx) if tx else np.empty((0, m, window))

    if stats is None:
        stats = fit_minmax(train_x)
    train = WindowSet(
        apply_minmax(train_x, stats).astype(np.float32),
        np.concatenate(ys).astype(np.float32),
        np.concatenate(us).astype(np.int64),
    )
    test = WindowSet(
        apply_minmax(test_x, stats).astype(np.float32),
        np.asarray(ty, dtype=np.float32),
        np.asarray(tu, dtype=np.int64),
    )
    return DomainDataset(
        name, "regression", train, test, stats,
        meta={"window": window, "step": step, "rul_cap": rul_cap, "skipped_test_units": skipped},
    )


def load_cmapss(
    data_dir,
    subset: str,
    *,
    window: int = 30,
    step: int = 1,
    rul_cap: float = 125.0,
    stats: NormalizationStats | None = None,
) -> DomainDataset:
    """Load ``train_<subset>.txt``, ``test_<subset>.txt`` and ``RUL_<subset>.txt``.

    ``subset`` is normally one of FD001..FD004; any tag with matching files is
    accepted so the synthetic fixtures load through the same path.
    """
    d = Path(data_dir)
    train = _read_table(d / f"train_{subset}.txt")
    test = _read_table(d / f"test_{subset}.txt")
    rul_path = d / f"RUL_{subset}.txt"
    if not rul_path.exists():
        raise FileNotFoundError(f"missing C-MAPSS file: {rul_path}")
    rul = np.loadtxt(rul_path, ndmin=1)
    return build_cmapss_dataset(
        subset, train, test, rul, window=window, step=step, rul_cap=rul_cap, stats=stats, source=str(d)
    )


def write_cmapss_files(out_dir, name: str, train_table, test_table, test_rul, header: bool = True) -> list[Path]:
    """Write tables in the 26-column C-MAPSS layout (optionally with a header line)."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    cols = ["unit", "cycle"] + [f"setting{i}" for i in range(1, 4)] + [f"s{i}" for i in range(1, 22)]
    paths = []
    for kind, table in (("train", train_table), ("test", test_table)):
        p = d / f"{kind}_{name}.txt"
        table = np.asarray(table, dtype=np.float64)
        fmt = ["%d", "%d"] + ["%.17g"] * (N_COLUMNS - 2)
        np.savetxt(p, table, fmt=fmt, header=" ".join(cols) if header else "", comments="")
        paths.append(p)
    p = d / f"RUL_{name}.txt"
    np.savetxt(p, np.asarray(test_rul), fmt="%d")
    paths.append(p)
    return paths


# ---------------------------------------------------------------------------
# MFD


def _class_of(path: Path) -> int:
    tag = path.stem.split("_")[0].lower()
    if tag.isdigit() and int(tag) < len(MFD_CLASSES):
        return int(tag)
    for i, name in enumerate(MFD_CLASSES):
        if tag.startswith(name):
            return i
    raise DataError(f"{path}: cannot infer class from file name")


def _read_signal(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64).ravel()
    return np.loadtxt(path, ndmin=1).astype(np.float64).ravel()


def load_mfd(
    data_dir,
    condition: str,
    *,
    window: int = 5120,
    shift: int = 4096,
    test_fraction: float = 0.2,
) -> DomainDataset:
    """Load one MFD operating condition.

    Assumed layout: ``<data_dir>/<condition>/<class>_<anything>.{npy,txt,csv}``,
    one 1-D vibration signal per file, where ``<class>`` is ``healthy``,
    ``inner``, ``outer`` or the integer 0/1/2. The last ``test_fraction`` of
    each file's windows form the test split.
    """
    if condition not in MFD_CONDITIONS:
        raise DataError(f"unknown MFD condition {condition!r}; expected one of {MFD_CONDITIONS}")
    d = Path(data_dir) / condition
    if not d.is_dir():
        raise FileNotFoundError(f"missing MFD condition directory: {d}")
    files = sorted(p for p in d.iterdir() if p.suffix in (".npy", ".txt", ".csv"))
    if not files:
        raise FileNotFoundError(f"no signal files in {d}")
    signals = [(_class_of(p), _read_signal(p)) for p in files]
    return build_signal_dataset(f"MFD-{condition}", signals, window=window, shift=shift, test_fraction=test_fraction)


def build_signal_dataset(
    name: str,
    signals: Sequence[tuple[int, np.ndarray]],
    *,
    window: int,
    shift: int,
    test_fraction: float = 0.2,
    stats: NormalizationStats | None = None,
) -> DomainDataset:
    """Window labelled 1-D signals into a single-channel classification dataset."""
    parts = {"train": ([], [], []), "test": ([], [], [])}
    for file_id, (label, sig) in enumerate(signals):
        wins = _window_array(np.asarray(sig, dtype=np.float64)[:, None], window, shift)
        n_test = int(math.ceil(test_fraction * len(wins))) if len(wins) > 1 else 0
        cut = len(wins) - n_test
        for split, sl in (("train", slice(0, cut)), ("test", slice(cut, None))):
            w = wins[sl]
            parts[split][0].append(w)
            parts[split][1].append(np.full(len(w), label))
            parts[split][2].append(np.full(len(w), file_id))
    arrays = {}
    for split, (xs, ys, us) in parts.items():
        arrays[split] = (
            np.concatenate(xs) if xs else np.empty((0, 1, window)),
            np.concatenate(ys).astype(np.int64) if ys else np.empty(0, np.int64),
            np.concatenate(us).astype(np.int64) if us else np.empty(0, np.int64),
        )
    if stats is None:
        stats = fit_minmax(arrays["train"][0])
    sets = {
        k: WindowSet(apply_minmax(x, stats).astype(np.float32), y, u) for k, (x, y, u) in arrays.items()
    }
    return DomainDataset(
        name, "classification", sets["train"], sets["test"], stats,
        num_classes=len(MFD_CLASSES), meta={"window": window, "shift": shift},
    )


# ---------------------------------------------------------------------------
# synthetic pairs


@dataclass(frozen=True)
class ShiftSpec:
    """Covariate shift applied to raw target channels: ``scale * v + offset + noise``."""

    scale: float = 1.0
    offset: float = 0.0
    noise_std: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.scale == 1.0 and self.offset == 0.0 and self.noise_std == 0.0

    def apply(self, values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = self.scale * values + self.offset
        if self.noise_std > 0:
            out = out + rng.normal(0.0, self.noise_std, size=values.shape)
        return out


def _synthetic_units(rng, n_units, life_range, sensor_base, sensor_gain, noise, min_keep=0):
    """Run-to-failure tables with an exponential health index driving each sensor."""
    rows, rul = [], []
    for uid in range(1, n_units + 1):
        life = int(rng.integers(life_range[0], life_range[1] + 1))
        t = np.arange(1, life + 1)
        wear0 = rng.uniform(0.0, 0.15)
        rate = rng.uniform(3.0, 5.0)
        health = wear0 + (1 - wear0) * (np.expm1(rate * t / life) / np.expm1(rate))
        sensors = sensor_base + health[:, None] * sensor_gain + rng.normal(0.0, noise, (life, N_RAW_SENSORS))
        settings = rng.normal(0.0, 0.002, (life, N_SETTINGS))
        if min_keep:
            keep = int(rng.integers(max(min_keep, life // 4), life))
            rul.append(life - keep)
            sensors, settings, t = sensors[:keep], settings[:keep], t[:keep]
        rows.append(np.column_stack([np.full(len(t), uid), t, settings, sensors]))
    return np.concatenate(rows), np.asarray(rul, dtype=np.int64)


def _synthetic_tables(rng, shift: ShiftSpec, *, n_train_units, n_test_units, life_range, window, noise):
    # the sensor geometry is shared by both domains; only the unit draws differ
    geo = np.random.default_rng(20240917)
    base = geo.uniform(-1.0, 1.0, N_RAW_SENSORS)
    gain = geo.uniform(0.4, 1.2, N_RAW_SENSORS) * geo.choice([-1.0, 1.0], N_RAW_SENSORS)
    informative = np.zeros(N_RAW_SENSORS, dtype=bool)
    informative[np.asarray(SELECTED_SENSORS) - 1] = True
    gain = np.where(informative, gain, 0.0)
    life = (max(life_range[0], window + 1), life_range[1])
    train, _ = _synthetic_units(rng, n_train_units, life, base, gain, noise)
    test, rul = _synthetic_units(rng, n_test_units, (life[0] + window, life[1] + window), base, gain, noise,
                                 min_keep=window)
    for table in (train, test):
        table[:, 5:] = shift.apply(table[:, 5:], rng)
    return train, test, rul


def _synthetic_signals(rng, shift: ShiftSpec, *, n_signals_per_class, signal_length, noise):
    """Vibration-like signals: shaft tone plus class-specific fault harmonics."""
    t = np.arange(signal_length) / 1024.0
    fault_freqs = {0: (), 1: (97.0, 194.0), 2: (61.0, 122.0)}
    out = []
    for label in range(len(MFD_CLASSES)):
        for _ in range(n_signals_per_class):
            phase = rng.uniform(0, 2 * np.pi)
            sig = np.sin(2 * np.pi * 25.0 * t + phase)
            for f in fault_freqs[label]:
                sig += 0.6 * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
            sig += rng.normal(0.0, noise, signal_length)
            out.append((label, shift.apply(sig, rng)))
    return out


def make_synthetic_pair(
    seed: int,
    shift_spec: ShiftSpec = ShiftSpec(),
    *,
    task: str = "regression",
    normalization: str = "per_domain",
    n_train_units: int = 40,
    n_test_units: int = 20,
    life_range: tuple[int, int] = (60, 140),
    window: int = 30,
    rul_cap: float = 125.0,
    noise: float = 0.05,
    n_signals_per_class: int = 4,
    signal_length: int = 4096,
    signal_window: int = 256,
    signal_shift: int = 128,
    return_raw: bool = False,
):
    """Deterministic source/target pair whose target channels carry ``shift_spec``.

    ``normalization`` is ``"per_domain"`` (each domain scaled by its own
    training range) or ``"source"`` (the target reuses the source range, so an
    affine channel shift survives scaling).
    """
    if normalization not in ("per_domain", "source"):
        raise DataError(f"unknown normalization policy {normalization!r}")
    src_rng = np.random.default_rng([seed, 0])
    tgt_rng = np.random.default_rng([seed, 1])
    if task == "regression":
        kw = dict(n_train_units=n_train_units, n_test_units=n_test_units, life_range=life_range,
                  window=window, noise=noise)
        s_raw = _synthetic_tables(src_rng, ShiftSpec(), **kw)
        t_raw = _synthetic_tables(tgt_rng, shift_spec, **kw)
        source = build_cmapss_dataset("SYN-S", *s_raw, window=window, rul_cap=rul_cap)
        stats = source.stats if normalization == "source" else None
        target = build_cmapss_dataset("SYN-T", *t_raw, window=window, rul_cap=rul_cap, stats=stats)
    elif task == "classification":
        kw = dict(n_signals_per_class=n_signals_per_class, signal_length=signal_length, noise=noise)
        s_raw = _synthetic_signals(src_rng, ShiftSpec(), **kw)
        t_raw = _synthetic_signals(tgt_rng, shift_spec, **kw)
        wkw = dict(window=signal_window, shift=signal_shift)
        source = build_signal_dataset("SYN-S", s_raw, **wkw)
        stats = source.stats if normalization == "source" else None
        target = build_signal_dataset("SYN-T", t_raw, stats=stats, **wkw)
    else:
        raise DataError(f"unknown task {task!r}")
    if return_raw:
        return source, target, s_raw, t_raw
    return source, target
