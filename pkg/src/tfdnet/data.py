"""Dataset loading, chronological splits, windowing and channel-correlation analysis."""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .preprocess import moving_average
from .tensor import Tensor, no_grad

__all__ = [
    "DatasetCatalogEntry", "CATALOG", "LoadedSeries", "load_csv", "chronological_split",
    "Standardizer", "PreparedData", "prepare", "WindowPair", "WindowDataset", "window_sampler",
    "CorrelationReport", "channel_correlation", "write_correlation_report",
]


@dataclass(frozen=True)
class DatasetCatalogEntry:
    name: str
    expected_length: int
    expected_channels: int
    split_ratio: tuple[float, float, float]


_ETT = (0.6, 0.2, 0.2)
_OTHER = (0.7, 0.1, 0.2)

CATALOG = {e.name: e for e in [
    DatasetCatalogEntry("ETTm1", 69680, 7, _ETT),
    DatasetCatalogEntry("ETTm2", 69680, 7, _ETT),
    DatasetCatalogEntry("ETTh1", 17420, 7, _ETT),
    DatasetCatalogEntry("ETTh2", 17420, 7, _ETT),
    DatasetCatalogEntry("electricity", 26304, 321, _OTHER),
    DatasetCatalogEntry("weather", 52696, 21, _OTHER),
    DatasetCatalogEntry("traffic", 17544, 862, _OTHER),
    DatasetCatalogEntry("illness", 966, 7, _OTHER),
]}


@dataclass
class LoadedSeries:
    values: np.ndarray        # (T_total, D)
    timestamps: list[str]
    columns: list[str]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def load_csv(path, entry: DatasetCatalogEntry | None = None) -> LoadedSeries:
    """Read a header + ``date,ch1,ch2,...`` CSV.

    Non-numeric cells raise ValueError naming the file line and column.
    Length/channel mismatches against a catalog entry only warn.
    """
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: file is empty")
        if len(header) < 2:
            raise ValueError(f"{path}: expected a timestamp column and at least one channel")
        columns = header[1:]
        stamps, rows = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}")
            vals = []
            for col, cell in zip(columns, row[1:]):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ValueError(f"{path}: line {line_no}, column {col!r}: "
                                     f"cannot parse {cell!r} as a number") from None
            stamps.append(row[0])
            rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    values = np.array(rows, dtype=np.float64)
    if entry is not None:
        if values.shape[0] != entry.expected_length:
            warnings.warn(f"{entry.name}: expected {entry.expected_length} rows, found {values.shape[0]}")
        if values.shape[1] != entry.expected_channels:
            warnings.warn(f"{entry.name}: expected {entry.expected_channels} channels, "
                          f"found {values.shape[1]}")
    return LoadedSeries(values, stamps, columns)


def chronological_split(n: int, ratios) -> list[tuple[int, int]]:
    """Contiguous [start, stop) ranges for train/val/test in time order."""
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError(f"split ratios must be three non-negative numbers, got {ratios}")
    total = sum(ratios)
    train_end = int(round(n * ratios[0] / total))
    val_end = int(round(n * (ratios[0] + ratios[1]) / total))
    ranges = [(0, train_end), (train_end, val_end), (val_end, n)]
    for name, (a, b) in zip(("train", "val", "test"), ranges):
        if b <= a:
            raise ValueError(f"{name} split is empty for length {n} and ratios {ratios}")
    return ranges


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray):
        std = values.std(axis=0)
        return cls(values.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, values):
        return (values - self.mean) / self.std

    def inverse(self, values):
        return values * self.std + self.mean


@dataclass
class WindowPair:
    input: np.ndarray   # (D, L)
    target: np.ndarray  # (D, T)
    origin: int         # index of the first input step in the source series


@dataclass
class WindowDataset:
    inputs: np.ndarray   # (n, D, L)
    targets: np.ndarray  # (n, D, T)
    origins: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def __getitem__(self, i) -> WindowPair:
        return WindowPair(self.inputs[i], self.targets[i], int(self.origins[i]))

    @classmethod
    def from_range(cls, series: np.ndarray, rng: tuple[int, int], seq_len: int, pred_len: int,
                   stride: int = 1) -> "WindowDataset":
        start, stop = rng
        n = _n_windows(stop - start, seq_len, pred_len, stride)
        seg = series[start:stop].T                             # (D, len)
        views = np.lib.stride_tricks.sliding_window_view(seg, seq_len + pred_len, axis=1)
        views = views[:, ::stride][:, :n]                      # (D, n, L+T)
        views = np.ascontiguousarray(views.transpose(1, 0, 2))
        origins = start + stride * np.arange(n)
        return cls(views[..., :seq_len].copy(), views[..., seq_len:].copy(), origins)


def _n_windows(length, seq_len, pred_len, stride):
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if length < seq_len + pred_len:
        raise ValueError(f"range of length {length} is shorter than L+T = {seq_len + pred_len}")
    return (length - seq_len - pred_len) // stride + 1


def window_sampler(series: np.ndarray, rng: tuple[int, int], seq_len: int, pred_len: int,
                   stride: int = 1) -> Iterator[WindowPair]:
    """Yield (input, target) windows inside one range, in time order."""
    start, stop = rng
    n = _n_windows(stop - start, seq_len, pred_len, stride)
    for k in range(n):
        o = start + k * stride
        yield WindowPair(series[o:o + seq_len].T.copy(),
                         series[o + seq_len:o + seq_len + pred_len].T.copy(), o)


@dataclass
class PreparedData:
    standardized: np.ndarray   # (T_total, D)
    ranges: list[tuple[int, int]]
    scaler: Standardizer

    def windows(self, which: str, seq_len: int, pred_len: int, stride: int = 1) -> WindowDataset:
        idx = {"train": 0, "val": 1, "test": 2}[which]
        return WindowDataset.from_range(self.standardized, self.ranges[idx], seq_len, pred_len, stride)


def prepare(values: np.ndarray, ratios) -> PreparedData:
    """Split chronologically and standardize everything with train-range statistics."""
    ranges = chronological_split(values.shape[0], ratios)
    a, b = ranges[0]
    scaler = Standardizer.fit(values[a:b])
    return PreparedData(scaler.transform(values), ranges, scaler)


@dataclass
class CorrelationReport:
    macc_raw: float
    macc_seasonal: float
    macc_trend: float
    matrices: dict[str, np.ndarray] = field(default_factory=dict)
    excluded: dict[str, list[int]] = field(default_factory=dict)

    def recommendation(self) -> str:
        """MK when the seasonal part is at least as correlated as the raw data, else IK.

        Differences within rounding (1e-12) count as a tie.
        """
        return "MK" if self.macc_seasonal >= self.macc_raw - 1e-12 else "IK"


def _macc(x: np.ndarray, label: str):
    D = x.shape[0]
    scale = np.maximum(np.abs(x).max(axis=1), 1.0)
    varying = np.where(x.std(axis=1) > 1e-12 * scale)[0]
    dropped = [int(i) for i in range(D) if i not in set(varying)]
    if dropped:
        warnings.warn(f"{label}: channels {dropped} have zero variance and are excluded")
    mat = np.full((D, D), np.nan)
    if len(varying) < 2:
        return float("nan"), mat, dropped
    sub = np.abs(np.corrcoef(x[varying]))
    mat[np.ix_(varying, varying)] = sub
    off = sub[~np.eye(len(varying), dtype=bool)]
    return float(np.clip(off.mean(), 0.0, 1.0)), mat, dropped


def channel_correlation(x: np.ndarray, ma_kernel: int = 25) -> CorrelationReport:
    """Mean absolute off-diagonal Pearson correlation of raw, seasonal and trend parts.

    ``x`` is (D, L).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("analysis requires D >= 2 channels")
    if x.shape[1] < 3:
        raise ValueError("analysis requires at least 3 time steps")
    if np.all(x.std(axis=1) == 0):
        raise ValueError("all channels are constant")
    with no_grad():
        trend = moving_average(Tensor(x), ma_kernel).data
    parts = {"raw": x, "seasonal": x - trend, "trend": trend}
    maccs, mats, excluded = {}, {}, {}
    for label, arr in parts.items():
        maccs[label], mats[label], excluded[label] = _macc(arr, label)
    return CorrelationReport(maccs["raw"], maccs["seasonal"], maccs["trend"], mats, excluded)


def write_correlation_report(report: CorrelationReport, out_dir, columns=None) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for label, mat in report.matrices.items():
        names = columns or [f"ch{i}" for i in range(mat.shape[0])]
        fname = os.path.join(out_dir, f"corr_{label}.csv")
        with open(fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel"] + list(names))
            for name, row in zip(names, mat):
                w.writerow([name] + [repr(float(v)) for v in row])
        written.append(fname)
    fname = os.path.join(out_dir, "correlation_summary.csv")
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "macc", "excluded_channels"])
        for label in ("raw", "seasonal", "trend"):
            w.writerow([label, repr(getattr(report, f"macc_{label}")),
                        " ".join(map(str, report.excluded.get(label, [])))])
    written.append(fname)
    return written
