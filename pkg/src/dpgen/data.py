"""CSV loading and per-column min-max scaling to [-1, 1]."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


class ParseError(ValueError):
    pass


@dataclass
class TabularDataset:
    """Feature matrix (scaled when ``mins``/``maxs`` are set) and optional labels."""

    features: np.ndarray
    columns: list[str]
    labels: np.ndarray | None = None
    label_name: str | None = None
    mins: np.ndarray | None = None
    maxs: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float).reshape(-1, len(self.columns))
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.features):
                raise ValueError("labels and features differ in length")
            if self.labels.size and self.labels.min() < 0:
                raise ValueError("labels must be in 0..C-1")
        if (self.mins is None) != (self.maxs is None):
            raise ValueError("scaling metadata must have both mins and maxs")

    def __len__(self):
        return len(self.features)

    @property
    def scaled(self) -> bool:
        return self.mins is not None

    @property
    def num_classes(self) -> int:
        if self.labels is None or not self.labels.size:
            return 0
        return int(self.labels.max()) + 1

    def raw_features(self) -> np.ndarray:
        """Features in original units."""
        if not self.scaled:
            return self.features.copy()
        return inverse_scale(self.features, self.mins, self.maxs)

    def subset(self, idx) -> "TabularDataset":
        labels = None if self.labels is None else self.labels[idx]
        return replace(self, features=self.features[idx], labels=labels)


def fit_scaler(x: np.ndarray):
    return x.min(axis=0), x.max(axis=0)


def scale(x, mins, maxs) -> np.ndarray:
    """Map [min, max] to [-1, 1] per column; constant columns map to 0."""
    x = np.asarray(x, dtype=float)
    span = maxs - mins
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, 2.0 * (x - mins) / safe - 1.0, 0.0)


def inverse_scale(x, mins, maxs) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (x + 1.0) / 2.0 * (maxs - mins) + mins


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: str | None = None, scale_features: bool = True, scaler=None) -> TabularDataset:
    """Read a headed numeric CSV.

    ``scaler`` is an optional ``(mins, maxs)`` pair to reuse instead of fitting
    on this file.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if all(_is_number(h) for h in header):
        raise ParseError(f"{path}: row 1 looks numeric; a header row is required")
    if label_column is not None and label_column not in header:
        raise ParseError(f"{path}: unknown label column {label_column!r}")
    label_idx = header.index(label_column) if label_column is not None else None
    values = []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: row {r} has {len(row)} fields, expected {len(header)}")
        try:
            values.append([float(cell) for cell in row])
        except ValueError:
            c = next(i for i, cell in enumerate(row) if not _is_number(cell))
            raise ParseError(f"{path}: row {r}, column {c + 1} ({header[c]!r}) is not numeric: {row[c]!r}") from None
    data = np.array(values, dtype=float).reshape(len(values), len(header))
    labels = None
    columns = header
    if label_idx is not None:
        lab = data[:, label_idx]
        if np.any(lab != np.round(lab)) or np.any(lab < 0):
            raise ParseError(f"{path}: label column {label_column!r} must hold nonnegative integers")
        labels = lab.astype(np.int64)
        data = np.delete(data, label_idx, axis=1)
        columns = header[:label_idx] + header[label_idx + 1 :]
    if not scale_features:
        return TabularDataset(data, columns, labels, label_column)
    mins, maxs = scaler if scaler is not None else (fit_scaler(data) if len(data) else (np.zeros(len(columns)),) * 2)
    mins, maxs = np.asarray(mins, dtype=float), np.asarray(maxs, dtype=float)
    return TabularDataset(scale(data, mins, maxs), columns, labels, label_column, mins, maxs)


def write_csv(path, features, columns, labels=None, label_name: str | None = None) -> None:
    """Write raw feature rows (and labels, last column) with round-trippable floats."""
    features = np.asarray(features, dtype=float).reshape(-1, len(columns))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns) + ([label_name or "label"] if labels is not None else []))
        for i, row in enumerate(features):
            cells = [repr(float(v)) for v in row]
            if labels is not None:
                cells.append(str(int(labels[i])))
            w.writerow(cells)
