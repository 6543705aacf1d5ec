"""Tabular (x, y) datasets with the scaling and split helpers the search
and the contrastive task need.

CSV layout: header ``x0,...,x{k-1},y``, one row per sample.  Values are
written with 17 significant digits so a save/load round-trip is lossless.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class TabularDataset:
    id: str
    xs: np.ndarray  # (n_rows, n_vars) float64
    y: np.ndarray  # (n_rows,) float64
    source_skeleton: str | None = None  # generating prefix with constants blanked

    def __post_init__(self):
        xs = np.ascontiguousarray(self.xs, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        if xs.ndim == 1:
            xs = xs.reshape(-1, 1)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "y", y)
        if xs.shape[0] != y.shape[0]:
            raise DatasetError("xs and y disagree on the number of rows")
        if xs.shape[1] < 1:
            raise DatasetError("need at least one input variable")
        if not (np.isfinite(xs).all() and np.isfinite(y).all()):
            raise DatasetError("dataset contains non-finite values")

    @property
    def n_rows(self):
        return self.xs.shape[0]

    @property
    def n_vars(self):
        return self.xs.shape[1]


def scale_y(ds):
    """y / max(max|y|, 1), per column; only for network inputs.

    Rewards always see the original y values.
    """
    return ds.y / max(float(np.max(np.abs(ds.y))) if ds.n_rows else 0.0, 1.0)


def sort_split(ds):
    """Stable-sort rows by ascending y and split into two halves.

    The first ceil(n/2) rows form half A.  Both halves keep the dataset id
    and skeleton so contrastive batching can pair them up again.
    """
    if ds.n_rows < 2:
        raise DatasetError("sort_split needs at least 2 rows")
    order = np.argsort(ds.y, kind="stable")
    cut = (ds.n_rows + 1) // 2
    a_idx, b_idx = order[:cut], order[cut:]
    half_a = TabularDataset(ds.id, ds.xs[a_idx], ds.y[a_idx], ds.source_skeleton)
    half_b = TabularDataset(ds.id, ds.xs[b_idx], ds.y[b_idx], ds.source_skeleton)
    return half_a, half_b


def save_csv(ds, path):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(ds.n_vars)] + ["y"])
        for i in range(ds.n_rows):
            writer.writerow(
                [format(v, ".17g") for v in ds.xs[i]] + [format(ds.y[i], ".17g")]
            )


def load_csv(path, id=None, source_skeleton=None):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        expected = [f"x{i}" for i in range(len(header) - 1)] + ["y"]
        if header != expected:
            raise DatasetError(f"{path}: expected header {','.join(expected)!r}")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetError(f"{path}: row {line_no} has {len(row)} fields")
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise DatasetError(f"{path}: row {line_no} is not numeric") from None
            if not all(np.isfinite(v) for v in values):
                raise DatasetError(f"{path}: row {line_no} contains a non-finite value")
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    return TabularDataset(
        id=id if id is not None else path.stem,
        xs=data[:, :-1],
        y=data[:, -1],
        source_skeleton=source_skeleton,
    )


def save_manifest(entries, path):
    """Write a dataset-collection index: [{id, path, skeleton}, ...]."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=2)
        fh.write("\n")


def load_manifest(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    datasets = []
    for entry in entries["datasets"] if isinstance(entries, dict) else entries:
        ds_path = Path(entry["path"])
        if not ds_path.is_absolute():
            ds_path = path.parent / ds_path
        datasets.append(
            load_csv(ds_path, id=entry["id"], source_skeleton=entry.get("skeleton"))
        )
    return datasets
