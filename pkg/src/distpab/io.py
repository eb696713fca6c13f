"""CSV datasets: a header row, numeric feature columns and an optional label column."""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DatasetError

DEFAULT_LABEL_COL = "class"


@dataclass
class Dataset:
    header: list
    X: np.ndarray
    labels: np.ndarray | None = None
    label_index: int | None = None

    @property
    def feature_names(self):
        return [h for i, h in enumerate(self.header) if i != self.label_index]

    def with_rows(self, X, labels=None):
        return replace(self, X=np.asarray(X, dtype=np.float64), labels=labels if self.label_index is not None else None)


def read_dataset(path, label_col=DEFAULT_LABEL_COL, min_rows=2, min_features=2):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        label_index = header.index(label_col) if label_col and label_col in header else None
        rows, labels = [], []
        for row in reader:
            lineno = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}, line {lineno}: expected {len(header)} fields, got {len(row)}")
            values = []
            for i, cell in enumerate(row):
                if i == label_index:
                    labels.append(cell.strip())
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DatasetError(f"{path}, line {lineno}: column {header[i]!r} is not numeric: {cell!r}") from None
                if not np.isfinite(v):
                    raise DatasetError(f"{path}, line {lineno}: column {header[i]!r} is not finite")
                values.append(v)
            rows.append(values)
    n_features = len(header) - (label_index is not None)
    if n_features < min_features:
        raise DatasetError(f"{path}: need at least {min_features} feature columns, found {n_features}")
    if len(rows) < min_rows:
        raise DatasetError(f"{path}: need at least {min_rows} data rows, found {len(rows)}")
    X = np.array(rows, dtype=np.float64)
    y = np.array(labels, dtype=object) if label_index is not None else None
    return Dataset(header, X, y, label_index)


def write_dataset(path, ds):
    """Write ``ds`` with its original header; floats use the shortest round-trip repr."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ds.header)
        for r in range(ds.X.shape[0]):
            feats = iter(repr(float(v)) for v in ds.X[r])
            writer.writerow([ds.labels[r] if i == ds.label_index else next(feats) for i in range(len(ds.header))])


def write_rounds_csv(path, accuracies):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", "accuracy"])
        for r, acc in enumerate(accuracies, start=1):
            writer.writerow([r, repr(float(acc))])
