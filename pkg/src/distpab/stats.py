"""Normalization and mergeable partition statistics.

All variances use the unbiased ``(m - 1)`` denominator, which is what the
pairwise co-moment merge needs.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np

from ._validation import as_data_matrix
from .exceptions import ConstantAttributeError, DimensionError, InsufficientRowsError

CONSTANT_TOL = 1e-12


def constant_columns(X, tol=CONSTANT_TOL):
    """Indices of columns whose sample standard deviation is ``<= tol``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 2:
        return np.array([], dtype=int)
    return np.flatnonzero(X.std(axis=0, ddof=1) <= tol)


def zscore_normalize(X, mean=None, std=None):
    """Column-wise z-score normalization.

    When ``mean`` and ``std`` are omitted they are computed from ``X`` (sample
    std). Passing them applies an externally supplied frame, which is how
    worker nodes normalize against the global statistics.

    Returns
    -------
    Z, mean, std
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D data matrix, got shape {X.shape}")
    if mean is None or std is None:
        if X.shape[0] < 2:
            raise InsufficientRowsError("need at least 2 rows to estimate mean and std")
        mean = X.mean(axis=0) if mean is None else mean
        std = X.std(axis=0, ddof=1) if std is None else std
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (X.shape[1],) or std.shape != (X.shape[1],):
        raise DimensionError("mean/std length must equal the number of columns")
    flat = np.flatnonzero(std <= CONSTANT_TOL)
    if flat.size:
        raise ConstantAttributeError(int(flat[0]))
    return (X - mean) / std, mean, std


def reverse_zscore(Z, stdvec, meanvec):
    """Map normalized data back to attribute scale: ``Z * std + mean``."""
    Z = np.asarray(Z, dtype=np.float64)
    stdvec = np.asarray(stdvec, dtype=np.float64)
    meanvec = np.asarray(meanvec, dtype=np.float64)
    if Z.ndim != 2 or stdvec.shape != (Z.shape[1],) or meanvec.shape != (Z.shape[1],):
        raise DimensionError("std/mean vectors must match the number of columns")
    return Z * stdvec + meanvec


def sample_covariance(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D data matrix, got shape {X.shape}")
    m = X.shape[0]
    if m < 2:
        raise InsufficientRowsError(f"covariance needs at least 2 rows, got {m}")
    centered = X - X.mean(axis=0)
    cov = centered.T @ centered / (m - 1)
    return (cov + cov.T) / 2.0


@dataclass(frozen=True)
class PartitionSummary:
    """What a node reveals about its partition: covariance, mean and size."""

    cov: np.ndarray
    mean: np.ndarray
    row_count: int

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64)
        n = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (n, n):
            raise DimensionError(f"covariance {cov.shape} does not match mean length {n}")
        if int(self.row_count) < 2:
            raise InsufficientRowsError("a partition summary needs at least 2 rows")
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "row_count", int(self.row_count))

    @property
    def attr_count(self):
        return self.mean.shape[0]

    @property
    def comoment(self):
        return self.cov * (self.row_count - 1)

    @classmethod
    def from_data(cls, X):
        X = as_data_matrix(X, min_rows=2, min_cols=1)
        return cls(sample_covariance(X), X.mean(axis=0), X.shape[0])


def summarize(X):
    """Phase-1 summary of a local partition."""
    return PartitionSummary.from_data(X)


def merge_summaries(a, b):
    """Summary of the concatenation of two partitions (pairwise co-moment update)."""
    if a.attr_count != b.attr_count:
        raise DimensionError(f"cannot merge summaries with {a.attr_count} and {b.attr_count} attributes")
    m_a, m_b = a.row_count, b.row_count
    m = m_a + m_b
    delta = a.mean - b.mean
    comoment = a.comoment + b.comoment + np.outer(delta, delta) * (m_a * m_b / m)
    cov = comoment / (m - 1)
    mean = (m_a * a.mean + m_b * b.mean) / m
    return PartitionSummary((cov + cov.T) / 2.0, mean, m)


@dataclass(frozen=True)
class GlobalStats:
    cov: np.ndarray
    corr: np.ndarray
    stdvec: np.ndarray
    meanvec: np.ndarray
    total_rows: int

    @property
    def attr_count(self):
        return self.meanvec.shape[0]


def finalize_global(summaries):
    """Fold partition summaries left to right into global statistics.

    ``corr`` doubles as the covariance of the globally z-scored data.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValueError("need at least one partition summary")
    merged = reduce(merge_summaries, summaries)
    stdvec = np.sqrt(np.clip(np.diag(merged.cov), 0.0, None))
    flat = np.flatnonzero(stdvec < CONSTANT_TOL)
    if flat.size:
        raise ConstantAttributeError(int(flat[0]))
    corr = merged.cov / np.outer(stdvec, stdvec)
    np.fill_diagonal(corr, 1.0)
    return GlobalStats(merged.cov, corr, stdvec, merged.mean, merged.row_count)
