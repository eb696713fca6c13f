"""Homogeneous-coordinate transformation matrices.

Every generator returns an ``(n+1) x (n+1)`` float64 array acting on column
vectors ``(x_1, ..., x_n, 1)``. Data matrices elsewhere in the package are
row-per-record, so :func:`apply_transform` handles the transposition.
"""

from itertools import combinations

import numpy as np

from .exceptions import DimensionError, InvalidAxisError

REFLECTION_MODES = ("all-but-ax", "single-ax")


def _check_n(n):
    if int(n) != n or n < 2:
        raise DimensionError(f"attribute count must be an integer >= 2, got {n!r}")
    return int(n)


def make_translation(n, rng):
    """Translation matrix with offsets drawn uniformly from the open interval (0, 1).

    Parameters
    ----------
    n : int
        Number of attributes.
    rng : numpy.random.Generator
        Source of the offsets; the same seeded generator state always gives
        the same matrix.
    """
    n = _check_n(n)
    offsets = rng.uniform(0.0, 1.0, size=n)
    # Generator.uniform is half-open [0, 1); redraw the (measure-zero) exact zeros.
    while np.any(offsets == 0.0):
        zero = offsets == 0.0
        offsets[zero] = rng.uniform(0.0, 1.0, size=int(zero.sum()))
    T = np.eye(n + 1)
    T[:n, n] = offsets
    return T


def make_reflection(n, ax, mode="all-but-ax"):
    """Diagonal reflection matrix for axis ``ax`` (1-based).

    ``mode="all-but-ax"`` keeps axis ``ax`` and flips every other data axis;
    ``mode="single-ax"`` flips only axis ``ax``. The homogeneous entry is
    always +1, so the matrix is its own inverse.
    """
    n = _check_n(n)
    if int(ax) != ax or not 1 <= ax <= n:
        raise InvalidAxisError(f"reflection axis must lie in [1, {n}], got {ax!r}")
    if mode == "all-but-ax":
        diag = -np.ones(n + 1)
        diag[ax - 1] = 1.0
    elif mode == "single-ax":
        diag = np.ones(n + 1)
        diag[ax - 1] = -1.0
    else:
        raise ValueError(f"unknown reflection mode {mode!r}; expected one of {REFLECTION_MODES}")
    diag[n] = 1.0
    return np.diag(diag)


def make_rotation(n, theta):
    """Concatenated sub-plane rotation by a single angle ``theta``.

    The result is ``R_12 @ R_13 @ ... @ R_(n-1)n`` over all index pairs in
    ascending lexicographic order, where ``R_ij`` rotates the ``(i, j)`` plane
    with ``cos`` on the diagonal, ``-sin`` at ``(i, j)`` and ``sin`` at
    ``(j, i)``. The homogeneous row and column stay as identity.
    """
    n = _check_n(n)
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    c, s = np.cos(theta), np.sin(theta)
    M = np.eye(n + 1)
    for i, j in combinations(range(n), 2):
        # right-multiplying by R_ij only mixes columns i and j
        col_i = M[:, i].copy()
        col_j = M[:, j]
        M[:, i] = c * col_i + s * col_j
        M[:, j] = -s * col_i + c * col_j
    return M


def to_homogeneous(X):
    """Row-per-record ``(m, n)`` data to the ``(n+1, m)`` homogeneous form."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D data matrix, got shape {X.shape}")
    return np.vstack([X.T, np.ones((1, X.shape[0]))])


def apply_transform(M, H):
    """Apply ``M`` to homogeneous data ``H`` and drop the homogeneous row.

    Returns an ``(n, m)`` array (one column per record).
    """
    M = np.asarray(M, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if M.ndim != 2 or H.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[1] != H.shape[0]:
        raise DimensionError(f"cannot apply a {M.shape} transform to data of shape {H.shape}")
    if not np.all(H[-1] == 1.0):
        raise DimensionError("last row of homogeneous data must be all ones")
    return (M @ H)[:-1]


def transform_rows(M, X):
    """Convenience wrapper: transform row-per-record data, returning ``(m, n)``."""
    return apply_transform(M, to_homogeneous(X)).T
