"""Phi-separation parameter search.

For a candidate (rotation ``M``, reflection ``RF``) applied to z-scored data
with correlation ``C``, the per-attribute variance of ``original - perturbed``
is ``1 + diag(M RF C RF M^T) - 2 * rowsum((C RF) * M)``. Translation does
not enter, because adding a constant leaves variances unchanged. The search
picks the angle maximising the worst-case (minimum over attributes and
reflection axes) of that variance.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_square
from .exceptions import DimensionError
from .geometry import apply_transform, make_reflection, make_rotation, make_translation, to_homogeneous

EXCLUDED_DEGREES = (30, 45, 60, 90, 120, 135, 150)


def angle_grid():
    """Candidate angles in radians: whole degrees 1..179 minus the excluded set."""
    degrees = [d for d in range(1, 180) if d not in EXCLUDED_DEGREES]
    return np.deg2rad(np.array(degrees, dtype=np.float64))


def augment_correlation(corr):
    """Embed an ``n x n`` correlation matrix in an ``(n+1) x (n+1)`` zero border."""
    corr = np.asarray(corr, dtype=np.float64)
    n = corr.shape[0]
    out = np.zeros((n + 1, n + 1))
    out[:n, :n] = corr
    return out


def phi_vector(corr_hom, M, RF):
    """Per-attribute difference variances (homogeneous entry dropped)."""
    corr_hom = np.asarray(corr_hom, dtype=np.float64)
    size = corr_hom.shape[0]
    if corr_hom.ndim != 2 or size != corr_hom.shape[1] or size < 3:
        raise DimensionError(f"augmented correlation must be square with size >= 3, got {corr_hom.shape}")
    M = check_square(M, size, "rotation")
    RF = check_square(RF, size, "reflection")
    CR = corr_hom @ RF
    v = np.diag(corr_hom) + np.einsum("ij,ji->i", M @ RF @ CR, M.T) - 2.0 * np.sum(CR * M, axis=1)
    return v[:-1]


def phi_shortcut(corr_hom, M, RF):
    """Local minimum privacy guarantee of one candidate, from the correlation only."""
    return float(np.min(phi_vector(corr_hom, M, RF)))


def phi_direct(Z, M, TN, RF):
    """Brute-force counterpart of :func:`phi_shortcut` on the normalized data itself."""
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[1]
    for name, mat in (("rotation", M), ("translation", TN), ("reflection", RF)):
        check_square(mat, n + 1, name)
    perturbed = apply_transform(M @ TN @ RF, to_homogeneous(Z)).T
    return float(np.min(np.var(Z - perturbed, axis=0, ddof=1)))


@dataclass
class PhiGrid:
    """``values[ax - 1, t]`` is the guarantee for reflection axis ``ax`` and angle ``t``."""

    values: np.ndarray
    angle_grid: np.ndarray

    @property
    def per_theta_min(self):
        return self.values.min(axis=0)


@dataclass
class OptimalParams:
    phi: float
    theta: float
    axis: int
    rotation: np.ndarray
    reflection: np.ndarray
    translation: np.ndarray
    grid: PhiGrid


def phi_grid(corr, reflection_mode="all-but-ax", angles=None):
    """Evaluate every (axis, angle) candidate for correlation matrix ``corr``."""
    corr = np.asarray(corr, dtype=np.float64)
    n = corr.shape[0]
    if corr.shape != (n, n) or n < 2:
        raise DimensionError(f"correlation must be square with n >= 2, got {corr.shape}")
    angles = angle_grid() if angles is None else np.asarray(angles, dtype=np.float64)
    C = augment_correlation(corr)
    reflections = [make_reflection(n, ax, reflection_mode) for ax in range(1, n + 1)]
    values = np.empty((n, angles.size))
    for t, theta in enumerate(angles):
        M = make_rotation(n, theta)
        for a, RF in enumerate(reflections):
            values[a, t] = phi_shortcut(C, M, RF)
    return PhiGrid(values, angles)


def select_optimal(grid, tie_tol=1e-12):
    """Return ``(phi, angle index, axis)``.

    Values within ``tie_tol`` (relative) of the optimum count as ties, which
    go to the smallest angle and then the smallest axis; this keeps the
    choice stable against rounding noise in symmetric problems.
    """
    per_theta = grid.per_theta_min
    best = per_theta.max()
    t = int(np.flatnonzero(per_theta >= best - tie_tol * max(1.0, abs(best)))[0])
    column = grid.values[:, t]
    low = column.min()
    ax = int(np.flatnonzero(column <= low + tie_tol * max(1.0, abs(low)))[0]) + 1
    return float(per_theta[t]), t, ax


def search_optimal(global_stats, rng, reflection_mode="all-but-ax"):
    """Run the full search and generate the matrices for the winning candidate.

    ``rng`` is only used to draw the translation matrix.
    """
    corr = global_stats.corr if hasattr(global_stats, "corr") else np.asarray(global_stats)
    n = corr.shape[0]
    grid = phi_grid(corr, reflection_mode)
    phi, t, ax = select_optimal(grid)
    theta = float(grid.angle_grid[t])
    return OptimalParams(
        phi=phi,
        theta=theta,
        axis=ax,
        rotation=make_rotation(n, theta),
        reflection=make_reflection(n, ax, reflection_mode),
        translation=make_translation(n, rng),
        grid=grid,
    )
