"""Reconstruction attacks used to score a perturbed dataset.

Each attack produces an estimate of the original data; the privacy score of
an attribute is the sample std of ``original - estimate`` (higher is better
for the data owner). Rows of ``original`` and ``perturbed`` must be aligned,
so evaluate output produced with shuffling disabled.
"""

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_same_shape
from .exceptions import DimensionError, SingularFitError

logger = logging.getLogger(__name__)

RIDGE = 1e-8


def difference_std(original, estimate):
    original, estimate = check_same_shape(original, estimate)
    return np.std(original - estimate, axis=0, ddof=1)


def ni_metric(original, perturbed):
    """Naive inference: the perturbed values are taken as the estimate."""
    return difference_std(original, perturbed)


def io_attack(original_known, perturbed_known, perturbed_rest, ridge=RIDGE):
    """Known input/output attack.

    Fits an affine least-squares map ``perturbed -> original`` on the known
    pairs (ridge-regularised normal equations) and applies it to the rest.
    """
    original_known, perturbed_known = check_same_shape(original_known, perturbed_known)
    perturbed_rest = np.asarray(perturbed_rest, dtype=np.float64)
    m, n = perturbed_known.shape
    if perturbed_rest.ndim != 2 or perturbed_rest.shape[1] != n:
        raise DimensionError("perturbed_rest must have the same attributes as the known pairs")
    if m < n + 1:
        raise SingularFitError(f"need at least {n + 1} known pairs for an affine fit, got {m}")
    A = np.hstack([perturbed_known, np.ones((m, 1))])
    gram = A.T @ A
    gram[np.diag_indices_from(gram)] += ridge
    try:
        coef = np.linalg.solve(gram, A.T @ original_known)
    except np.linalg.LinAlgError as exc:
        raise SingularFitError("known input/output design is singular") from exc
    if not np.all(np.isfinite(coef)):
        raise SingularFitError("known input/output fit produced non-finite coefficients")
    return np.hstack([perturbed_rest, np.ones((perturbed_rest.shape[0], 1))]) @ coef


def _sym_decorrelation(W):
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(np.float64).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


class FastICA(TransformerMixin, BaseEstimator):
    """Symmetric FastICA with the ``logcosh`` (tanh) contrast.

    Data are centred, whitened with the symmetric inverse square root of the
    sample covariance, then unmixed by fixed-point iteration with symmetric
    decorrelation after each step.

    Attributes
    ----------
    mean_ : ndarray of shape (n_features,)
    whitening_ : ndarray of shape (n_features, n_features)
    unmixing_ : ndarray of shape (n_features, n_features)
        Rotation applied to the whitened data.
    converged_ : bool
    n_iter_ : int
    """

    def __init__(self, tol=1e-6, max_iter=500, random_state=None):
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        n = X.shape[1]
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        cov = Xc.T @ Xc / (X.shape[0] - 1)
        d, E = np.linalg.eigh(cov)
        if d.min() <= 1e-12 * max(d.max(), 1.0):
            raise SingularFitError("data covariance is singular; cannot whiten")
        self.whitening_ = (E / np.sqrt(d)) @ E.T
        Z = Xc @ self.whitening_.T

        rng = np.random.default_rng(self.random_state)
        W = _sym_decorrelation(rng.normal(size=(n, n)))
        m = Z.shape[0]
        self.converged_ = False
        for it in range(1, self.max_iter + 1):
            G = np.tanh(Z @ W.T)
            W_new = (G.T @ Z) / m - np.diag((1.0 - G**2).mean(axis=0)) @ W
            W_new = _sym_decorrelation(W_new)
            # step size per unmixing vector, up to sign
            lim = np.max(np.minimum(np.linalg.norm(W_new - W, axis=1), np.linalg.norm(W_new + W, axis=1)))
            W = W_new
            if lim < self.tol:
                self.converged_ = True
                break
        self.n_iter_ = it
        if not self.converged_:
            logger.info("FastICA did not converge after %d iterations", self.max_iter)
        self.unmixing_ = W
        return self

    def whiten(self, X):
        check_is_fitted(self, "whitening_")
        return (np.asarray(X, dtype=np.float64) - self.mean_) @ self.whitening_.T

    def transform(self, X):
        return self.whiten(X) @ self.unmixing_.T


@dataclass
class ICAResult:
    reconstructed: np.ndarray
    converged: bool
    n_iter: int
    assignment: list


def ica_attack(perturbed, random_state=0, tol=1e-6, max_iter=500):
    """Blind-source-separation attack on perturbed data alone.

    Components are matched greedily to perturbed attributes by largest
    absolute correlation, then given that attribute's sign, std and mean,
    which are all the attacker can observe.
    """
    P = check_array(perturbed, dtype=np.float64)
    m, n = P.shape
    if m < 10 * n:
        raise DimensionError(f"ICA attack needs at least {10 * n} rows for {n} attributes, got {m}")
    ica = FastICA(tol=tol, max_iter=max_iter, random_state=random_state).fit(P)
    S = ica.transform(P)
    S = (S - S.mean(axis=0)) / S.std(axis=0, ddof=1)
    Pc = (P - P.mean(axis=0)) / P.std(axis=0, ddof=1)
    corr = Pc.T @ S / (m - 1)

    assignment = [-1] * n
    free = np.abs(corr)
    for _ in range(n):
        j, k = np.unravel_index(np.argmax(free), free.shape)
        assignment[j] = int(k)
        free[j, :] = -1.0
        free[:, k] = -1.0

    rec = np.empty_like(P)
    for j, k in enumerate(assignment):
        sign = 1.0 if corr[j, k] >= 0 else -1.0
        rec[:, j] = sign * S[:, k] * P[:, j].std(ddof=1) + P[:, j].mean()
    return ICAResult(rec, ica.converged_, ica.n_iter_, assignment)


@dataclass
class AttackReport:
    ni_min: float
    ica_min: float
    io_min: float
    per_attribute: dict
    known_fraction: float
    seed: int | None
    ica_converged: bool

    def to_dict(self):
        return asdict(self)

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def evaluate(original, perturbed, known_fraction=0.1, seed=0):
    """Run the naive, ICA and known input/output attacks and collect the minima."""
    original, perturbed = check_same_shape(original, perturbed)
    if not 0 < known_fraction < 1:
        raise ValueError("known_fraction must lie strictly between 0 and 1")
    m, n = original.shape
    rng = np.random.default_rng(seed)

    ni = ni_metric(original, perturbed)

    ica = ica_attack(perturbed, random_state=seed)
    ica_scores = difference_std(original, ica.reconstructed)

    n_known = max(int(round(known_fraction * m)), n + 1)
    if m - n_known < 2:
        raise ValueError("not enough rows left after choosing the known subset")
    known = np.zeros(m, dtype=bool)
    known[rng.choice(m, size=n_known, replace=False)] = True
    rec = io_attack(original[known], perturbed[known], perturbed[~known])
    io_scores = difference_std(original[~known], rec)

    return AttackReport(
        ni_min=float(ni.min()),
        ica_min=float(ica_scores.min()),
        io_min=float(io_scores.min()),
        per_attribute={"ni": ni.tolist(), "ica": ica_scores.tolist(), "io": io_scores.tolist()},
        known_fraction=float(known_fraction),
        seed=seed,
        ica_converged=bool(ica.converged),
    )


def additive_noise_baseline(X, sigma=0.3, seed=None):
    """Comparator: add ``N(0, sigma * std_j)`` noise to each attribute."""
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return X + rng.normal(size=X.shape) * (sigma * X.std(axis=0, ddof=1))
