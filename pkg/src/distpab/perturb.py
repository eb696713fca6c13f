"""Centralized and distributed perturbation pipelines.

The distributed form splits the work in two: :func:`coordinate` turns
partition summaries into shared :class:`GlobalParams`, and
:func:`node_perturb` perturbs one partition with them. The centralized
pipeline is the one-partition special case of the same two steps, so both
paths share every floating-point operation.
"""

import hashlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_data_matrix
from .exceptions import DimensionError, InvalidConfigError, ProtocolStateError
from .geometry import REFLECTION_MODES, apply_transform, to_homogeneous
from .phi import search_optimal
from .stats import finalize_global, reverse_zscore, summarize, zscore_normalize

logger = logging.getLogger(__name__)

EXPANSION_MODES = ("randexp", "additive-min-sigma", "off")


@dataclass
class PerturbConfig:
    sigma: float = 0.3
    seed: int | None = None
    reflection_mode: str = "all-but-ax"
    expansion_mode: str = "randexp"
    shuffle: bool = True

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise InvalidConfigError(f"sigma must be a non-negative number, got {self.sigma!r}")
        if self.reflection_mode not in REFLECTION_MODES:
            raise InvalidConfigError(f"reflection_mode must be one of {REFLECTION_MODES}")
        if self.expansion_mode not in EXPANSION_MODES:
            raise InvalidConfigError(f"expansion_mode must be one of {EXPANSION_MODES}")
        if self.seed is not None and (int(self.seed) != self.seed or self.seed < 0):
            raise InvalidConfigError("seed must be a non-negative integer")


def params_rng(seed):
    """Random stream used by the coordinator (translation offsets)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def node_rng(seed, node_id):
    """Independent random stream for one node's expansion noise and shuffle."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, int(node_id))))


@dataclass
class GlobalParams:
    """Phase-2 payload: everything a node needs to perturb its partition.

    ``theta``, ``axis`` and ``phi`` are coordinator-side bookkeeping and are
    not transmitted; a decoded instance carries ``nan``/``0`` for them.
    """

    rotation: np.ndarray
    translation: np.ndarray
    reflection: np.ndarray
    stdvec: np.ndarray
    meanvec: np.ndarray
    sigma: float
    theta: float = float("nan")
    axis: int = 0
    phi: float = float("nan")

    @property
    def attr_count(self):
        return self.stdvec.shape[0]

    @property
    def composite(self):
        """Reflection, then translation, then rotation."""
        return self.rotation @ self.translation @ self.reflection

    def digest(self):
        h = hashlib.sha256()
        h.update(np.float64(self.sigma).astype("<f8").tobytes())
        for arr in (self.rotation, self.translation, self.reflection, self.stdvec, self.meanvec):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class PerturbOutput:
    data: np.ndarray
    phi: float
    params_digest: str
    labels: np.ndarray | None = None
    permutation: np.ndarray | None = field(default=None, repr=False)
    params: GlobalParams | None = field(default=None, repr=False)


def randomized_expansion(X, sigma, rng):
    """Grow every magnitude by ``|N(0, sigma)|`` while keeping its sign.

    Zero entries are treated as positive.
    """
    if not sigma >= 0:
        raise InvalidConfigError(f"sigma must be non-negative, got {sigma!r}")
    X = np.asarray(X, dtype=np.float64)
    if sigma == 0:
        return X.copy()
    noise = np.abs(rng.normal(0.0, sigma, size=X.shape))
    sign = np.where(X < 0, -1.0, 1.0)
    return (np.abs(X) + noise) * sign


def _expand(Zt, cfg, rng):
    if cfg.expansion_mode == "off":
        return Zt
    if cfg.expansion_mode == "randexp":
        return randomized_expansion(Zt, cfg.sigma, rng)
    # additive noise scaled by the smallest column spread of the transformed block
    scale = float(Zt.std(axis=0, ddof=1).min()) if Zt.shape[0] > 1 else 0.0
    return Zt + rng.normal(0.0, scale, size=Zt.shape)


def coordinate(summaries, cfg):
    """Central-entity task: merge summaries, search parameters, bundle them."""
    summaries = list(summaries)
    if not summaries:
        raise ValueError("coordinate() needs at least one partition summary")
    n_values = {s.attr_count for s in summaries}
    if len(n_values) != 1:
        raise DimensionError(f"inconsistent attribute counts across summaries: {sorted(n_values)}")
    stats = finalize_global(summaries)
    opt = search_optimal(stats, params_rng(cfg.seed), cfg.reflection_mode)
    logger.debug("phi=%.6g theta=%.4f axis=%d", opt.phi, opt.theta, opt.axis)
    return GlobalParams(
        rotation=opt.rotation,
        translation=opt.translation,
        reflection=opt.reflection,
        stdvec=stats.stdvec,
        meanvec=stats.meanvec,
        sigma=float(cfg.sigma),
        theta=opt.theta,
        axis=opt.axis,
        phi=opt.phi,
    )


def transform_normalized(Z, params):
    """Geometric part of the perturbation, in the normalized frame."""
    return apply_transform(params.composite, to_homogeneous(Z)).T


def node_perturb(X, params, cfg, labels=None, node_id=0):
    """Distributed-entity task: perturb one partition with the global parameters."""
    X = as_data_matrix(X, min_rows=1, min_cols=2)
    if X.shape[1] != params.attr_count:
        raise ProtocolStateError(
            f"partition has {X.shape[1]} attributes but parameters are for {params.attr_count}"
        )
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape[0] != X.shape[0]:
            raise DimensionError("labels must have one entry per row")
    rng = node_rng(cfg.seed, node_id)
    Z, _, _ = zscore_normalize(X, params.meanvec, params.stdvec)
    Zt = transform_normalized(Z, params)
    Zt = _expand(Zt, replace(cfg, sigma=params.sigma), rng)
    out = reverse_zscore(Zt, params.stdvec, params.meanvec)
    perm = None
    if cfg.shuffle:
        perm = rng.permutation(out.shape[0])
        out = out[perm]
        if labels is not None:
            labels = labels[perm]
    return PerturbOutput(out, params.phi, params.digest(), labels, perm, params)


def perturb_centralized(X, cfg, labels=None):
    """Perturb a whole dataset held in one place."""
    X = as_data_matrix(X, min_rows=2, min_cols=2)
    params = coordinate([summarize(X)], cfg)
    return node_perturb(X, params, cfg, labels=labels, node_id=0)


def perturb_partitions(partitions, cfg, labels=None):
    """In-memory distributed run without the wire protocol.

    Returns the shared parameters and one :class:`PerturbOutput` per partition.
    """
    partitions = [as_data_matrix(p, min_rows=2, min_cols=2) for p in partitions]
    params = coordinate([summarize(p) for p in partitions], cfg)
    labels = labels if labels is not None else [None] * len(partitions)
    outs = [node_perturb(p, params, cfg, labels=y, node_id=i) for i, (p, y) in enumerate(zip(partitions, labels))]
    return params, outs


class DISTPABPerturber(TransformerMixin, BaseEstimator):
    """Geometric perturbation transformer.

    ``fit`` derives the global perturbation parameters (from one array, or
    from partition summaries via :meth:`fit_summaries`); ``transform`` perturbs
    data with them. With ``shuffle=True`` the output rows are permuted, so
    keep it off inside pipelines that need row alignment with ``y``.

    Parameters
    ----------
    sigma : float, default=0.3
        Standard deviation of the randomized-expansion noise.
    reflection_mode : {"all-but-ax", "single-ax"}
    expansion : {"randexp", "additive-min-sigma", "off"}
    shuffle : bool, default=True
    random_state : int or None
    """

    def __init__(self, sigma=0.3, reflection_mode="all-but-ax", expansion="randexp", shuffle=True, random_state=None):
        self.sigma = sigma
        self.reflection_mode = reflection_mode
        self.expansion = expansion
        self.shuffle = shuffle
        self.random_state = random_state

    def _config(self):
        return PerturbConfig(
            sigma=self.sigma,
            seed=self.random_state,
            reflection_mode=self.reflection_mode,
            expansion_mode=self.expansion,
            shuffle=self.shuffle,
        )

    def fit(self, X, y=None):
        X = as_data_matrix(X)
        return self.fit_summaries([summarize(X)])

    def fit_summaries(self, summaries):
        self.params_ = coordinate(summaries, self._config())
        self.n_features_in_ = self.params_.attr_count
        self.phi_ = self.params_.phi
        self.theta_ = self.params_.theta
        self.axis_ = self.params_.axis
        return self

    def transform(self, X, node_id=0):
        check_is_fitted(self, "params_")
        return node_perturb(X, self.params_, self._config(), node_id=node_id).data
