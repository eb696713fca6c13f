"""Horizontal federated learning over (perturbed) partitions.

A small fully connected ReLU network with a softmax output is trained with
mini-batch SGD + momentum on each client; the server averages parameters
weighted by client sample counts (FedAvg). Every random choice is derived
from ``(seed, client_id, epoch)`` so runs are reproducible.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.neighbors import KNeighborsClassifier
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DimensionError, InvalidConfigError, LabelRangeError

logger = logging.getLogger(__name__)


@dataclass
class FedConfig:
    clients: int = 4
    rounds: int = 20
    local_epochs: int = 3
    batch: int = 64
    lr: float = 1e-4
    momentum: float = 0.5
    train_fraction: float = 0.75
    hidden: tuple = (16, 16)
    seed: int = 0

    def __post_init__(self):
        for name in ("clients", "rounds", "local_epochs", "batch"):
            if int(getattr(self, name)) < 1:
                raise InvalidConfigError(f"{name} must be a positive integer")
        if not self.lr > 0:
            raise InvalidConfigError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise InvalidConfigError("momentum must lie in [0, 1)")
        if not 0 < self.train_fraction < 1:
            raise InvalidConfigError("train_fraction must lie strictly between 0 and 1")
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class ModelState:
    layer_dims: tuple
    weights: list
    biases: list

    def copy(self):
        return ModelState(self.layer_dims, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameters(self):
        return [*self.weights, *self.biases]


def init_model(n_features, n_classes, hidden, rng):
    """Glorot-uniform weights, zero biases."""
    dims = (int(n_features), *hidden, int(n_classes))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ModelState(dims, weights, biases)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(model, X):
    """Return the list of layer activations, input first, class probabilities last."""
    acts = [X]
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ W + b
        acts.append(_softmax(z) if i == last else np.maximum(z, 0.0))
    return acts


def predict_proba(model, X):
    return forward(model, np.asarray(X, dtype=np.float64))[-1]


def accuracy(model, X, y):
    return float(np.mean(np.argmax(predict_proba(model, X), axis=1) == y))


def loss_and_grads(model, X, y):
    """Mean cross-entropy of a batch and its gradients (weights first, then biases)."""
    acts = forward(model, X)
    probs = acts[-1]
    m = X.shape[0]
    loss = -float(np.mean(np.log(np.clip(probs[np.arange(m), y], 1e-300, None))))
    delta = probs.copy()
    delta[np.arange(m), y] -= 1.0
    delta /= m
    gw, gb = [None] * len(model.weights), [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (acts[i] > 0)
    return loss, gw + gb


class SGDMomentum:
    """Heavy-ball SGD: ``v <- momentum * v - lr * grad; p <- p + v``.

    The velocity lives with the client and survives across federation rounds.
    """

    def __init__(self, lr, momentum):
        self.lr = lr
        self.momentum = momentum
        self.velocity = None

    def step(self, params, grads):
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v -= self.lr * g
            p += v


def epoch_rng(seed, client_id, epoch):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2, int(client_id), int(epoch))))


def train_local(model, X, y, epochs, cfg, *, client_id=0, epoch_offset=0, optimizer=None):
    """Train a copy of ``model`` for ``epochs`` passes over ``(X, y)``.

    Parameters
    ----------
    epoch_offset : int
        Global index of the first epoch; it seeds the per-epoch batch order.
    optimizer : SGDMomentum, optional
        Carries momentum between calls. A fresh one is used when omitted.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    n_classes = model.layer_dims[-1]
    if X.ndim != 2 or X.shape[1] != model.layer_dims[0] or y.shape != (X.shape[0],):
        raise DimensionError("training data does not match the model input size")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelRangeError(f"labels must lie in [0, {n_classes - 1}]")
    out = model.copy()
    if epochs <= 0 or X.shape[0] == 0:
        return out
    optimizer = optimizer or SGDMomentum(cfg.lr, cfg.momentum)
    params = out.parameters()
    for e in range(epochs):
        order = epoch_rng(cfg.seed, client_id, epoch_offset + e).permutation(X.shape[0])
        for start in range(0, X.shape[0], cfg.batch):
            idx = order[start : start + cfg.batch]
            _, grads = loss_and_grads(out, X[idx], y[idx])
            optimizer.step(params, grads)
    return out


def fed_average(models, sample_counts):
    """Sample-count weighted parameter average."""
    models = list(models)
    counts = np.asarray(sample_counts, dtype=np.float64)
    if not models or counts.shape != (len(models),) or np.any(counts < 0) or counts.sum() <= 0:
        raise ValueError("need one positive sample count per model")
    dims = models[0].layer_dims
    if any(m.layer_dims != dims for m in models):
        raise DimensionError("cannot average models with different architectures")
    w = counts / counts.sum()
    weights = [sum(wi * m.weights[layer] for wi, m in zip(w, models)) for layer in range(len(dims) - 1)]
    biases = [sum(wi * m.biases[layer] for wi, m in zip(w, models)) for layer in range(len(dims) - 1)]
    return ModelState(dims, weights, biases)


@dataclass
class FederationResult:
    accuracy_per_round: list
    model: ModelState
    sample_counts: list = field(default_factory=list)


def run_federation(partitions, test, cfg, n_classes):
    """FedAvg over ``partitions`` (a list of ``(X, y)``), scoring on ``test`` each round."""
    partitions = [(np.asarray(X, dtype=np.float64), np.asarray(y)) for X, y in partitions]
    if not partitions:
        raise InvalidConfigError("need at least one client partition")
    if any(X.shape[0] == 0 for X, _ in partitions):
        raise InvalidConfigError("client partitions must not be empty")
    X_test, y_test = test
    n_features = partitions[0][0].shape[1]
    model = init_model(n_features, n_classes, cfg.hidden, np.random.default_rng(cfg.seed))
    optimizers = [SGDMomentum(cfg.lr, cfg.momentum) for _ in partitions]
    counts = [X.shape[0] for X, _ in partitions]
    history = []
    for r in range(cfg.rounds):
        local = [
            train_local(model, X, y, cfg.local_epochs, cfg, client_id=c, epoch_offset=r * cfg.local_epochs, optimizer=optimizers[c])
            for c, (X, y) in enumerate(partitions)
        ]
        model = fed_average(local, counts)
        history.append(accuracy(model, X_test, y_test))
        logger.debug("round %d accuracy %.4f", r + 1, history[-1])
    return FederationResult(history, model, counts)


def run_centralized(X, y, test, cfg, n_classes):
    """Train one model on all data, scoring after every ``local_epochs`` epochs."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    X_test, y_test = test
    model = init_model(X.shape[1], n_classes, cfg.hidden, np.random.default_rng(cfg.seed))
    opt = SGDMomentum(cfg.lr, cfg.momentum)
    history = []
    for r in range(cfg.rounds):
        model = train_local(model, X, y, cfg.local_epochs, cfg, epoch_offset=r * cfg.local_epochs, optimizer=opt)
        history.append(accuracy(model, X_test, y_test))
    return FederationResult(history, model, [X.shape[0]])


def encode_labels(y):
    classes, codes = np.unique(np.asarray(y), return_inverse=True)
    return classes, codes.astype(np.int64)


def split_partitions(n_rows, parts):
    """Contiguous, near-equal index blocks."""
    if parts < 1 or parts > n_rows:
        raise InvalidConfigError(f"cannot split {n_rows} rows into {parts} partitions")
    return np.array_split(np.arange(n_rows), parts)


def federated_experiment(X, y, cfg, perturb_cfg=None):
    """Paired federated vs. centralized run on the same data.

    Rows are shuffled (seeded) and dealt into ``cfg.clients`` equal blocks.
    When ``perturb_cfg`` is given every block is perturbed through an
    in-process protocol session first. Each client keeps ``train_fraction``
    of its rows for training; the held-out rows of all clients form the
    shared test set used for both models.
    """
    from .protocol import run_simulated

    X = check_array(X, dtype=np.float64)
    classes, codes = encode_labels(y)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(3,)))
    order = rng.permutation(X.shape[0])
    blocks = [(X[order[idx]], codes[order[idx]]) for idx in split_partitions(X.shape[0], cfg.clients)]
    phi = None
    if perturb_cfg is not None:
        params, outs, _ = run_simulated([b[0] for b in blocks], perturb_cfg, labels=[b[1] for b in blocks])
        blocks = [(o.data, o.labels) for o in outs]
        phi = params.phi

    train, test_X, test_y = [], [], []
    for Xb, yb in blocks:
        idx = rng.permutation(Xb.shape[0])
        cut = int(round(cfg.train_fraction * Xb.shape[0]))
        train.append((Xb[idx[:cut]], yb[idx[:cut]]))
        test_X.append(Xb[idx[cut:]])
        test_y.append(yb[idx[cut:]])
    test = (np.vstack(test_X), np.concatenate(test_y))

    fed = run_federation(train, test, cfg, len(classes))
    ctr = run_centralized(np.vstack([t[0] for t in train]), np.concatenate([t[1] for t in train]), test, cfg, len(classes))
    return {
        "clients": cfg.clients,
        "rounds": cfg.rounds,
        "perturbed": perturb_cfg is not None,
        "phi": phi,
        "fed_accuracy": fed.accuracy_per_round,
        "ctr_accuracy": ctr.accuracy_per_round,
        "final_fed_accuracy": fed.accuracy_per_round[-1],
        "final_ctr_accuracy": ctr.accuracy_per_round[-1],
        "abs_difference": abs(fed.accuracy_per_round[-1] - ctr.accuracy_per_round[-1]),
    }


def knn_utility(X_orig, y_orig, X_pert, y_pert, k=3, train_fraction=0.75, seed=0):
    """k-NN test accuracy on original data and on perturbed data, each trained and tested on itself."""
    scores = []
    for X, y in ((X_orig, y_orig), (X_pert, y_pert)):
        X, y = check_X_y(X, y, dtype=np.float64)
        order = np.random.default_rng(seed).permutation(X.shape[0])
        cut = int(round(train_fraction * X.shape[0]))
        if k > cut:
            raise InvalidConfigError(f"k={k} exceeds the {cut} training rows")
        tr, te = order[:cut], order[cut:]
        clf = KNeighborsClassifier(n_neighbors=k).fit(X[tr], y[tr])
        scores.append(float(clf.score(X[te], y[te])))
    return tuple(scores)


class NumpyMLPClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper around :func:`train_local` for single-site training."""

    def __init__(self, hidden_layer_sizes=(16, 16), learning_rate_init=1e-4, momentum=0.5, batch_size=64, max_iter=60, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate_init = learning_rate_init
        self.momentum = momentum
        self.batch_size = batch_size
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = encode_labels(y)
        self.n_features_in_ = X.shape[1]
        cfg = FedConfig(
            clients=1,
            rounds=1,
            local_epochs=max(int(self.max_iter), 1),
            batch=self.batch_size,
            lr=self.learning_rate_init,
            momentum=self.momentum,
            hidden=self.hidden_layer_sizes,
            seed=self.random_state or 0,
        )
        model = init_model(X.shape[1], len(self.classes_), cfg.hidden, np.random.default_rng(cfg.seed))
        self.model_ = train_local(model, X, codes, cfg.local_epochs, cfg)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        return predict_proba(self.model_, check_array(X, dtype=np.float64))

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
