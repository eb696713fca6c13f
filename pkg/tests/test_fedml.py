import numpy as np
import pytest

from distpab.exceptions import InvalidConfigError, LabelRangeError
from distpab.fedml import (
    FedConfig,
    NumpyMLPClassifier,
    accuracy,
    fed_average,
    federated_experiment,
    init_model,
    knn_utility,
    loss_and_grads,
    run_centralized,
    run_federation,
    train_local,
)

from conftest import blobs


def _model(n_features=3, n_classes=3, hidden=(5, 4), seed=0):
    return init_model(n_features, n_classes, hidden, np.random.default_rng(seed))


def test_zero_epochs_is_identity():
    X, y = blobs(0, m=60, n=3)
    model = _model()
    out = train_local(model, X, y, 0, FedConfig())
    for a, b in zip(model.parameters(), out.parameters()):
        np.testing.assert_array_equal(a, b)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(7, 3))
    y = rng.integers(0, 3, size=7)
    model = _model(seed=2)
    _, grads = loss_and_grads(model, X, y)
    h = 1e-5
    for p, g in zip(model.parameters(), grads):
        for _ in range(5):
            idx = tuple(rng.integers(0, s) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            up, _ = loss_and_grads(model, X, y)
            p[idx] = old - h
            down, _ = loss_and_grads(model, X, y)
            p[idx] = old
            numeric = (up - down) / (2 * h)
            assert abs(numeric - g[idx]) <= 1e-4 * max(abs(numeric), abs(g[idx])) + 1e-8


def test_separable_blobs_learned():
    X, y = blobs(0, m=400, n=4, std=0.5)
    cfg = FedConfig(lr=0.05, batch=32)
    model = train_local(_model(4, 3, (16,)), X, y, 40, cfg)
    assert accuracy(model, X, y) > 0.95


def test_labels_out_of_range():
    X, y = blobs(0, m=30, n=3)
    with pytest.raises(LabelRangeError):
        train_local(_model(), X, y + 5, 1, FedConfig())


def test_fed_average_cases():
    a, b = _model(seed=0), _model(seed=1)
    same = fed_average([a, a.copy()], [5, 9])
    for p, q in zip(same.parameters(), a.parameters()):
        np.testing.assert_allclose(p, q, rtol=0, atol=1e-15)
    even = fed_average([a, b], [1, 1])
    for p, pa, pb in zip(even.parameters(), a.parameters(), b.parameters()):
        np.testing.assert_allclose(p, (pa + pb) / 2)
    skew = fed_average([a, b], [3, 1])
    for p, pa, pb in zip(skew.parameters(), a.parameters(), b.parameters()):
        np.testing.assert_allclose(p, 0.75 * pa + 0.25 * pb)
    with pytest.raises(ValueError):
        fed_average([a, b], [0, 0])


def test_single_client_equals_centralized():
    X, y = blobs(3, m=200, n=4)
    cfg = FedConfig(clients=1, rounds=5, lr=0.01)
    test = (X[:50], y[:50])
    fed = run_federation([(X, y)], test, cfg, 3)
    ctr = run_centralized(X, y, test, cfg, 3)
    assert fed.accuracy_per_round == ctr.accuracy_per_round
    for p, q in zip(fed.model.parameters(), ctr.model.parameters()):
        np.testing.assert_array_equal(p, q)


def test_experiment_is_deterministic():
    X, y = blobs(0, m=200, n=4)
    cfg = FedConfig(rounds=3, lr=0.01)
    assert federated_experiment(X, y, cfg) == federated_experiment(X, y, cfg)


def test_config_validation():
    with pytest.raises(InvalidConfigError):
        FedConfig(rounds=0)
    with pytest.raises(InvalidConfigError):
        FedConfig(momentum=1.0)
    with pytest.raises(InvalidConfigError):
        FedConfig(lr=0)


def test_knn_utility_identity_and_noise():
    X, y = blobs(0, m=300, n=4, std=1.0)
    orig, same = knn_utility(X, y, X, y)
    assert orig == same
    _, noisy = knn_utility(X, y, np.random.default_rng(0).normal(size=X.shape), y)
    assert noisy < orig - 0.3


def test_mlp_estimator():
    X, y = blobs(1, m=300, n=4, std=0.7)
    labels = np.array(["a", "b", "c"])[y]
    clf = NumpyMLPClassifier(learning_rate_init=0.05, max_iter=30).fit(X, labels)
    assert clf.score(X, labels) > 0.95
    assert set(clf.predict(X)) <= {"a", "b", "c"}


@pytest.mark.slow
def test_more_clients_converge_no_faster():
    X, y = blobs(0, m=600, n=6)
    few = federated_experiment(X, y, FedConfig(clients=2, rounds=10, lr=0.003))
    many = federated_experiment(X, y, FedConfig(clients=8, rounds=10, lr=0.003))
    # with fixed local epochs, more clients means fewer local steps each round
    assert np.mean(many["fed_accuracy"][:5]) <= np.mean(few["fed_accuracy"][:5]) + 0.02
