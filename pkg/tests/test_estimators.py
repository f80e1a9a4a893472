import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from tpower_uap.attack import AttackConfig, tpower_attack
from tpower_uap.data import generate_synthetic
from tpower_uap.estimators import MedianFilter, NetworkClassifier, SGDLayerMaxAttack, SVAttack, TPowerAttack
from tpower_uap.evaluation import median_filter
from tpower_uap.exceptions import ShapeError

ARCH = [
    {"kind": "conv2d", "name": "conv1", "filters": 4, "kernel": 3, "padding": 1},
    {"kind": "relu", "name": "relu1"},
    {"kind": "maxpool", "name": "pool1", "window": 2},
    {"kind": "flatten", "name": "flatten"},
    {"kind": "dense", "name": "logits"},
]


@pytest.fixture(scope="module")
def fitted():
    ds = generate_synthetic(3, (10, 10, 3), 12, seed=0)
    clf = NetworkClassifier(arch=ARCH, epochs=3, random_state=1).fit(ds.samples, ds.labels)
    return ds, clf


def test_get_params_and_clone():
    att = TPowerAttack(layer="relu1", q=2.0, damage=0.1, n_steps=7)
    params = att.get_params()
    assert params["layer"] == "relu1" and params["n_steps"] == 7 and params["p"] == math.inf
    twin = clone(att)
    assert twin.get_params() == params
    att.set_params(q=3.0)
    assert att.q == 3.0 and twin.q == 2.0
    assert clone(NetworkClassifier(epochs=2)).get_params()["epochs"] == 2


def test_classifier_fit_predict(fitted):
    ds, clf = fitted
    assert clf.predict(ds.samples).shape == (len(ds),)
    assert 0 <= clf.score(ds.samples, ds.labels) <= 1
    assert clf.decision_function(ds.samples[:2]).shape == (2, 3)
    np.testing.assert_array_equal(clf.classes_, [0, 1, 2])


def test_classifier_is_deterministic(fitted):
    ds, clf = fitted
    again = clone(clf).fit(ds.samples, ds.labels)
    assert again.model_.fingerprint() == clf.model_.fingerprint()


def test_classifier_validation():
    with pytest.raises(NotFittedError):
        NetworkClassifier().predict(np.zeros((1, 4, 4, 1)))
    with pytest.raises(ShapeError):
        NetworkClassifier().fit(np.zeros((3, 4, 4, 1)), [0, 1])
    with pytest.raises(ValueError):
        NetworkClassifier().fit(np.full((2, 4, 4, 1), np.nan), [0, 1])


def test_tpower_matches_functional_api(fitted):
    ds, clf = fitted
    att = TPowerAttack(clf, layer="logits", damage=0.1, n_steps=6, reduction_steps=3).fit(ds.samples)
    cfg = AttackConfig(layer="logits", top_k=10, q=1.0, p=math.inf, n_steps=6, reduction_steps=3)
    ref = tpower_attack(clf.model_, ds.samples, cfg)
    assert att.eps_.tobytes() == ref.eps.tobytes()
    assert len(att.support_) == 10
    out = att.transform(ds.samples)
    assert out.shape == ds.samples.shape and out.min() >= 0 and out.max() <= 1
    assert att.score(ds.samples) == att.fooling_rate(ds.samples)


def test_attack_needs_model_and_fit(fitted):
    ds, _ = fitted
    with pytest.raises(ValueError):
        TPowerAttack().fit(ds.samples)
    with pytest.raises(NotFittedError):
        TPowerAttack().transform(ds.samples)


def test_dense_baselines(fitted):
    ds, clf = fitted
    sv = SVAttack(clf, layer="relu1", n_steps=5).fit(ds.samples)
    assert np.abs(sv.eps_).max() == pytest.approx(1.0)
    sgd = SGDLayerMaxAttack(clf, layer="relu1", steps=3).fit(ds.samples)
    assert np.abs(sgd.eps_).max() <= 1 + 1e-12
    assert 0 <= sgd.attack_success_rate(ds.samples, ds.labels) <= 1


def test_median_filter_transformer():
    X = np.random.default_rng(0).random((2, 6, 6, 3))
    mf = MedianFilter(window=3)
    np.testing.assert_array_equal(mf.fit_transform(X), median_filter(X, 3))
    assert clone(mf).get_params() == {"window": 3}


def test_pipeline_attack_then_defend(fitted):
    ds, clf = fitted
    att = TPowerAttack(clf, layer="logits", n_steps=4, reduction_steps=2).fit(ds.samples)
    pipe = Pipeline([("attack", att), ("defend", MedianFilter(3)), ("clf", clf)])
    expected = clf.predict(median_filter(att.transform(ds.samples), 3))
    np.testing.assert_array_equal(pipe.predict(ds.samples), expected)
