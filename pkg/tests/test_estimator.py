"""sklearn estimator facade: params protocol, fit/predict, probabilities."""

import numpy as np
import pytest
from sklearn.base import clone

from mvfa import MVFeaAugClassifier
from mvfa.data import SyntheticSpec, render_split


def tiny_dataset():
    spec = SyntheticSpec(num_classes=2, image_side=16, train_per_class=8,
                         val_per_class=2, seed=0)
    images, labels = render_split(spec, "train")
    return images.astype(np.float64) / 255.0, labels


def tiny_clf(**kwargs):
    base = dict(mode="MFA", k=3, region_sizes=(3,), batch_size=4,
                iterations=2, grid_side=2, stages=((4, 3, 2), (4, 3, 2)),
                input_side=16, lr=1e-3)
    base.update(kwargs)
    return MVFeaAugClassifier(**base)


def test_get_set_params_and_clone():
    clf = tiny_clf()
    params = clf.get_params()
    assert params["mode"] == "MFA" and params["k"] == 3
    clf.set_params(k=5, mode="GAP")
    assert clf.k == 5 and clf.mode == "GAP"
    copy = clone(clf)
    assert copy.get_params() == clf.get_params()


def test_fit_predict_shapes_and_labels():
    X, y = tiny_dataset()
    labels = np.where(y == 0, "cat", "dog")  # arbitrary label values
    clf = tiny_clf().fit(X, labels)
    assert sorted(clf.classes_) == ["cat", "dog"]
    pred = clf.predict(X[:5])
    assert pred.shape == (5,)
    assert set(pred) <= {"cat", "dog"}
    proba = clf.predict_proba(X[:5])
    assert proba.shape == (5, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert clf.decision_function(X[:3]).shape == (3, 2)


def test_fit_is_deterministic():
    X, y = tiny_dataset()
    a = tiny_clf().fit(X, y)
    b = tiny_clf().fit(X, y)
    np.testing.assert_array_equal(a.decision_function(X[:4]),
                                  b.decision_function(X[:4]))


def test_input_validation():
    X, y = tiny_dataset()
    clf = tiny_clf()
    with pytest.raises(ValueError):
        clf.fit(X[:, :8], y)  # wrong image size
    with pytest.raises(ValueError):
        clf.fit(X, y[:-1])
    with pytest.raises(ValueError):
        clf.fit(X, np.zeros(len(y)))  # single class
    from mvfa.errors import MvfaError
    with pytest.raises(MvfaError):
        tiny_clf().predict(X[:2])  # not fitted
