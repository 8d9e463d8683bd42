import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import MinMaxScaler
from sklearn.utils.estimator_checks import parametrize_with_checks

from robustprop.data import gen_two_moons
from robustprop.estimator import RobustMLPClassifier
from robustprop.training import TrainingError


@parametrize_with_checks([RobustMLPClassifier(epochs=100, learning_rate=1e-2)])
def test_sklearn_compatible(estimator, check):
    check(estimator)


@pytest.fixture(scope="module")
def moons():
    return gen_two_moons(200, 0.05, seed=0)


def test_fit_predict_moons(moons):
    clf = RobustMLPClassifier(hidden=(32,), epochs=200, batch_size=32, learning_rate=3e-2)
    clf.fit(moons.inputs, moons.labels)
    assert clf.score(moons.inputs, moons.labels) > 0.95
    proba = clf.predict_proba(moons.inputs)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    margin = clf.decision_function(moons.inputs)
    assert margin.shape == (200,)
    np.testing.assert_array_equal(clf.predict(moons.inputs), (margin > 0).astype(int))
    assert len(clf.history_.epochs) == 200


def test_string_labels_and_multiclass():
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(c, 0.03, size=(30, 2)) for c in (0.2, 0.5, 0.8)])
    y = np.repeat(["a", "b", "c"], 30)
    clf = RobustMLPClassifier(epochs=150, batch_size=16, learning_rate=3e-2).fit(X, y)
    assert set(clf.predict(X)) <= {"a", "b", "c"}
    assert clf.decision_function(X).shape == (90, 3)
    assert clf.score(X, y) > 0.9


@pytest.mark.parametrize("mode", ["data_aug_ru", "adversarial", "constraint_sr",
                                  "constraint_scr", "constraint_lr"])
def test_modes_and_clone(moons, mode):
    clf = RobustMLPClassifier(mode=mode, epochs=3, learning_rate=1e-2, delta=1.0, lipschitz=5.0,
                              attack_steps=3, random_state=4)
    a = clf.fit(moons.inputs, moons.labels).predict_proba(moons.inputs)
    b = clone(clf).fit(moons.inputs, moons.labels).predict_proba(moons.inputs)
    np.testing.assert_array_equal(a, b)


def test_constraint_cr_refused(moons):
    with pytest.raises(TrainingError, match="argmax"):
        RobustMLPClassifier(mode="constraint_cr").fit(moons.inputs, moons.labels)


def test_in_pipeline_cross_validation(moons):
    pipe = make_pipeline(MinMaxScaler(), RobustMLPClassifier(hidden=(16,), epochs=60,
                                                             batch_size=16, learning_rate=3e-2))
    scores = cross_val_score(pipe, moons.inputs, moons.labels, cv=3)
    assert scores.mean() > 0.8
