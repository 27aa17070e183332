import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from codeprompt.backbone import parameter_hashes
from codeprompt.estimator import PromptTuningClassifier, check_labels, check_pairs


def _xy(examples):
    return [ex.pair for ex in examples], np.array([ex.label for ex in examples])


def test_get_params_and_clone(tiny_backbone):
    clf = PromptTuningClassifier(backbone=tiny_backbone, prompt_count=4, epochs=2)
    params = clf.get_params()
    assert params["prompt_count"] == 4 and params["peak_lr"] == 3e-5
    twin = clone(clf)
    assert twin.get_params()["prompt_count"] == 4
    clf.set_params(placement="head")
    assert clf.placement == "head"


def test_fit_predict(tiny_backbone, tiny_examples):
    train, val, test = tiny_examples
    before = parameter_hashes(tiny_backbone)
    X, y = _xy(train)
    clf = PromptTuningClassifier(backbone=tiny_backbone, prompt_count=4, epochs=2, peak_lr=1e-2)
    clf.fit(X, y, *_xy(val))
    Xt, yt = _xy(test)
    proba = clf.predict_proba(Xt)
    assert proba.shape == (len(Xt), 2) and np.allclose(proba.sum(axis=1), 1)
    pred = clf.predict(Xt)
    assert set(pred) <= {0, 1}
    gap = clf.decision_function(Xt)
    assert np.array_equal(gap > 0, pred == 1)
    assert 0.0 <= clf.score(Xt, yt) <= 1.0
    assert len(clf.history_) == 2 and list(clf.classes_) == [0, 1]
    # the backbone passed in is never modified
    assert parameter_hashes(tiny_backbone) == before


def test_warm_start_keeps_training(tiny_backbone, tiny_examples):
    X, y = _xy(tiny_examples[0])
    clf = PromptTuningClassifier(backbone=tiny_backbone, prompt_count=2, epochs=2, peak_lr=1e-2).fit(X, y)
    model = clf.model_
    first = clf.parameter_hashes()
    clf.set_params(warm_start=True).fit(X, y)
    assert clf.model_ is model and clf.parameter_hashes() != first


def test_prompt_init_words(tiny_backbone, tiny_examples):
    X, y = _xy(tiny_examples[0])
    with pytest.raises(ValueError):
        PromptTuningClassifier(backbone=tiny_backbone, prompt_count=2, prompt_init_words=["yes"]).fit(X, y)
    clf = PromptTuningClassifier(backbone=tiny_backbone, prompt_count=2, epochs=1, prompt_init_words=["yes", "no"])
    assert clf.fit(X, y).model_.prompts.init_scheme == "copy_of_word_embeddings"


def test_unfitted_and_missing_backbone(tiny_examples):
    X, y = _xy(tiny_examples[0])
    with pytest.raises(NotFittedError):
        PromptTuningClassifier().predict(X)
    with pytest.raises(ValueError):
        PromptTuningClassifier().fit(X, y)


def test_input_validation():
    assert check_pairs(np.array([["a", "b"], ["c", "d"]])) == [("a", "b"), ("c", "d")]
    with pytest.raises(ValueError):
        check_pairs(np.array([["a", "b", "c"]]))
    with pytest.raises(ValueError):
        check_pairs([("a", "")])
    with pytest.raises(ValueError):
        check_pairs([])
    with pytest.raises(ValueError):
        check_labels([0, 2], 2)
    with pytest.raises(ValueError):
        check_labels([0, 1, 1], 2)
