"""The sklearn-style facade: params round-trip, fit/rank/evaluate, and
checkpoint save/load."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from framepool.estimator import AttentionPoolRetriever
from framepool.synthetic import make_planted_corpus


def fitted_retriever():
    corpus = make_planted_corpus(n_pairs=8, d=10, relevant_frames=2,
                                 distractor_frames=2, noise=0.08, seed=5,
                                 distractors="random")
    model = AttentionPoolRetriever(epochs=2, batch_size=4, learning_rate=1e-3,
                                   seed=1)
    return model.fit(corpus), corpus


def test_get_set_params_roundtrip():
    model = AttentionPoolRetriever(epochs=7, batch_size=16, seed=3)
    params = model.get_params()
    assert params["epochs"] == 7 and params["batch_size"] == 16
    cloned = clone(model)
    assert cloned.get_params() == params


def test_unfitted_raises():
    model = AttentionPoolRetriever()
    with pytest.raises(NotFittedError):
        model.rank(np.ones(4, dtype=np.float32), {})


def test_fit_sets_state_and_ranks():
    model, corpus = fitted_retriever()
    assert hasattr(model, "head_") and hasattr(model, "logit_scale_")
    assert model.history_
    tid, vid = corpus.pairs[0]
    ordering = model.rank(corpus.texts[tid], corpus.videos)
    assert len(ordering) == len(corpus.videos)
    report = model.evaluate(corpus, "t2v")
    assert 0.0 <= report.recall_at[1] <= 1.0


def test_save_load_same_rankings(tmp_path):
    model, corpus = fitted_retriever()
    model.save(tmp_path / "model.xpc")
    loaded = AttentionPoolRetriever().load(tmp_path / "model.xpc")
    tid, _ = corpus.pairs[1]
    assert model.rank(corpus.texts[tid], corpus.videos) == \
        loaded.rank(corpus.texts[tid], corpus.videos)
