"""Scikit-learn style facade over training and retrieval, so the pooling
head composes with ecosystem tooling (get_params/set_params, clone)."""

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .corpus import load_checkpoint, save_checkpoint
from .retrieval import AttentionPoolMethod, evaluate, rank_t2v, rank_v2t
from .trainer import TrainConfig, train


class AttentionPoolRetriever(BaseEstimator):
    """Trainable text-conditioned retriever over precomputed embeddings.

    fit() trains the attention pooling head and the logit scale on a
    RetrievalCorpus; the fitted state lives in head_, logit_scale_ and
    history_. Constructor arguments mirror TrainConfig.
    """

    def __init__(self, epochs=5, batch_size=32, learning_rate=1e-5,
                 weight_decay=0.2, dropout_rate=0.3, frames_per_video=12,
                 seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.dropout_rate = dropout_rate
        self.frames_per_video = frames_per_video
        self.seed = seed

    def _config(self):
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs,
            lr_head=self.learning_rate, weight_decay=self.weight_decay,
            dropout_rate=self.dropout_rate, seed=self.seed,
            frames_per_video=self.frames_per_video,
        )

    def fit(self, corpus, val_corpus=None):
        result = train(corpus, self._config(), val_corpus=val_corpus)
        self.head_ = result.head
        self.logit_scale_ = result.scale
        self.history_ = result.log
        self.validation_history_ = result.val_history
        return self

    def _check_fitted(self):
        if not hasattr(self, "head_"):
            raise NotFittedError("call fit() or load() before ranking")

    def rank(self, text_embedding, videos):
        """Ordered (video_id, score) list for one query text."""
        self._check_fitted()
        return rank_t2v(AttentionPoolMethod(self.head_), text_embedding, videos)

    def rank_texts(self, video_frames, texts):
        self._check_fitted()
        return rank_v2t(AttentionPoolMethod(self.head_), video_frames, texts)

    def evaluate(self, corpus, direction="t2v", threads=1):
        self._check_fitted()
        return evaluate(AttentionPoolMethod(self.head_), corpus, direction,
                        threads=threads)

    def save(self, path):
        self._check_fitted()
        save_checkpoint(self.head_, self.logit_scale_, path)
        return self

    def load(self, path):
        """Populate the fitted state from a checkpoint file."""
        self.head_, self.logit_scale_ = load_checkpoint(path)
        self.history_ = []
        self.validation_history_ = []
        return self
