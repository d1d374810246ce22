"""Similarity scoring and the symmetric contrastive training objective.

Each batch entry (i, j) holds the cosine between text i and the video j
embedding pooled *conditioned on text i*, so the full B x B matrix takes
B^2 pooling forwards; it is not a product of two B x D factors. The loss
is the mean cross entropy of the scaled similarity rows (text-to-video)
plus columns (video-to-text), diagonal entries being the positives.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .numerics import softmax_row_fwd
from .validation import as_vector

MAX_LOGIT_SCALE = 100.0


@dataclass
class LogitScale:
    """Learnable multiplier on cosine similarities, stored in log space.

    The scale is kept in (0, max_lambda] by projecting log_lambda after
    each optimizer step, so the loss itself stays smooth.
    """

    log_lambda: np.ndarray
    max_lambda: float = MAX_LOGIT_SCALE

    def __post_init__(self):
        arr = np.asarray(self.log_lambda)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.log_lambda = arr.reshape(())

    @staticmethod
    def initial(value=MAX_LOGIT_SCALE):
        """Default initialization: the backbone's converged scale (capped)."""
        if not 0.0 < value <= MAX_LOGIT_SCALE:
            raise ParameterError(f"logit scale must be in (0, {MAX_LOGIT_SCALE}], got {value}")
        return LogitScale(np.float32(math.log(value)))

    @property
    def value(self):
        return float(np.exp(self.log_lambda))

    def clamp_(self):
        cap = np.asarray(math.log(self.max_lambda), dtype=self.log_lambda.dtype)
        if self.log_lambda > cap:
            self.log_lambda = cap.reshape(())


def cosine_sim(a, b):
    """a . b / (|a||b|), rejecting zero-norm inputs."""
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.shape != b.shape:
        raise ShapeError("cosine operands differ in length", a.shape, b.shape)
    na = math.sqrt(float(np.einsum("i,i->", a, a)))
    nb = math.sqrt(float(np.einsum("i,i->", b, b)))
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity undefined for zero-norm vectors")
    return float(np.einsum("i,i->", a, b)) / (na * nb)


def cosine_fwd(a, b):
    """Cosine with a cache for the backward pass. Works on 1-D arrays."""
    na = np.sqrt(np.einsum("i,i->", a, a))
    nb = np.sqrt(np.einsum("i,i->", b, b))
    if na == 0.0 or nb == 0.0:
        raise NumericError("cosine similarity undefined for zero-norm vectors")
    dot = np.einsum("i,i->", a, b)
    s = dot / (na * nb)
    return s, {"a": a, "b": b, "na": na, "nb": nb, "s": s}


def cosine_bwd(cache, ds):
    """Gradients of s = cos(a, b) w.r.t. both inputs."""
    a, b, na, nb, s = cache["a"], cache["b"], cache["na"], cache["nb"], cache["s"]
    da = ds * (b / (na * nb) - s * a / (na * na))
    db = ds * (a / (na * nb) - s * b / (nb * nb))
    return da, db


def batch_similarity(conditioned, texts):
    """Similarity matrix from precomputed conditioned embeddings.

    conditioned[i][j] is the video-j embedding pooled under text i,
    shape (B, B, D); texts is (B, D). Returns (sims, caches) where
    sims[i, j] = cos(texts[i], conditioned[i, j]).
    """
    conditioned = np.asarray(conditioned)
    texts = np.asarray(texts)
    if conditioned.ndim != 3 or texts.ndim != 2:
        raise ShapeError("batch_similarity expects (B,B,D) and (B,D)",
                         conditioned.shape, texts.shape)
    b = texts.shape[0]
    if conditioned.shape[0] != b or conditioned.shape[1] != b or conditioned.shape[2] != texts.shape[1]:
        raise ShapeError("conditioned/text counts disagree", conditioned.shape, texts.shape)
    sims = np.zeros((b, b), dtype=conditioned.dtype)
    caches = [[None] * b for _ in range(b)]
    for i in range(b):
        for j in range(b):
            s, cache = cosine_fwd(texts[i], conditioned[i, j])
            sims[i, j] = s
            caches[i][j] = cache
    return sims, caches


def batch_similarity_bwd(caches, d_sims):
    """d(conditioned) for batch_similarity; text embeddings are frozen."""
    b = len(caches)
    d_conditioned = None
    for i in range(b):
        for j in range(b):
            _, db = cosine_bwd(caches[i][j], d_sims[i, j])
            if d_conditioned is None:
                d_conditioned = np.zeros((b, b, db.shape[0]), dtype=db.dtype)
            d_conditioned[i, j] = db
    return d_conditioned


def symmetric_ce_loss(sims, scale, tape=None):
    """Mean cross entropy over rows (t2v) plus columns (v2t) of scale * sims.

    Returns the scalar loss; gradients flow to sims and to log_lambda
    through symmetric_ce_loss_bwd.
    """
    sims = np.asarray(sims)
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ShapeError("loss expects a square similarity matrix", sims.shape)
    b = sims.shape[0]
    lam = np.exp(scale.log_lambda).astype(sims.dtype)
    logits = sims * lam
    p_row = softmax_row_fwd(logits)
    p_col = softmax_row_fwd(logits.T)
    diag = np.arange(b)
    # log softmax evaluated only at the diagonal, in the same dtype as sims
    shifted_r = logits - logits.max(axis=1, keepdims=True)
    lse_r = np.log(np.exp(shifted_r).sum(axis=1))
    shifted_c = logits.T - logits.T.max(axis=1, keepdims=True)
    lse_c = np.log(np.exp(shifted_c).sum(axis=1))
    loss_t2v = -(shifted_r[diag, diag] - lse_r).mean()
    loss_v2t = -(shifted_c[diag, diag] - lse_c).mean()
    loss = float(loss_t2v + loss_v2t)
    if not math.isfinite(loss):
        raise NumericError("contrastive loss is non-finite")
    if tape is not None:
        tape.push("symmetric_ce", {
            "sims": sims, "lam": lam, "p_row": p_row, "p_col": p_col,
        })
    return loss


def symmetric_ce_loss_bwd(tape):
    """Returns (d_sims, d_log_lambda). Consumes the tape."""
    cache = tape.pop("symmetric_ce")
    tape.finish()
    sims, lam = cache["sims"], cache["lam"]
    p_row, p_col = cache["p_row"], cache["p_col"]
    b = sims.shape[0]
    eye = np.eye(b, dtype=sims.dtype)
    d_logits = (p_row - eye) / b + (p_col - eye).T / b
    d_sims = d_logits * lam
    d_lambda = np.einsum("ij,ij->", d_logits, sims)
    d_log_lambda = np.asarray(d_lambda * lam, dtype=sims.dtype).reshape(())
    return d_sims, d_log_lambda
