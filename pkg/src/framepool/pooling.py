"""Temporal aggregation of per-frame embeddings into one video embedding.

Three strategies: text-agnostic mean pooling, text-conditioned top-k frame
selection by cosine similarity, and a learned single-query cross-attention
head (query projected from the text, keys/values from the frames) with an
output projection and a residual FC block. The attention head carries its
own hand-rolled backward pass so it can be trained without an autodiff
framework and checked against finite differences.
"""

import math
import threading
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .numerics import (
    LayerNormParams,
    dropout_bwd,
    dropout_fwd,
    layer_norm_bwd,
    layer_norm_fwd,
    linear_bwd,
    linear_fwd,
    matmul,
    softmax_row_bwd,
    softmax_row_fwd,
)
from .validation import as_matrix, as_vector

WEIGHT_NAMES = ("w_q", "w_k", "w_v", "w_o", "fc_w")
LN_NAMES = ("ln_text", "ln_frames", "ln_attn_out", "ln_final")


@dataclass
class AttentionTrace:
    """Attention probabilities over a video's frames for one query."""

    weights: np.ndarray
    frame_ids: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.frame_ids = np.asarray(self.frame_ids)


@dataclass
class AttentionPoolHead:
    """All learnable parameters of the text-conditioned attention pool.

    Projections are (d, d_p) for query/key/value and (d_p, d) for the
    output; the key and value paths share one frame layer norm. The FC
    block is a single d->d linear followed by dropout, layer-normalized
    and added back to its input.
    """

    w_q: np.ndarray
    b_q: np.ndarray
    w_k: np.ndarray
    b_k: np.ndarray
    w_v: np.ndarray
    b_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln_text: LayerNormParams
    ln_frames: LayerNormParams
    ln_attn_out: LayerNormParams
    ln_final: LayerNormParams
    fc_w: np.ndarray
    fc_b: np.ndarray
    dropout_rate: float
    d: int
    d_p: int

    def tensors(self):
        """Ordered name -> array view of every parameter tensor."""
        out = {}
        for name in ("w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o"):
            out[name] = getattr(self, name)
        for name in LN_NAMES:
            ln = getattr(self, name)
            out[f"{name}.gain"] = ln.gain
            out[f"{name}.bias"] = ln.bias
        out["fc_w"] = self.fc_w
        out["fc_b"] = self.fc_b
        return out

    def set_tensor(self, name, value):
        if "." in name:
            ln_name, attr = name.split(".", 1)
            setattr(getattr(self, ln_name), attr, value)
        else:
            setattr(self, name, value)

    def zero_grads(self):
        return {name: np.zeros_like(arr) for name, arr in self.tensors().items()}

    def astype(self, dtype):
        return AttentionPoolHead(
            w_q=self.w_q.astype(dtype), b_q=self.b_q.astype(dtype),
            w_k=self.w_k.astype(dtype), b_k=self.b_k.astype(dtype),
            w_v=self.w_v.astype(dtype), b_v=self.b_v.astype(dtype),
            w_o=self.w_o.astype(dtype), b_o=self.b_o.astype(dtype),
            ln_text=self.ln_text.astype(dtype),
            ln_frames=self.ln_frames.astype(dtype),
            ln_attn_out=self.ln_attn_out.astype(dtype),
            ln_final=self.ln_final.astype(dtype),
            fc_w=self.fc_w.astype(dtype), fc_b=self.fc_b.astype(dtype),
            dropout_rate=self.dropout_rate, d=self.d, d_p=self.d_p,
        )


class ForwardCounter:
    """Thread-safe counter of attention-head forward passes."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self):
        with self._lock:
            self._count += 1

    def reset(self):
        with self._lock:
            self._count = 0

    @property
    def count(self):
        with self._lock:
            return self._count


FORWARD_CALLS = ForwardCounter()


def init_identity(d, d_p, dropout_rate=0.3, seed=0, dtype=np.float32):
    """Identity projections and zero biases, so the untrained head only
    re-normalizes the backbone embeddings. Requires d_p == d; `seed` is
    accepted for interface parity with init_random but unused here.
    """
    if d_p != d:
        raise ParameterError(f"identity init requires d_p == d, got d={d}, d_p={d_p}")
    eye = np.eye(d, dtype=dtype)
    return AttentionPoolHead(
        w_q=eye.copy(), b_q=np.zeros(d_p, dtype=dtype),
        w_k=eye.copy(), b_k=np.zeros(d_p, dtype=dtype),
        w_v=eye.copy(), b_v=np.zeros(d_p, dtype=dtype),
        w_o=eye.copy(), b_o=np.zeros(d, dtype=dtype),
        ln_text=LayerNormParams.identity(d, dtype),
        ln_frames=LayerNormParams.identity(d, dtype),
        ln_attn_out=LayerNormParams.identity(d, dtype),
        ln_final=LayerNormParams.identity(d, dtype),
        fc_w=eye.copy(), fc_b=np.zeros(d, dtype=dtype),
        dropout_rate=float(dropout_rate), d=d, d_p=d_p,
    )


def init_random(d, d_p, dropout_rate=0.3, seed=0, scale=0.4, dtype=np.float64):
    """Randomly perturbed head for gradient checking at a generic point."""
    rng = np.random.Generator(np.random.PCG64(seed))

    def w(rows, cols):
        return (scale * rng.standard_normal((rows, cols))).astype(dtype)

    def v(n):
        return (scale * rng.standard_normal(n)).astype(dtype)

    def ln(n):
        gain = (1.0 + 0.2 * rng.standard_normal(n)).astype(dtype)
        return LayerNormParams(gain, v(n))

    return AttentionPoolHead(
        w_q=w(d, d_p), b_q=v(d_p), w_k=w(d, d_p), b_k=v(d_p),
        w_v=w(d, d_p), b_v=v(d_p), w_o=w(d_p, d), b_o=v(d),
        ln_text=ln(d), ln_frames=ln(d), ln_attn_out=ln(d), ln_final=ln(d),
        fc_w=w(d, d), fc_b=v(d),
        dropout_rate=float(dropout_rate), d=d, d_p=d_p,
    )


def mean_pool(frames):
    """Arithmetic mean over frame rows; the text-agnostic baseline."""
    frames = as_matrix(frames, "frames")
    if frames.shape[0] < 1:
        raise ParameterError("mean_pool needs at least one frame")
    return frames.mean(axis=0)


def _cosine_rows(rows, vec):
    """Cosine of each row against vec; rejects zero norms."""
    row_norms = np.sqrt((rows * rows).sum(axis=1))
    vec_norm = math.sqrt(float(np.einsum("i,i->", vec, vec)))
    if vec_norm == 0.0 or np.any(row_norms == 0.0):
        raise NumericError("cosine similarity undefined for zero-norm vectors")
    return np.einsum("ij,j->i", rows, vec) / (row_norms * vec_norm)


def top_k_pool(frames, text, k):
    """Mean of the k frames most cosine-similar to the text.

    The per-frame objective is separable, so picking the k largest
    similarities (ties to the lower frame index) equals the argmax over
    all size-k subsets. Returns (pooled vector, selected frame indices).
    """
    frames = as_matrix(frames, "frames")
    text = as_vector(text, "text")
    f = frames.shape[0]
    if not (1 <= k <= f):
        raise ParameterError(f"k must be in [1, {f}], got {k}")
    sims = _cosine_rows(frames.astype(np.float64), text.astype(np.float64))
    # stable sort on (-sim, index) implements the lower-index tie-break
    order = np.lexsort((np.arange(f), -sims))
    chosen = np.sort(order[:k])
    return frames[chosen].mean(axis=0), chosen


def attention_pool_fwd(head, frames, text, training=False, seed=0, tape=None):
    """Text-conditioned attention pooling of one video for one query.

    Pipeline: layer-norm text -> query; layer-norm frames -> keys/values;
    scaled dot-product attention; output projection + layer norm; then a
    residual FC branch (linear, dropout, layer norm). Returns the pooled
    embedding and the attention weights as an AttentionTrace.
    """
    frames = as_matrix(frames, "frames")
    text = as_vector(text, "text")
    if text.shape[0] != head.d:
        raise ShapeError("text width != head d", text.shape, (head.d,))
    if frames.shape[1] != head.d:
        raise ShapeError("frame width != head d", frames.shape, (head.d,))
    if frames.shape[0] < 1:
        raise ParameterError("attention pooling needs at least one frame")

    t_row = text[None, :]
    tn = layer_norm_fwd(t_row, head.ln_text, tape)
    q = linear_fwd(tn, head.w_q, head.b_q, tape)
    fn = layer_norm_fwd(frames, head.ln_frames, tape)
    k = linear_fwd(fn, head.w_k, head.b_k, tape)
    v = linear_fwd(fn, head.w_v, head.b_v, tape)

    inv_sqrt_dp = np.asarray(1.0 / math.sqrt(head.d_p), dtype=q.dtype)
    scores = matmul(q, k.T) * inv_sqrt_dp
    attn_w = softmax_row_fwd(scores, tape)
    pooled = matmul(attn_w, v)

    o = linear_fwd(pooled, head.w_o, head.b_o, tape)
    r = layer_norm_fwd(o, head.ln_attn_out, tape)
    fc = linear_fwd(r, head.fc_w, head.fc_b, tape)
    fd = dropout_fwd(fc, head.dropout_rate, training, seed, tape)
    ln4 = layer_norm_fwd(fd, head.ln_final, tape)
    out = ln4 + r

    if tape is not None:
        tape.push("attention_pool", {
            "k": k, "v": v, "q": q, "attn_w": attn_w, "inv_sqrt_dp": inv_sqrt_dp,
        })
    FORWARD_CALLS.increment()
    trace = AttentionTrace(weights=attn_w[0].copy(), frame_ids=np.arange(frames.shape[0]))
    return out[0], trace


def attention_pool_bwd(head, tape, d_out):
    """Backward through attention_pool_fwd. Consumes the tape.

    Returns (parameter gradients keyed like head.tensors(), d_text, d_frames).
    """
    grads = head.zero_grads()
    d_out = np.asarray(d_out)
    if d_out.ndim == 1:
        d_out = d_out[None, :]

    top = tape.pop("attention_pool")
    k, v, q, attn_w = top["k"], top["v"], top["q"], top["attn_w"]
    inv_sqrt_dp = top["inv_sqrt_dp"]

    d_ln4 = d_out
    d_r = d_out.copy()
    d_fd, g, b = layer_norm_bwd(tape.pop("layer_norm"), d_ln4)
    grads["ln_final.gain"] += g
    grads["ln_final.bias"] += b
    d_fc = dropout_bwd(tape.pop("dropout"), d_fd)
    d_r_fc, dw, db = linear_bwd(tape.pop("linear"), d_fc)
    grads["fc_w"] += dw
    grads["fc_b"] += db
    d_r += d_r_fc
    d_o, g, b = layer_norm_bwd(tape.pop("layer_norm"), d_r)
    grads["ln_attn_out.gain"] += g
    grads["ln_attn_out.bias"] += b
    d_pooled, dw, db = linear_bwd(tape.pop("linear"), d_o)
    grads["w_o"] += dw
    grads["b_o"] += db

    d_attn_w = matmul(d_pooled, v.T)
    d_v = matmul(attn_w.T, d_pooled)
    d_scores = softmax_row_bwd(tape.pop("softmax"), d_attn_w)
    d_q = matmul(d_scores, k) * inv_sqrt_dp
    d_k = matmul(d_scores.T, q) * inv_sqrt_dp

    d_fn_v, dw, db = linear_bwd(tape.pop("linear"), d_v)
    grads["w_v"] += dw
    grads["b_v"] += db
    d_fn_k, dw, db = linear_bwd(tape.pop("linear"), d_k)
    grads["w_k"] += dw
    grads["b_k"] += db
    d_frames, g, b = layer_norm_bwd(tape.pop("layer_norm"), d_fn_k + d_fn_v)
    grads["ln_frames.gain"] += g
    grads["ln_frames.bias"] += b

    d_tn, dw, db = linear_bwd(tape.pop("linear"), d_q)
    grads["w_q"] += dw
    grads["b_q"] += db
    d_text, g, b = layer_norm_bwd(tape.pop("layer_norm"), d_tn)
    grads["ln_text.gain"] += g
    grads["ln_text.bias"] += b

    tape.finish()
    return grads, d_text[0], d_frames
