"""Minibatch training of the attention pooling head and the logit scale on
frozen precomputed embeddings: AdamW with decoupled weight decay, cosine
learning-rate decay (no warmup), seeded shuffling, and per-epoch t2v R@1
validation with best-checkpoint retention.

Each step materializes all B^2 text-conditioned forwards, since the pooled
video embedding depends on the query text. Weight decay touches only the
2-D projection/FC matrices; biases, layer-norm parameters and the logit
scale are exempt. Everything is float32 and bit-reproducible from the seed.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError, ParameterError
from .numerics import GradTape
from .objective import (
    LogitScale,
    batch_similarity,
    batch_similarity_bwd,
    symmetric_ce_loss,
    symmetric_ce_loss_bwd,
)
from .pooling import WEIGHT_NAMES, attention_pool_bwd, attention_pool_fwd, init_identity
from .retrieval import AttentionPoolMethod, evaluate
from .seeding import derive_seed

DECAYED_TENSORS = frozenset(WEIGHT_NAMES)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 5
    lr_head: float = 1e-5
    weight_decay: float = 0.2
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-6
    dropout_rate: float = 0.3
    seed: int = 0
    frames_per_video: int = 12
    checkpoint_every: int = 0
    initial_logit_scale: float = 100.0  # the backbone's converged scale
    validate_every: int = 1  # epochs between validation passes

    def __post_init__(self):
        if self.batch_size < 2:
            raise ParameterError("batch_size must be >= 2 (B=1 gives zero contrastive gradient)")
        for name in ("lr_head", "adam_beta1", "adam_beta2", "adam_eps"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be nonnegative")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ParameterError("dropout_rate must be in [0, 1)")


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the step counter."""

    m: dict
    v: dict
    step: int = 0

    @staticmethod
    def for_params(params):
        return OptimizerState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def cosine_lr(step, total_steps, base_lr):
    """base_lr * 0.5 * (1 + cos(pi * step / total_steps)); no warmup."""
    if total_steps < 1:
        raise ParameterError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ParameterError(f"step {step} outside [0, {total_steps}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def adamw_step(params, grads, state, lr, config, decay_names=DECAYED_TENSORS):
    """One decoupled-weight-decay Adam update; returns the new params.

    Decay multiplies the listed tensors by (1 - lr*wd) independently of the
    adaptive step; moments are bias-corrected with the incremented counter.
    """
    state.step += 1
    t = state.step
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ParameterError(f"gradient shape {g.shape} != param shape {p.shape} for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p = p.copy()
        if name in decay_names and config.weight_decay > 0.0:
            new_p -= (lr * config.weight_decay) * new_p
        new_p -= lr * m_hat / (np.sqrt(v_hat) + eps)
        out[name] = new_p.astype(p.dtype, copy=False)
    return out


def batch_loss(head, scale, texts, videos, training=False, seed_fn=None):
    """Forward-only loss of one batch; used by oracles and gradient checks."""
    b = len(texts)
    conditioned = np.zeros((b, b, head.d), dtype=texts[0].dtype)
    for i in range(b):
        for j in range(b):
            seed = seed_fn(i, j) if seed_fn else 0
            z, _ = attention_pool_fwd(head, videos[j], texts[i], training, seed)
            conditioned[i, j] = z
    sims, _ = batch_similarity(conditioned, np.asarray(texts))
    return symmetric_ce_loss(sims, scale)


def batch_loss_and_grads(head, scale, texts, videos, training=True, seed_fn=None):
    """Loss plus gradients for the head tensors and log_lambda.

    Gradients accumulate pair by pair in fixed (i, j) order so repeated runs
    are bit-identical.
    """
    b = len(texts)
    conditioned = np.zeros((b, b, head.d), dtype=texts[0].dtype)
    tapes = [[None] * b for _ in range(b)]
    for i in range(b):
        for j in range(b):
            tape = GradTape()
            seed = seed_fn(i, j) if seed_fn else 0
            z, _ = attention_pool_fwd(head, videos[j], texts[i], training, seed, tape)
            conditioned[i, j] = z
            tapes[i][j] = tape
    sims, cos_caches = batch_similarity(conditioned, np.asarray(texts))
    loss_tape = GradTape()
    loss = symmetric_ce_loss(sims, scale, loss_tape)
    d_sims, d_log_lambda = symmetric_ce_loss_bwd(loss_tape)
    d_conditioned = batch_similarity_bwd(cos_caches, d_sims)
    grads = head.zero_grads()
    for i in range(b):
        for j in range(b):
            pair_grads, _, _ = attention_pool_bwd(head, tapes[i][j], d_conditioned[i, j])
            for name in grads:
                grads[name] += pair_grads[name]
    grads["log_lambda"] = d_log_lambda
    return loss, grads


@dataclass
class TrainResult:
    head: "AttentionPoolHead"
    scale: LogitScale
    log: list = field(default_factory=list)
    val_history: list = field(default_factory=list)
    best_epoch: int = -1
    best_r1: float = 0.0


def _snapshot(head, scale):
    return ({name: arr.copy() for name, arr in head.tensors().items()},
            scale.log_lambda.copy())


def _restore(head, scale, snapshot):
    tensors, log_lambda = snapshot
    for name, arr in tensors.items():
        head.set_tensor(name, arr.copy())
    scale.log_lambda = log_lambda.copy()


def train(corpus, config, val_corpus=None, on_checkpoint=None):
    """Train an identity-initialized head (D_p = D) plus the logit scale.

    Validation runs t2v R@1 each epoch on val_corpus (the training corpus
    by default); the best-R@1 parameters are restored into the result.
    Returns a TrainResult with per-step log records.
    """
    corpus.validate()
    n_pairs = len(corpus.pairs)
    if n_pairs < config.batch_size:
        raise DataError(f"corpus has {n_pairs} pairs, need >= batch_size {config.batch_size}")
    d = corpus.d
    head = init_identity(d, d, config.dropout_rate)
    scale = LogitScale.initial(config.initial_logit_scale)
    if val_corpus is None:
        val_corpus = corpus

    target_f = config.frames_per_video if config.frames_per_video > 0 else None
    train_videos = dict(corpus.subsampled(target_f).videos)
    texts = corpus.texts

    steps_per_epoch = n_pairs // config.batch_size
    total_steps = max(config.epochs * steps_per_epoch, 1)
    shuffle_rng = np.random.Generator(np.random.PCG64(derive_seed(config.seed, "shuffle")))

    result = TrainResult(head=head, scale=scale)
    best = _snapshot(head, scale)
    initial = dict(head.tensors())
    initial["log_lambda"] = scale.log_lambda
    opt_state = OptimizerState.for_params(initial)
    step = 0
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n_pairs)
        for batch_idx in range(steps_per_epoch):
            batch = order[batch_idx * config.batch_size:(batch_idx + 1) * config.batch_size]
            batch_pairs = [corpus.pairs[i] for i in batch]
            batch_texts = [texts[tid] for tid, _ in batch_pairs]
            batch_videos = [train_videos[vid] for _, vid in batch_pairs]

            def seed_fn(i, j, _step=step):
                return derive_seed(config.seed, "dropout", _step, i, j)

            lr = cosine_lr(step, total_steps, config.lr_head)
            try:
                loss, grads = batch_loss_and_grads(head, scale, batch_texts,
                                                   batch_videos, True, seed_fn)
            except NumericError as exc:
                ids = [f"{t}:{v}" for t, v in batch_pairs]
                raise NumericError(
                    f"non-finite loss at step {step} (batch {', '.join(ids)}): {exc}") from exc

            params = dict(head.tensors())
            params["log_lambda"] = scale.log_lambda
            new_params = adamw_step(params, grads, opt_state, lr, config)
            for name in head.tensors():
                head.set_tensor(name, new_params[name])
            scale.log_lambda = new_params["log_lambda"].reshape(())
            scale.clamp_()

            result.log.append({"step": step, "epoch": epoch, "lr": lr,
                               "loss": loss, "lambda": scale.value})
            step += 1
            if on_checkpoint and config.checkpoint_every > 0 and step % config.checkpoint_every == 0:
                on_checkpoint(step, head, scale)

        last_epoch = epoch == config.epochs - 1
        if last_epoch or (epoch + 1) % max(config.validate_every, 1) == 0:
            report = evaluate(AttentionPoolMethod(head), val_corpus, "t2v")
            r1 = report.recall_at[1]
            result.val_history.append({"epoch": epoch, "t2v_r1": r1,
                                       "mdr": report.median_rank})
            if r1 > result.best_r1 or result.best_epoch < 0:
                result.best_r1 = r1
                result.best_epoch = epoch
                best = _snapshot(head, scale)

    if config.epochs > 0:
        _restore(head, scale, best)
    else:
        report = evaluate(AttentionPoolMethod(head), val_corpus, "t2v")
        result.best_r1 = report.recall_at[1]
        result.best_epoch = 0
        result.val_history.append({"epoch": -1, "t2v_r1": result.best_r1,
                                   "mdr": report.median_rank})
    return result
