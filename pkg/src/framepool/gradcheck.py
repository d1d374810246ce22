"""Central finite-difference verification of every hand-rolled backward.

Checks always run in float64 regardless of the training precision, because
finite differences are unreliable at float32. Targets range from single
primitives (linear, layer_norm, softmax, dropout) to the full attention
head plus contrastive loss.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError
from .numerics import (
    GradTape,
    LayerNormParams,
    dropout_bwd,
    dropout_fwd,
    finite_difference,
    layer_norm_bwd,
    layer_norm_fwd,
    linear_bwd,
    linear_fwd,
    relative_error,
    softmax_row_bwd,
    softmax_row_fwd,
)
from .objective import LogitScale
from .pooling import init_random
from .seeding import derive_seed
from .trainer import batch_loss, batch_loss_and_grads

DEGENERATE_VARIANCE = 1e-8


@dataclass
class GradCheckEntry:
    tensor: str
    max_rel_err: float
    status: str  # pass | fail | skipped

    def line(self):
        return f"{self.status.upper():7s} {self.tensor:20s} max_rel_err={self.max_rel_err:.3e}"


@dataclass
class GradCheckReport:
    target: str
    tolerance: float
    entries: list = field(default_factory=list)

    @property
    def passed(self):
        return all(e.status != "fail" for e in self.entries)

    def add(self, tensor, analytic, numeric, skipped=False):
        if skipped:
            self.entries.append(GradCheckEntry(tensor, float("nan"), "skipped"))
            return
        err = float(relative_error(analytic, numeric).max()) if np.size(analytic) else 0.0
        status = "pass" if err < self.tolerance else "fail"
        self.entries.append(GradCheckEntry(tensor, err, status))

    def lines(self):
        yield f"gradient check [{self.target}] tolerance={self.tolerance:g}"
        for entry in self.entries:
            yield entry.line()
        yield f"result: {'PASS' if self.passed else 'FAIL'}"


def _probe_loss(y, weights):
    """Scalar readout sum(y * weights); gives a generic upstream gradient."""
    return float(np.einsum("ij,ij->", y, weights))


def grad_check_linear(rows=3, in_dim=4, out_dim=5, seed=0, h=1e-5, tolerance=1e-6):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(-2, 2, (rows, in_dim))
    w = rng.uniform(-2, 2, (in_dim, out_dim))
    b = rng.uniform(-2, 2, out_dim)
    up = rng.uniform(-1, 1, (rows, out_dim))

    tape = GradTape()
    linear_fwd(x, w, b, tape)
    dx, dw, db = linear_bwd(tape.pop("linear"), up)

    report = GradCheckReport("linear", tolerance)
    report.add("x", dx, finite_difference(lambda a: _probe_loss(linear_fwd(a, w, b), up), x, h))
    report.add("w", dw, finite_difference(lambda a: _probe_loss(linear_fwd(x, a, b), up), w, h))
    report.add("b", db, finite_difference(
        lambda a: _probe_loss(linear_fwd(x, w, a[0]), up), b[None, :], h)[0])
    return report


def grad_check_layer_norm(x=None, rows=4, dim=6, seed=0, h=1e-5, tolerance=1e-5):
    """Checks gain/bias/input gradients; input rows whose variance is below
    the degeneracy threshold sit at a non-differentiable point and are
    flagged as skipped rather than checked."""
    rng = np.random.Generator(np.random.PCG64(seed))
    if x is None:
        x = rng.uniform(-2, 2, (rows, dim))
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[1]
    params = LayerNormParams((1.0 + 0.3 * rng.uniform(-1, 1, dim)),
                             rng.uniform(-1, 1, dim))
    up = rng.uniform(-1, 1, x.shape)

    tape = GradTape()
    layer_norm_fwd(x, params, tape)
    dx, dgain, dbias = layer_norm_bwd(tape.pop("layer_norm"), up)

    report = GradCheckReport("layer_norm", tolerance)
    report.add("gain", dgain, finite_difference(
        lambda a: _probe_loss(layer_norm_fwd(x, LayerNormParams(a[0], params.bias, params.eps)), up),
        params.gain[None, :], h)[0])
    report.add("bias", dbias, finite_difference(
        lambda a: _probe_loss(layer_norm_fwd(x, LayerNormParams(params.gain, a[0], params.eps)), up),
        params.bias[None, :], h)[0])

    variances = x.var(axis=1)
    degenerate = variances < DEGENERATE_VARIANCE
    if degenerate.all():
        report.add("x", None, None, skipped=True)
    else:
        keep = ~degenerate
        num = finite_difference(
            lambda a: _probe_loss(layer_norm_fwd(a, params), up), x, h)
        report.add("x" if not degenerate.any() else "x[nondegenerate rows]",
                   dx[keep], num[keep])
        if degenerate.any():
            report.add("x[degenerate rows]", None, None, skipped=True)
    return report


def grad_check_softmax(rows=3, dim=7, seed=0, h=1e-5, tolerance=1e-5):
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(-2, 2, (rows, dim))
    up = rng.uniform(-1, 1, (rows, dim))
    tape = GradTape()
    softmax_row_fwd(x, tape)
    dx = softmax_row_bwd(tape.pop("softmax"), up)
    report = GradCheckReport("softmax", tolerance)
    report.add("x", dx, finite_difference(
        lambda a: _probe_loss(softmax_row_fwd(a), up), x, h))
    return report


def grad_check_dropout(rows=4, dim=6, rate=0.3, seed=0, h=1e-5, tolerance=1e-6):
    """The mask is fixed by the seed, so the kept computation is linear."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.uniform(-2, 2, (rows, dim))
    up = rng.uniform(-1, 1, (rows, dim))
    tape = GradTape()
    dropout_fwd(x, rate, True, seed + 99, tape)
    dx = dropout_bwd(tape.pop("dropout"), up)
    report = GradCheckReport("dropout", tolerance)
    report.add("x", dx, finite_difference(
        lambda a: _probe_loss(dropout_fwd(a, rate, True, seed + 99), up), x, h))
    return report


def grad_check_full(d=8, d_p=8, f=5, b=4, seed=0, h=1e-5, tolerance=1e-4,
                    training=True, logit_scale=10.0):
    """Full model: attention head + similarity + symmetric CE loss, checking
    every parameter tensor and log_lambda against central differences."""
    if d * d_p * 5 > 100_000:
        raise ParameterError("configuration too large for elementwise finite differences")
    rng = np.random.Generator(np.random.PCG64(seed))
    head = init_random(d, d_p, dropout_rate=0.3 if training else 0.0,
                       seed=seed + 1, dtype=np.float64)
    texts = [rng.uniform(-2, 2, d) for _ in range(b)]
    videos = [rng.uniform(-2, 2, (f, d)) for _ in range(b)]
    scale = LogitScale(np.float64(math.log(logit_scale)))

    def seed_fn(i, j):
        return derive_seed(seed, "gradcheck-dropout", i, j)

    loss, grads = batch_loss_and_grads(head, scale, texts, videos, training, seed_fn)
    if not math.isfinite(loss):
        raise NumericError("non-finite loss at the probe point")

    report = GradCheckReport("head+loss", tolerance)
    for name in head.tensors():
        original = head.tensors()[name]

        def loss_with(arr, _name=name, _orig=original):
            head.set_tensor(_name, arr.reshape(_orig.shape))
            try:
                return batch_loss(head, scale, texts, videos, training, seed_fn)
            finally:
                head.set_tensor(_name, _orig)

        flat = original.reshape(1, -1).copy()
        numeric = finite_difference(lambda a: loss_with(a), flat, h)
        report.add(name, grads[name].reshape(-1), numeric.reshape(-1))

    def loss_with_lambda(arr):
        probe = LogitScale(np.float64(arr.reshape(())))
        return batch_loss(head, probe, texts, videos, training, seed_fn)

    numeric_ll = finite_difference(loss_with_lambda, scale.log_lambda.reshape(1, 1).copy(), h)
    report.add("log_lambda", np.asarray(grads["log_lambda"]).reshape(-1),
               numeric_ll.reshape(-1))
    return report


CHECK_TARGETS = {
    "linear": grad_check_linear,
    "layer_norm": grad_check_layer_norm,
    "softmax": grad_check_softmax,
    "dropout": grad_check_dropout,
    "full": grad_check_full,
}


def run_grad_check(target="full", **kwargs):
    try:
        fn = CHECK_TARGETS[target]
    except KeyError:
        raise ParameterError(f"unknown grad-check target '{target}'") from None
    return fn(**kwargs)
