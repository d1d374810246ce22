"""Dense differentiable primitives with explicit forward/backward passes.

Every forward optionally records its intermediates on a GradTape; the
matching backward is a pure function of that cache and the upstream
gradient. Reductions go through np.einsum with a fixed contraction order
(single-threaded, no BLAS dispatch), so results are bit-reproducible for
identical inputs regardless of machine threading.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError, StateError
from .validation import check_finite

DEFAULT_LN_EPS = 1e-5


@dataclass
class LayerNormParams:
    """Per-feature gain/bias for row-wise layer normalization."""

    gain: np.ndarray
    bias: np.ndarray
    eps: float = DEFAULT_LN_EPS

    def __post_init__(self):
        self.gain = np.asarray(self.gain)
        self.bias = np.asarray(self.bias)
        if self.gain.shape != self.bias.shape or self.gain.ndim != 1:
            raise ShapeError("gain and bias must be 1-D and same length",
                             self.gain.shape, self.bias.shape)
        if not self.eps > 0:
            raise ParameterError(f"epsilon must be positive, got {self.eps}")

    @staticmethod
    def identity(dim, dtype=np.float32, eps=DEFAULT_LN_EPS):
        return LayerNormParams(np.ones(dim, dtype=dtype),
                               np.zeros(dim, dtype=dtype), eps)

    def astype(self, dtype):
        return LayerNormParams(self.gain.astype(dtype), self.bias.astype(dtype), self.eps)


class GradTape:
    """Single-use stack of forward caches, popped in reverse by backward.

    A tape belongs to exactly one composite forward; calling finish() twice,
    or popping past the matching forward, raises StateError.
    """

    def __init__(self):
        self._stack = []
        self._consumed = False

    def push(self, op, cache):
        if self._consumed:
            raise StateError("tape already consumed; run a new forward")
        self._stack.append((op, cache))

    def pop(self, op):
        if self._consumed:
            raise StateError("tape already consumed; run a new forward")
        if not self._stack:
            raise StateError(f"backward for '{op}' has no matching forward on tape")
        top_op, cache = self._stack.pop()
        if top_op != op:
            raise StateError(f"tape order mismatch: expected '{top_op}', got '{op}'")
        return cache

    def finish(self):
        """Mark the tape consumed; a tape feeds exactly one backward."""
        if self._consumed:
            raise StateError("tape already consumed")
        self._consumed = True

    @property
    def consumed(self):
        return self._consumed

    def __len__(self):
        return len(self._stack)


def matmul(a, b):
    """Deterministic matrix product with a fixed left-to-right reduction."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions differ", a.shape, b.shape)
    return np.einsum("ij,jk->ik", a, b)


def linear_fwd(x, w, b, tape=None):
    """y = x @ w + b with x (N,D), w (D,K), b (K,)."""
    if x.shape[1] != w.shape[0]:
        raise ShapeError("linear input/weight mismatch", x.shape, w.shape)
    if b.shape != (w.shape[1],):
        raise ShapeError("linear bias mismatch", b.shape, w.shape)
    y = matmul(x, w) + b
    if tape is not None:
        tape.push("linear", {"x": x, "w": w})
    return y


def linear_bwd(cache, dy):
    dx = matmul(dy, cache["w"].T)
    dw = matmul(cache["x"].T, dy)
    db = dy.sum(axis=0)
    return dx, dw, db


def layer_norm_fwd(x, params, tape=None):
    """Row-wise normalization (population variance) then gain/bias."""
    if x.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D input", x.shape)
    if x.shape[1] != params.gain.shape[0]:
        raise ShapeError("layer_norm width mismatch", x.shape, params.gain.shape)
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    std_inv = 1.0 / np.sqrt(var + np.asarray(params.eps, dtype=x.dtype))
    xhat = centered * std_inv
    y = xhat * params.gain + params.bias
    if tape is not None:
        tape.push("layer_norm", {"xhat": xhat, "std_inv": std_inv, "gain": params.gain})
    return y


def layer_norm_bwd(cache, dy):
    """Returns (dx, dgain, dbias)."""
    xhat = cache["xhat"]
    std_inv = cache["std_inv"]
    n = xhat.shape[1]
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * cache["gain"]
    dx = (std_inv / n) * (
        n * dxhat
        - dxhat.sum(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
    )
    return dx, dgain, dbias


def softmax_row_fwd(x, tape=None):
    """Row-wise softmax with max subtraction for stability."""
    if x.ndim != 2 or x.size == 0:
        raise ShapeError("softmax expects a nonempty 2-D input", x.shape)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    if tape is not None:
        tape.push("softmax", {"p": p})
    return p


def softmax_row_bwd(cache, dy):
    p = cache["p"]
    return p * (dy - (dy * p).sum(axis=1, keepdims=True))


def dropout_fwd(x, rate, training, rng_seed, tape=None):
    """Inverted dropout: zero with probability `rate`, scale survivors by
    1/(1-rate) in training mode; identity in eval mode. The mask is fully
    determined by rng_seed.
    """
    if not (0.0 <= rate < 1.0):
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        if tape is not None:
            tape.push("dropout", {"mask": None})
        return x
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    keep = rng.random(x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = keep.astype(x.dtype) * scale
    if tape is not None:
        tape.push("dropout", {"mask": mask})
    return x * mask


def dropout_bwd(cache, dy):
    mask = cache["mask"]
    if mask is None:
        return dy
    return dy * mask


def finite_difference(f, x, h=1e-5):
    """Central finite differences of a scalar function, element by element.

    x must be float64; returns an array of x's shape. Raises NumericError
    via f if the probe point is non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x)
        flat[i] = orig - h
        f_minus = f(x)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-3):
    """Guarded elementwise relative error between two gradient arrays.

    The floor keeps finite-difference round-off noise (~1e-10 absolute on
    O(1) losses) from registering as error where the true gradient is zero,
    e.g. a key-projection bias whose logit shift cancels in the softmax.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def assert_all_finite(arr, context):
    check_finite(arr, context)
    return arr
