"""Dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap row-major numpy buffers (float32 or float64 only) and record
a tape of backward closures as ops are applied.  The graph is a pure
feed-forward chain with occasional concatenations, so a plain topological
walk is all backward() needs.  Convolution and pooling move their heavy
lifting into `distillforge.kernels`, which dispatches to the compiled
extension when it is available and to the numpy fallback otherwise.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from . import kernels
from .errors import (
    ConfigError,
    DimensionError,
    DomainError,
    StaleTapeError,
    ValidationError,
)

FLOAT_DTYPES = (np.float32, np.float64)

# Scaled exponential linear unit, standard published constants.
SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717

LOG_CLAMP = 1e-12

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording (teacher inference)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in FLOAT_DTYPES:
        arr = arr.astype(np.float64)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-dimensional array node of the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, _parents=()):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self._parents = _parents if self.requires_grad else ()
        self._backward = None
        self._consumed = False

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.isfinite(self.data).all():
            raise ValidationError(f"{what} contains NaN or Inf")
        return self

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # backward pass
    # ------------------------------------------------------------------
    def backward(self) -> None:
        """Reverse-accumulate d(self)/d(leaf) into every reachable .grad."""
        if self.size != 1:
            raise DimensionError("backward() requires a scalar loss tensor")
        if not self.requires_grad:
            raise StaleTapeError("loss tensor is not attached to a tape")
        if self._consumed:
            raise StaleTapeError("tape already consumed; run a new forward pass")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
            node._consumed = True
            if node is not self and node._parents:
                node.grad = None  # interior grads are scratch space

    # ------------------------------------------------------------------
    # elementwise arithmetic (numpy broadcasting rules)
    # ------------------------------------------------------------------
    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        out = Tensor(self.data + other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        out._backward = backward
        return out

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        out = Tensor(self.data * other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        out._backward = backward
        return out

    def __neg__(self):
        out = Tensor(-self.data, requires_grad=self.requires_grad, _parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(-g)

        out._backward = backward
        return out

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        return self + (-other)

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other, dtype=self.dtype)
        out = Tensor(self.data / other.data,
                     requires_grad=self.requires_grad or other.requires_grad,
                     _parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * self.data / (other.data * other.data),
                                               other.shape))

        out._backward = backward
        return out

    __radd__ = __add__
    __rmul__ = __mul__

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, requires_grad=self.requires_grad,
                     _parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * exponent * self.data ** (exponent - 1))

        out._backward = backward
        return out

    def sqrt(self):
        root = np.sqrt(self.data)
        out = Tensor(root, requires_grad=self.requires_grad, _parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (0.5 / root))

        out._backward = backward
        return out

    # ------------------------------------------------------------------
    # shape manipulation
    # ------------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), requires_grad=self.requires_grad,
                     _parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(self.shape))

        out._backward = backward
        return out

    def transpose(self, *axes):
        out = Tensor(self.data.transpose(axes), requires_grad=self.requires_grad,
                     _parents=(self,))
        inverse = np.argsort(axes)

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inverse))

        out._backward = backward
        return out

    def __getitem__(self, key):
        out = Tensor(self.data[key], requires_grad=self.requires_grad,
                     _parents=(self,))

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                full[key] += g
                self._accumulate(full)

        out._backward = backward
        return out

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     requires_grad=self.requires_grad, _parents=(self,))

        def backward(g):
            if not self.requires_grad:
                return
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for a in axes:
                count *= self.shape[a]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


class Parameter(Tensor):
    """Named trainable leaf tensor; grad buffer allocated up front."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={tuple(self.shape)})"


# ----------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with stacked leading dimensions (numpy semantics)."""
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul dtype mismatch: {a.dtype} vs {b.dtype}")
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad,
                 _parents=(a, b))

    def backward(g):
        if a.requires_grad:
            ga = g @ b.data.swapaxes(-1, -2)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    out = Tensor(data, requires_grad=any(t.requires_grad for t in tensors),
                 _parents=tuple(tensors))
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    out._backward = backward
    return out


# ----------------------------------------------------------------------
# convolution (3x3, stride 1) and pooling
# ----------------------------------------------------------------------

def _conv_raw(x: np.ndarray, w: np.ndarray, pad: int) -> np.ndarray:
    """Cross-correlation via im2col + BLAS; w is (c_out, c_in, 3, 3)."""
    cols, oh, ow = kernels.im2col_3x3(x, pad)
    y = w.reshape(w.shape[0], -1) @ cols
    return y.reshape(x.shape[0], w.shape[0], oh, ow), cols


def conv2d(x: Tensor, w: Tensor, bias: Tensor, padding: str = "same") -> Tensor:
    """3x3 stride-1 cross-correlation; `same` zero-pads to keep H and W."""
    if padding not in ("same", "valid"):
        raise ConfigError(f"unknown padding {padding!r}")
    if w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernels are fixed at 3x3, got {w.shape[2:]}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
    pad = 1 if padding == "same" else 0
    y, cols = _conv_raw(x.data, w.data, pad)
    y += bias.data[:, None, None]
    out = Tensor(y, requires_grad=x.requires_grad or w.requires_grad or bias.requires_grad,
                 _parents=(x, w, bias))

    def backward(g):
        b, c_out = g.shape[0], g.shape[1]
        g_mat = g.reshape(b, c_out, -1)
        if bias.requires_grad:
            bias._accumulate(g_mat.sum(axis=(0, 2)))
        if w.requires_grad:
            gw = np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(gw.reshape(w.shape))
        if x.requires_grad:
            # grad wrt input = correlation of g with the 180-degree-flipped,
            # channel-transposed kernel; pad 1 for same, 2 for valid.
            w_flip = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _conv_raw(np.ascontiguousarray(g), np.ascontiguousarray(w_flip),
                              pad=1 if pad == 1 else 2)
            x._accumulate(gx)

    out._backward = backward
    return out


def pool(x: Tensor, kind: str) -> Tensor:
    """Spatial pooling over a (b, c, H, W) tensor.

    max2x2 halves H and W; global_max / global_avg reduce to (b, c).
    Max variants route gradient to the first row-major argmax of each window.
    """
    if x.data.ndim != 4:
        raise DimensionError(f"pool expects a 4-D tensor, got shape {x.shape}")
    b, c, h, w = x.shape

    if kind == "max2x2":
        if h % 2 or w % 2:
            raise DimensionError(f"max2x2 needs even spatial extents, got {h}x{w}")
        y, idx = kernels.maxpool2x2_forward(x.data)
        out = Tensor(y, requires_grad=x.requires_grad, _parents=(x,))

        def backward(g):
            if x.requires_grad:
                x._accumulate(kernels.maxpool2x2_backward(g, idx, (b, c, h, w)))

        out._backward = backward
        return out

    if kind == "global_max":
        flat = x.data.reshape(b, c, -1)
        idx = flat.argmax(axis=2)  # first occurrence, row-major
        y = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]
        out = Tensor(y, requires_grad=x.requires_grad, _parents=(x,))

        def backward(g):
            if x.requires_grad:
                gx = np.zeros((b, c, h * w), dtype=x.dtype)
                np.put_along_axis(gx, idx[:, :, None], g[:, :, None], axis=2)
                x._accumulate(gx.reshape(b, c, h, w))

        out._backward = backward
        return out

    if kind == "global_avg":
        y = x.data.mean(axis=(2, 3))
        out = Tensor(y, requires_grad=x.requires_grad, _parents=(x,))
        inv = 1.0 / (h * w)

        def backward(g):
            if x.requires_grad:
                x._accumulate(np.broadcast_to((g * inv)[:, :, None, None],
                                              (b, c, h, w)).astype(x.dtype, copy=True))

        out._backward = backward
        return out

    raise ConfigError(f"unknown pool kind {kind!r}")


# ----------------------------------------------------------------------
# activations
# ----------------------------------------------------------------------

def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise nonlinearity: relu, selu, gelu (exact CDF), or sigmoid."""
    d = x.data
    if kind == "relu":
        y = np.maximum(d, 0)
        local = (d > 0).astype(d.dtype)  # subgradient 0 at the kink
    elif kind == "selu":
        neg = SELU_ALPHA * np.expm1(np.minimum(d, 0))
        y = SELU_LAMBDA * np.where(d > 0, d, neg)
        local = SELU_LAMBDA * np.where(d > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(d, 0)))
        local = local.astype(d.dtype)
    elif kind == "gelu":
        cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
        y = (d * cdf).astype(d.dtype)
        pdf = _INV_SQRT2PI * np.exp(-0.5 * d * d)
        local = (cdf + d * pdf).astype(d.dtype)
    elif kind == "sigmoid":
        y = _sigmoid(d)
        local = y * (1.0 - y)
    else:
        raise ConfigError(f"unknown activation {kind!r}")

    out = Tensor(y, requires_grad=x.requires_grad, _parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * local)

    out._backward = backward
    return out


def _sigmoid(d: np.ndarray) -> np.ndarray:
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax_t(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis, max-subtracted for stability."""
    if temperature <= 0:
        raise DomainError(f"softmax temperature must be positive, got {temperature}")
    z = logits.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, requires_grad=logits.requires_grad, _parents=(logits,))

    def backward(g):
        if logits.requires_grad:
            dot = (g * p).sum(axis=-1, keepdims=True)
            logits._accumulate((p * (g - dot)) / temperature)

    out._backward = backward
    return out


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------

def _check_prob_rows(p: np.ndarray, what: str) -> None:
    if p.ndim != 2:
        raise DimensionError(f"{what} must be 2-D (batch, classes), got {p.shape}")
    if (p < 0).any():
        raise ValidationError(f"{what} contains negative entries")
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValidationError(
            f"{what} rows must sum to 1 within 1e-6 (worst deviation {np.abs(sums - 1.0).max():.3g})")


def cross_entropy(pred_probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class; log clamped at 1e-12."""
    p = pred_probs.data
    _check_prob_rows(p, "predicted probabilities")
    labels = np.asarray(labels)
    b = p.shape[0]
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {b}")
    rows = np.arange(b)
    picked = p[rows, labels]
    value = -np.log(np.maximum(picked, LOG_CLAMP)).mean()
    out = Tensor(np.asarray(value, dtype=p.dtype),
                 requires_grad=pred_probs.requires_grad, _parents=(pred_probs,))

    def backward(g):
        if pred_probs.requires_grad:
            gp = np.zeros_like(p)
            live = picked > LOG_CLAMP  # clamped entries sit on the flat region
            gp[rows[live], labels[live]] = -1.0 / (b * picked[live])
            pred_probs._accumulate(g * gp)

    out._backward = backward
    return out


def kl_divergence(pred_probs: Tensor, target_probs: Tensor) -> Tensor:
    """Mean KL(target || pred) over the batch, with 0*log(0) = 0."""
    p = pred_probs.data
    q = target_probs.data
    _check_prob_rows(p, "predicted probabilities")
    _check_prob_rows(q, "target probabilities")
    if p.shape != q.shape:
        raise DimensionError(f"KL shapes differ: {p.shape} vs {q.shape}")
    b = p.shape[0]
    logq = np.log(np.maximum(q, LOG_CLAMP))
    logp = np.log(np.maximum(p, LOG_CLAMP))
    terms = np.where(q > 0, q * (logq - logp), 0.0)
    value = terms.sum() / b
    out = Tensor(np.asarray(value, dtype=p.dtype),
                 requires_grad=pred_probs.requires_grad or target_probs.requires_grad,
                 _parents=(pred_probs, target_probs))

    def backward(g):
        if pred_probs.requires_grad:
            gp = np.where((q > 0) & (p > LOG_CLAMP), -q / np.maximum(p, LOG_CLAMP), 0.0)
            pred_probs._accumulate(g * gp / b)
        if target_probs.requires_grad:
            gq = np.where(q > LOG_CLAMP, (logq - logp + 1.0), 0.0)
            target_probs._accumulate(g * gq / b)

    out._backward = backward
    return out


def loss(pred_probs: Tensor, target, kind: str) -> Tensor:
    if kind == "cross_entropy":
        return cross_entropy(pred_probs, target)
    if kind == "kl_divergence":
        target = target if isinstance(target, Tensor) else Tensor(target)
        return kl_divergence(pred_probs, target)
    raise ConfigError(f"unknown loss kind {kind!r}")


# ----------------------------------------------------------------------
# verification
# ----------------------------------------------------------------------

def backward(loss_node: Tensor, params: Iterable[Parameter] = ()) -> None:
    """Run the tape; parameters not reached by the tape keep zero grad."""
    for p in params:
        p.zero_grad()
    loss_node.backward()


def finite_diff_check(loss_fn, params: Sequence[Parameter], step: float = 1e-5,
                      samples_per_param: int = 8, seed: int = 0) -> dict:
    """Compare backward() gradients against central finite differences.

    `loss_fn` re-runs the forward pass and returns a scalar Tensor; it is
    evaluated fresh for every probe so the tape is never reused.  To keep
    the check tractable on real layers, up to `samples_per_param` elements
    are probed per parameter (all of them when the tensor is small).
    Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
    near-zero gradients are judged on an absolute 1e-7 scale.
    Returns {name: rel_err} plus the overall worst under "max".
    """
    for p in params:
        if p.dtype != np.float64:
            raise ConfigError(f"finite_diff_check requires float64 parameters ({p.name})")

    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {p.name: p.grad.copy() for p in params}

    probe_rng = np.random.default_rng(seed)
    report: dict = {}
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= samples_per_param:
            picks = np.arange(n)
        else:
            picks = probe_rng.choice(n, size=samples_per_param, replace=False)
        rel = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = loss_fn().item()
            flat[i] = orig - step
            f_minus = loss_fn().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            ad = analytic[p.name].reshape(-1)[i]
            denom = max(abs(ad), abs(numeric), 1e-3)
            rel = max(rel, abs(ad - numeric) / denom)
        report[p.name] = rel
        worst = max(worst, rel)
    report["max"] = worst
    return report
