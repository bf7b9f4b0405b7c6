"""Dense float64 tensors with reverse-mode automatic differentiation.

Just enough machinery to express and train the attention policies in this
package: a numpy-backed :class:`Tensor` whose operations record backward
closures, fused softmax / layer-norm blocks, a multi-head attention helper,
and a central-difference gradient checker. Everything runs in double
precision; there is no implicit dtype promotion anywhere.

The scaling hook deserves a note. ``softmax_rows`` accepts a positive
``scale`` that multiplies the logits right before normalization. Rescaling a
row by a factor above one sharpens the distribution (its entropy drops), a
factor below one flattens it. The attention modules route their
size-adaptation factor through this argument, so a factor of exactly 1.0
reproduces plain attention bit for bit: the multiplication by 1.0 is exact
in IEEE arithmetic, including for masked entries held at ``-inf``.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateRowError,
    DimensionError,
    DomainError,
    NumericError,
)

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "concat",
    "gather_nodes",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "linear",
    "matmul",
    "multi_head_attention",
    "no_grad",
    "relu",
    "softmax_probe",
    "softmax_rows",
    "swap_last2",
    "tanh_clip",
    "zero_grad",
]

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block. Purely a speed knob."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus the bookkeeping reverse mode needs.

    ``requires_grad`` marks trainable leaves; interior nodes inherit it from
    their parents. After :func:`backward`, every reachable tensor with
    ``requires_grad`` holds the accumulated gradient in ``grad``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    # introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _fail_item(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not part of this op set")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    # reductions / shaping ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = 1
            for ax in axes:
                count *= self.data.shape[ax]
        return mul(tensor_sum(self, axis=axis, keepdims=keepdims), 1.0 / count)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 or not isinstance(shape[0], (tuple, list)) else tuple(shape[0]))

    def transpose(self, axes: Sequence[int]):
        return transpose(self, tuple(axes))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)


def _fail_item(t: Tensor):
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    """Wrap an op result, recording the edge only when grad flow is on."""
    grad_parents = [p for p in parents if p.requires_grad]
    out = Tensor(data, requires_grad=bool(grad_parents) and grad_enabled())
    if out.requires_grad:
        out._parents = tuple(grad_parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    ta = a if isinstance(a, Tensor) else Tensor(a)
    tb = b if isinstance(b, Tensor) else Tensor(b)
    data = ta.data + tb.data

    def backward_fn(g: np.ndarray) -> None:
        if ta.requires_grad:
            ta._accum(_unbroadcast(g, ta.data.shape))
        if tb.requires_grad:
            tb._accum(_unbroadcast(g, tb.data.shape))

    return _make(data, (ta, tb), backward_fn)


def mul(a, b) -> Tensor:
    ta = a if isinstance(a, Tensor) else Tensor(a)
    tb = b if isinstance(b, Tensor) else Tensor(b)
    data = ta.data * tb.data

    def backward_fn(g: np.ndarray) -> None:
        if ta.requires_grad:
            ta._accum(_unbroadcast(g * tb.data, ta.data.shape))
        if tb.requires_grad:
            tb._accum(_unbroadcast(g * ta.data, tb.data.shape))

    return _make(data, (ta, tb), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product. Last two axes multiply, leading axes broadcast."""
    ta = a if isinstance(a, Tensor) else Tensor(a)
    tb = b if isinstance(b, Tensor) else Tensor(b)
    if ta.ndim < 2 or tb.ndim < 2:
        raise DimensionError(f"matmul needs ndim >= 2 on both sides, got {ta.ndim} and {tb.ndim}")
    if ta.shape[-1] != tb.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {ta.shape} @ {tb.shape}")
    data = np.matmul(ta.data, tb.data)

    def backward_fn(g: np.ndarray) -> None:
        if ta.requires_grad:
            ga = np.matmul(g, np.swapaxes(tb.data, -1, -2))
            ta._accum(_unbroadcast(ga, ta.data.shape))
        if tb.requires_grad:
            gb = np.matmul(np.swapaxes(ta.data, -1, -2), g)
            tb._accum(_unbroadcast(gb, tb.data.shape))

    return _make(data, (ta, tb), backward_fn)


def exp(x: Tensor) -> Tensor:
    out_data = np.exp(x.data)

    def backward_fn(g: np.ndarray) -> None:
        x._accum(g * out_data)

    return _make(out_data, (x,), backward_fn)


def log(x: Tensor) -> Tensor:
    out_data = np.log(x.data)

    def backward_fn(g: np.ndarray) -> None:
        x._accum(g / x.data)

    return _make(out_data, (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward_fn(g: np.ndarray) -> None:
        x._accum(g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward_fn(g: np.ndarray) -> None:
        x._accum(g * (x.data > 0.0))

    return _make(out_data, (x,), backward_fn)


def tensor_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g: np.ndarray) -> None:
        if axis is None:
            x._accum(np.broadcast_to(g, x.data.shape).copy() if np.ndim(g) == 0 else np.full(x.data.shape, g))
        else:
            gg = g
            if not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                for ax in sorted(a % x.data.ndim for a in axes):
                    gg = np.expand_dims(gg, ax)
            x._accum(np.broadcast_to(gg, x.data.shape).copy())

    return _make(out_data, (x,), backward_fn)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward_fn(g: np.ndarray) -> None:
        x._accum(g.reshape(x.data.shape))

    return _make(out_data, (x,), backward_fn)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    out_data = x.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g: np.ndarray) -> None:
        x._accum(g.transpose(inverse))

    return _make(out_data, (x,), backward_fn)


def swap_last2(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accum(g[tuple(idx)])

    return _make(out_data, parts, backward_fn)


def take(x: Tensor, key) -> Tensor:
    out_data = x.data[key]

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        x._accum(full)

    return _make(out_data, (x,), backward_fn)


def gather_nodes(emb: Tensor, idx: np.ndarray) -> Tensor:
    """Pick per-row node embeddings: (B, n, d) gathered at (B, S) -> (B, S, d)."""
    idx = np.asarray(idx)
    if emb.ndim != 3 or idx.ndim != 2 or idx.shape[0] != emb.shape[0]:
        raise DimensionError(f"gather_nodes expects (B, n, d) and (B, S), got {emb.shape} and {idx.shape}")
    batch = np.arange(emb.shape[0])[:, None]
    out_data = emb.data[batch, idx]

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(emb.data)
        np.add.at(full, (batch, idx), g)
        emb._accum(full)

    return _make(out_data, (emb,), backward_fn)


# ---------------------------------------------------------------------------
# fused blocks
# ---------------------------------------------------------------------------

_softmax_hook: Optional[Callable[[np.ndarray, np.ndarray], None]] = None


@contextlib.contextmanager
def softmax_probe(hook: Callable[[np.ndarray, np.ndarray], None]):
    """Observe every softmax in the block: ``hook(scaled_logits, weights)``.

    The probe sees the logits after scaling and masking (masked entries are
    ``-inf``) plus the resulting rows. Opt-in and off by default; intended
    for entropy instrumentation, not for training-time use.
    """
    global _softmax_hook
    prev = _softmax_hook
    _softmax_hook = hook
    try:
        yield
    finally:
        _softmax_hook = prev


def softmax_rows(logits: Tensor, scale: float = 1.0, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax over the last axis with a sharpening factor.

    ``mask`` marks entries excluded from the distribution (True = excluded);
    their output probability is exactly 0.0. ``scale`` multiplies the logits
    first, so scale > 1 concentrates each row and scale < 1 flattens it.
    A fully masked row raises :class:`DegenerateRowError`.
    """
    scale = float(scale)
    if not np.isfinite(scale) or scale <= 0.0:
        raise DomainError(f"softmax scale must be positive and finite, got {scale}")
    x = logits.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise DimensionError(f"mask shape {mask.shape} != logits shape {x.shape}")
        if mask.all(axis=-1).any():
            raise DegenerateRowError("softmax row with every entry masked")
        x = np.where(mask, -np.inf, x)
    # scale == 1.0 still goes through the multiply: *1.0 is bitwise exact
    scaled = x * scale
    row_max = np.max(scaled, axis=-1, keepdims=True)
    if not np.isfinite(row_max).all():
        raise NumericError("non-finite logits in softmax row")
    e = np.exp(scaled - row_max)
    z = e.sum(axis=-1, keepdims=True)
    probs = e / z

    if _softmax_hook is not None:
        _softmax_hook(scaled, probs)

    def backward_fn(g: np.ndarray) -> None:
        inner = (g * probs).sum(axis=-1, keepdims=True)
        logits._accum(scale * probs * (g - inner))

    return _make(probs, (logits,), backward_fn)


def layer_norm(x: Tensor, eps: float = 1e-10) -> Tensor:
    """Normalize the last axis to zero mean, unit variance. No affine part.

    A constant row maps to zeros; scale/shift, if wanted, are ordinary
    tensor ops on top.
    """
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward_fn(g: np.ndarray) -> None:
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        x._accum(inv * (g - gm - y * gym))

    return _make(y, (x,), backward_fn)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def tanh_clip(x: Tensor, clip: float) -> Tensor:
    """Squash logits into (-clip, clip) via clip * tanh(x)."""
    if not clip > 0.0:
        raise DomainError(f"clip must be positive, got {clip}")
    return mul(tanh(x), float(clip))


def multi_head_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: int,
    esf: float = 1.0,
    mask: Optional[np.ndarray] = None,
    w_out: Optional[Tensor] = None,
) -> Tensor:
    """Scaled dot-product attention with the size factor on the logits.

    q: (..., n_q, d), k and v: (..., n_k, d). Scores are
    q k^T / sqrt(d_head), multiplied by ``esf`` inside the softmax, so
    ``esf=1.0`` is vanilla attention. ``mask`` is (n_q, n_k)-shaped per
    batch element (True = blocked) and broadcasts over heads.
    """
    d = q.shape[-1]
    if d != k.shape[-1] or d != v.shape[-1]:
        raise DimensionError(f"q/k/v feature dims differ: {q.shape[-1]}, {k.shape[-1]}, {v.shape[-1]}")
    if d % heads != 0:
        raise DimensionError(f"feature dim {d} not divisible by heads {heads}")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"k and v disagree on n_k: {k.shape} vs {v.shape}")
    dh = d // heads

    def split(t: Tensor) -> Tensor:
        # (..., n, d) -> (..., heads, n, dh)
        n = t.shape[-2]
        parts = reshape(t, t.shape[:-1] + (heads, dh))
        axes = tuple(range(t.ndim - 2)) + (t.ndim - 1, t.ndim - 2, t.ndim)
        return transpose(parts, axes)

    qh, kh, vh = split(q), split(k), split(v)
    scores = mul(matmul(qh, swap_last2(kh)), 1.0 / np.sqrt(dh))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        # insert the head axis, then broadcast to the score shape
        mask = np.broadcast_to(np.expand_dims(mask, -3), scores.shape)
    weights = softmax_rows(scores, scale=esf, mask=mask)
    ctx = matmul(weights, vh)  # (..., heads, n_q, dh)
    axes = tuple(range(ctx.ndim - 3)) + (ctx.ndim - 2, ctx.ndim - 3, ctx.ndim - 1)
    merged = reshape(transpose(ctx, axes), ctx.shape[:-3] + (q.shape[-2], d))
    if w_out is not None:
        merged = matmul(merged, w_out)
    return merged


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    """Iterative postorder walk; parents come before the nodes that use them."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, seed: Optional[np.ndarray] = None) -> None:
    """Accumulate dLoss/dLeaf into ``.grad`` of every reachable leaf."""
    if seed is None:
        if loss.size != 1:
            raise DimensionError(f"backward() without a seed needs a scalar loss, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
    if not loss.requires_grad:
        return
    loss._accum(np.asarray(seed, dtype=np.float64))
    for node in reversed(_topo_order(loss)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior buffers are not reused; free them eagerly
            if node._parents:
                node.grad = None


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


class GradTape:
    """Leaf registry: runs backward and returns grads in registration order.

    Parameters that do not influence the loss come back as zero arrays of
    the right shape, so optimizers can zip params with grads blindly.
    """

    def __init__(self, params: Iterable[Tensor]):
        self.params = list(params)
        for p in self.params:
            if not p.requires_grad:
                raise DomainError("GradTape parameters must have requires_grad set")

    def gradient(self, loss: Tensor) -> list[np.ndarray]:
        zero_grad(self.params)
        backward(loss)
        return [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in self.params]


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` must map a tensor to a scalar tensor. The relative error per
    coordinate is |autodiff - central| / (|central| + 1e-12); the max over
    coordinates comes back. Non-finite values anywhere raise
    :class:`NumericError`.
    """
    if not (1e-7 <= eps <= 1e-4):
        raise DomainError(f"grad_check eps {eps} outside [1e-7, 1e-4]")
    x = Tensor(point.data.copy(), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise DimensionError(f"grad_check target must be scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NumericError("non-finite function value at the checkpoint")
    backward(out)
    auto = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
    if not np.isfinite(auto).all():
        raise NumericError("non-finite reverse-mode gradient")

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    probe = Tensor(x.data.copy())
    pflat = probe.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = pflat[i]
            pflat[i] = orig + eps
            hi = float(f(probe).data.reshape(-1)[0])
            pflat[i] = orig - eps
            lo = float(f(probe).data.reshape(-1)[0])
            pflat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
    if not np.isfinite(numeric).all():
        raise NumericError("non-finite central-difference estimate")
    rel = np.abs(auto.reshape(-1) - numeric) / (np.abs(numeric) + 1e-12)
    return float(rel.max()) if rel.size else 0.0
