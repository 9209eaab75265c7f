"""Dense tensors with reverse-mode automatic differentiation.

Just enough machinery for a transformer encoder: numpy arrays for storage
and kernels, a dynamically built graph of operation nodes for gradients,
and a central-difference gradient checker for verification. Two precision
modes are supported by construction: every op preserves the dtype of its
inputs, so a graph built from float64 leaves stays float64 end to end.

Negative infinity is a legal value only as an attention-mask sentinel;
``softmax_rows`` maps it to an exact zero probability.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DegenerateRowError, ShapeError

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense row-major array plus an optional position in a backward graph.

    ``data`` is always a numpy array; ``grad`` is populated by ``backward``
    and accumulates additively over fan-out. Operation results record their
    parents and a backward closure; leaves record neither.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None,
                 name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Callable | None = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Return a leaf sharing this tensor's values, cut from the graph."""
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"

    # Operator sugar; all arithmetic routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


@dataclass
class Graph:
    """Topologically ordered view of the nodes reachable from a root."""

    root: Tensor
    nodes: list[Tensor] = field(default_factory=list)


def trace(root: Tensor) -> Graph:
    """Collect the graph under ``root`` in topological (parents-first) order."""
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
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return Graph(root=root, nodes=order)


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Populate ``.grad`` for every requires_grad tensor reachable from ``loss``.

    ``loss`` must be scalar. Tensors in ``params`` that the loss does not
    depend on receive an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.shape}")
    graph = trace(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        if node.backward_fn is None or node.grad is None:
            continue
        grads = node.backward_fn(node.grad)
        for parent, g in zip(node.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                # copy: g may alias another node's buffer or be read-only
                parent.grad = np.array(g, dtype=parent.data.dtype)
            else:
                parent.grad += g
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), back)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(out, (a, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, 2-D or batched with identical leading dimensions."""
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _node(out, (a, b), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def back(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), back)


def permute(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def back(g):
        return (np.transpose(g, inverse),)

    return _node(out, (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), back)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows along axis 0; the workhorse behind embedding lookups."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = a.data[idx]

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _node(out, (a,), back)


embedding_lookup = take_rows


def tensor_sum(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def back(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=False),)

    return _node(out, (a,), back)


def mean(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return mul(tensor_sum(a), 1.0 / n)


def maximum_scalar(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient passes only where a > floor."""
    a = _as_tensor(a)
    out = np.maximum(a.data, floor)
    mask = a.data > floor

    def back(g):
        return (g * mask,)

    return _node(out, (a,), back)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), back)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, 0.5 x (1 + erf(x / sqrt 2))."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(a.dtype, copy=False)

    def back(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _node(out, (a,), back)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def back(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), back)


def log_sigmoid(a: Tensor) -> Tensor:
    """Numerically stable log(sigmoid(x)); finite for any finite input."""
    a = _as_tensor(a)
    x = a.data
    out = np.where(x >= 0, -np.log1p(np.exp(-np.abs(x))),
                   x - np.log1p(np.exp(-np.abs(x)))).astype(a.dtype, copy=False)

    def back(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = np.exp(-x[pos]) / (1.0 + np.exp(-x[pos]))
        s[~pos] = 1.0 / (1.0 + np.exp(x[~pos]))
        return (g * s,)

    return _node(out, (a,), back)


def softmax_rows(a: Tensor, on_empty: str = "error") -> Tensor:
    """Row-wise softmax over the last axis.

    Entries equal to -inf map to an exact 0. A row with no finite entry is
    a contract violation (``on_empty="error"``); attention layers pass
    ``on_empty="zeros"`` so fully masked rows become all-zero rows, which is
    the convention that makes hard token drops exact.
    """
    a = _as_tensor(a)
    x = a.data
    if np.isnan(x).any() or np.isposinf(x).any():
        raise ContractError("softmax_rows input must be finite or -inf")
    rowmax = np.max(x, axis=-1, keepdims=True)
    empty = np.isneginf(rowmax)
    if empty.any():
        if on_empty == "error":
            raise DegenerateRowError("softmax_rows: a row is entirely -inf")
        rowmax = np.where(empty, 0.0, rowmax)
    ex = np.exp(x - rowmax)
    denom = ex.sum(axis=-1, keepdims=True)
    safe = np.where(denom == 0.0, 1.0, denom)
    out = (ex / safe).astype(a.dtype, copy=False)

    def back(g):
        dot = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x = _as_tensor(x)
    gain = _as_tensor(gain, x.dtype)
    bias = _as_tensor(bias, x.dtype)
    if x.shape[-1] < 1:
        raise ShapeError("layer_norm needs at least one feature")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = (xhat * gain.data + bias.data).astype(x.dtype, copy=False)
    h = x.shape[-1]

    def back(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
        gx = (dxhat - m1 - xhat * m2) * inv_std
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return _node(out, (x, gain, bias), back)


def cross_entropy(logits: Tensor, target: Tensor) -> Tensor:
    """Mean over rows of -sum(target * log_softmax(logits)).

    ``target`` must hold nonnegative rows each summing to 1.
    """
    logits = _as_tensor(logits)
    target = _as_tensor(target, logits.dtype)
    if logits.shape != target.shape:
        raise ShapeError(f"cross_entropy shape mismatch: {logits.shape} vs {target.shape}")
    t = target.data
    if (t < -1e-9).any() or not np.allclose(t.sum(axis=-1), 1.0, atol=1e-6):
        raise ContractError("cross_entropy target rows must be a distribution")
    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    logsumexp = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    log_probs = z - logsumexp
    n_rows = int(np.prod(z.shape[:-1])) if z.ndim > 1 else 1
    out = np.asarray(-(t * log_probs).sum() / n_rows, dtype=logits.dtype)
    probs = np.exp(log_probs)

    def back(g):
        return ((probs - t) * (g / n_rows), None)

    return _node(out, (logits, target), back)


def bce_with_logits(logits: Tensor, targets, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy against 0/1 targets, stable in the logits.

    ``pos_weight`` scales the positive-class term (class-imbalance lever);
    the mean is over element count either way.
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=logits.dtype)
    if logits.shape != y.shape:
        raise ShapeError(f"bce_with_logits shape mismatch: {logits.shape} vs {y.shape}")
    if logits.data.size == 0:
        raise ContractError("bce_with_logits on an empty tensor")
    x = logits.data
    softplus = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    # (1-y) softplus(x) + pos_weight * y * softplus(-x)
    loss = (1.0 - y) * softplus + pos_weight * y * (softplus - x)
    n = x.size
    out = np.asarray(loss.sum() / n, dtype=logits.dtype)

    def back(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        grad = (1.0 - y) * s - pos_weight * y * (1.0 - s)
        return (grad * (g / n),)

    return _node(out, (logits,), back)


# ---------------------------------------------------------------------------
# Optimizer and verification
# ---------------------------------------------------------------------------


def adamw_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: dict,
               lr: float, weight_decay: float,
               betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-6
               ) -> Sequence[Tensor]:
    """One AdamW update: bias-corrected moments, decoupled weight decay.

    ``state`` is mutated in place; pass ``{}`` on the first call.
    """
    b1, b2 = betas
    step = state.get("step", 0) + 1
    state["step"] = step
    moments = state.setdefault("moments", {})
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if i not in moments:
            moments[i] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = moments[i]
        # in-place moment updates; this loop is memory-bandwidth bound
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = np.sqrt(v / c2)
        update += eps
        np.divide(m / c1, update, out=update)
        update *= lr
        if weight_decay:
            update += (lr * weight_decay) * p.data
        p.data -= update
    return params


def gradient_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor],
                   eps: float = 1e-5, max_entries_per_param: int | None = None,
                   seed: int = 0) -> float:
    """Compare analytic gradients of ``f(params)`` to central differences.

    Returns the maximum over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``. When
    ``max_entries_per_param`` is set, coordinates are subsampled per tensor
    with a deterministic RNG; small tensors are always checked in full.
    """
    if eps <= 0:
        raise ContractError("gradient_check requires eps > 0")
    zero_grads(params)
    loss = f(params)
    if not np.isfinite(loss.data).all():
        raise ContractError("gradient_check: loss is not finite")
    backward(loss, params=params)
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, a in zip(params, analytic):
        n = p.data.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            coords = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            coords = range(n)
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                up = float(f(params).data)
                flat[i] = orig - eps
                down = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise ContractError("gradient_check: perturbed loss is not finite")
            numeric = (up - down) / (2.0 * eps)
            ana = float(a.reshape(-1)[i])
            err = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
