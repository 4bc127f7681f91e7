"""Dense float64 tensors with taped reverse-mode automatic differentiation.

This is the numerical substrate for the disaggregation network: a Tensor
wraps a numpy float64 array plus an optional gradient slot, every op links
the output to its parents with a backward closure, and ``backward`` on a
scalar walks that tape once in reverse topological order. The tape is
consumed by the walk; calling backward twice on the same scalar raises.

Scope is deliberately narrow: 64-bit floats only, no broadcasting beyond
scalar-with-tensor, and only the ops the network actually needs (dilated
1-d convolution, fully connected layers, the usual activations, and a
handful of shape ops).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, SizeError, UsageError

Array = np.ndarray
BackwardFn = Callable[[Array], tuple]


class Tensor:
    """A dense float64 array with an optional same-shape gradient slot.

    Data is treated as immutable once constructed (optimizers may rebind
    or update leaf ``data`` between graph builds, never mid-graph). Only
    the ``grad`` slot of requires_grad leaves is written by backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; all dispatch to the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise UsageError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(scalar))

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _from_op(data: Array, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _reduce_to(g: Array, shape: tuple[int, ...]) -> Array:
    # only scalar-with-tensor broadcasting exists, so the reduction is a full sum
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match "
                             "(only scalar-with-tensor broadcasting is allowed)")


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_same_shape(a, b, "add")
    data = a.data + b.data

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _from_op(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _check_same_shape(a, b, "sub")
    data = a.data - b.data

    def bwd(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _from_op(data, (a, b), bwd)


def neg(x) -> Tensor:
    x = _coerce(x)
    return _from_op(-x.data, (x,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    """Hadamard product; one operand may be a scalar."""
    a, b = _coerce(a), _coerce(b)
    _check_same_shape(a, b, "mul")
    data = a.data * b.data

    def bwd(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _from_op(data, (a, b), bwd)


# the gating product of the network output is exactly this op
elementwise_mul = mul


def tensor_sum(x) -> Tensor:
    x = _coerce(x)
    data = np.asarray(x.data.sum())

    def bwd(g):
        return (np.full(x.shape, float(g)),)

    return _from_op(data, (x,), bwd)


def mean(x) -> Tensor:
    x = _coerce(x)
    n = x.size
    data = np.asarray(x.data.mean())

    def bwd(g):
        return (np.full(x.shape, float(g) / n),)

    return _from_op(data, (x,), bwd)


def sum_last(x) -> Tensor:
    """Sum along the last axis."""
    x = _coerce(x)
    if x.data.ndim < 1:
        raise UsageError("sum_last needs at least one axis")
    n = x.shape[-1]
    data = x.data.sum(axis=-1)

    def bwd(g):
        return (np.repeat(g[..., None], n, axis=-1),)

    return _from_op(data, (x,), bwd)


# -- activations ----------------------------------------------------------


def relu(x) -> Tensor:
    x = _coerce(x)
    data = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0.0),)

    return _from_op(data, (x,), bwd)


def _sigmoid_stable(x: Array) -> Array:
    # piecewise form never exponentiates a positive argument, so large
    # inputs saturate cleanly to exact 0.0 / 1.0 instead of overflowing
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = _coerce(x)
    s = _sigmoid_stable(x.data)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _from_op(s, (x,), bwd)


def softmax(x) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction."""
    x = _coerce(x)
    if x.data.ndim < 1:
        raise UsageError("softmax needs at least one axis")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _from_op(s, (x,), bwd)


def log(x) -> Tensor:
    """Natural log; callers must keep the input positive."""
    x = _coerce(x)
    data = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return _from_op(data, (x,), bwd)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the input was inside."""
    x = _coerce(x)
    data = np.clip(x.data, lo, hi)

    def bwd(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return _from_op(data, (x,), bwd)


# -- linear algebra --------------------------------------------------------


def linear(input, weight, bias=None) -> Tensor:
    """Affine map on the last axis: ``input @ weight.T + bias``.

    weight is [m, n]; input is [..., n] and any leading axes are treated
    as a batch. The bias broadcast over batch rows is handled here with
    its exact adjoint (column sum), keeping the no-broadcast rule for the
    generic elementwise ops intact.
    """
    x, w = _coerce(input), _coerce(weight)
    if w.data.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-d, got shape {w.shape}")
    if x.data.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear: input shape {x.shape} does not match weight {w.shape}")
    m, n = w.shape
    b = _coerce(bias) if bias is not None else None
    if b is not None and b.shape != (m,):
        raise DimensionError(f"linear: bias shape {b.shape} must be ({m},)")

    data = x.data @ w.data.T
    if b is not None:
        data = data + b.data

    def bwd(g):
        gx = g @ w.data
        g2 = g.reshape(-1, m)
        x2 = x.data.reshape(-1, n)
        gw = g2.T @ x2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _from_op(data, parents, bwd)


def conv1d(input, kernels, bias=None, dilation: int = 1, padding: str = "same") -> Tensor:
    """Dilated 1-d convolution (cross-correlation) over the last axis.

    input is [C_in, T] or [B, C_in, T]; kernels are [C_out, C_in, k].
    "same" zero-pads (k-1)*dilation/2 on each side (k must be odd) so the
    output keeps length T; "valid" yields T - (k-1)*dilation positions.
    The receptive field of one output position is (k-1)*dilation + 1.
    """
    x, k = _coerce(input), _coerce(kernels)
    if k.data.ndim != 3:
        raise DimensionError(f"conv1d: kernels must be [C_out, C_in, k], got shape {k.shape}")
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"conv1d: input must be [C_in, T] or [B, C_in, T], got shape {x.shape}")
    c_out, c_in, ksz = k.shape
    if x.shape[-2] != c_in:
        raise DimensionError(f"conv1d: input has {x.shape[-2]} channels, kernels expect {c_in}")
    dilation = int(dilation)
    if dilation < 1:
        raise UsageError(f"conv1d: dilation must be >= 1, got {dilation}")
    b = _coerce(bias) if bias is not None else None
    if b is not None and b.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {b.shape} must be ({c_out},)")

    length = x.shape[-1]
    span = (ksz - 1) * dilation + 1
    if padding == "same":
        if ksz % 2 == 0:
            raise UsageError("conv1d: same padding requires an odd kernel size")
        pad = (ksz - 1) * dilation // 2
    elif padding == "valid":
        pad = 0
        if length < span:
            raise SizeError(f"conv1d: input length {length} is shorter than the "
                            f"receptive field {span} (k={ksz}, dilation={dilation})")
    else:
        raise UsageError(f"conv1d: unknown padding {padding!r} (use 'same' or 'valid')")

    pad_width = [(0, 0)] * (x.data.ndim - 1) + [(pad, pad)]
    xp = np.pad(x.data, pad_width) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, span, axis=-1)[..., ::dilation]
    data = np.einsum("...ctk,ock->...ot", win, k.data, optimize=True)
    if b is not None:
        data = data + b.data[:, None]
    t_out = data.shape[-1]

    def bwd(g):
        gk = np.einsum("...ot,...ctk->ock", g, win, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(ksz):
            tap = np.einsum("oc,...ot->...ct", k.data[:, :, j], g, optimize=True)
            gxp[..., j * dilation:j * dilation + t_out] += tap
        gx = gxp[..., pad:pad + length] if pad else gxp
        if b is None:
            return gx, gk
        return gx, gk, np.einsum("...ot->o", g)

    parents = (x, k) if b is None else (x, k, b)
    return _from_op(data, parents, bwd)


# -- shape ops --------------------------------------------------------------


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_coerce(p) for p in parts]
    if not parts:
        raise UsageError("concat: need at least one tensor")
    ndim = parts[0].data.ndim
    ax = axis if axis >= 0 else axis + ndim
    for p in parts[1:]:
        if p.data.ndim != ndim:
            raise DimensionError("concat: rank mismatch between parts")
        for d in range(ndim):
            if d != ax and p.shape[d] != parts[0].shape[d]:
                raise DimensionError(f"concat: shapes {parts[0].shape} and {p.shape} "
                                     f"differ outside axis {axis}")
    data = np.concatenate([p.data for p in parts], axis=ax)
    splits = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=ax))

    return _from_op(data, tuple(parts), bwd)


def slice_last(x, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis."""
    x = _coerce(x)
    n = x.shape[-1]
    if not (0 <= start < stop <= n):
        raise UsageError(f"slice_last: [{start}:{stop}] out of range for length {n}")
    data = x.data[..., start:stop].copy()

    def bwd(g):
        gx = np.zeros(x.shape)
        gx[..., start:stop] = g
        return (gx,)

    return _from_op(data, (x,), bwd)


def tile_rows(x, reps: int) -> Tensor:
    """Insert an axis before the last one and repeat: [..., n] -> [..., reps, n]."""
    x = _coerce(x)
    if reps < 1:
        raise UsageError(f"tile_rows: reps must be >= 1, got {reps}")
    target = x.shape[:-1] + (reps,) + x.shape[-1:]
    data = np.broadcast_to(x.data[..., None, :], target).copy()

    def bwd(g):
        return (g.sum(axis=-2),)

    return _from_op(data, (x,), bwd)


def transpose_last2(x) -> Tensor:
    """Swap the last two axes."""
    x = _coerce(x)
    if x.data.ndim < 2:
        raise UsageError("transpose_last2 needs at least two axes")
    data = np.swapaxes(x.data, -1, -2).copy()

    def bwd(g):
        return (np.swapaxes(g, -1, -2),)

    return _from_op(data, (x,), bwd)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _coerce(x)
    data = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return _from_op(data, (x,), bwd)


# -- reverse pass -------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    The loss must be a scalar. Each tape node is visited exactly once; the
    walk consumes the tape, so a second backward on the same scalar raises.
    Leaf gradients accumulate across separate graphs until ``zero_grad``.
    """
    if not isinstance(loss, Tensor):
        raise UsageError("backward expects a Tensor")
    if loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise UsageError("this graph was already consumed by a previous backward pass")

    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg

    # consume the tape: free saved activations and forbid a second pass
    for node in order:
        if node._backward is not None:
            node._parents = ()
            node._backward = None
            node._consumed = True
    loss._consumed = True
