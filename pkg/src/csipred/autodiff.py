"""Dense-tensor engine with dynamic reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float64 for correctness work, float32
selectable for throughput runs). Each differentiable op links the result to
its inputs with a backward closure; ``Tensor.backward()`` replays the tape in
reverse topological order. A graph is confined to one thread; raw ``.data``
arrays are safe to share read-only.

Array broadcasting is deliberately restricted: the only implicit shape mixing
is a bias add along the last axis. Everything else (step/channel expansion,
constant masks) goes through explicit ops, which keeps gradient bookkeeping
obvious.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, ShapeMismatchError

__all__ = [
    "Tensor",
    "activation",
    "concat_last",
    "custom_op",
    "grad_check",
    "matmul",
    "relu",
    "sigmoid",
    "softmax_lastaxis",
    "tanh",
]


class Tensor:
    """A dense real-valued n-d array participating in reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def assert_finite(self, label: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise ContractError(f"{label} contains non-finite values")
        return self

    # -- graph plumbing ------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar (size-1) tensor."""
        if self.size != 1:
            raise ContractError(f"backward() requires a scalar output, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, _neg_operand(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # convenience aliases used throughout the model code
    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def expand(self, axis: int, n: int):
        return expand(self, axis, n)

    def take_step(self, index: int):
        return take_step(self, index)

    def swap_last2(self):
        return swap_last2(self)


def _neg_operand(x):
    if isinstance(x, Tensor):
        return neg(x)
    return -np.asarray(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _const_like(x, ref: np.ndarray) -> np.ndarray:
    """Coerce a python scalar / ndarray constant to the ref dtype and shape."""
    arr = np.asarray(x, dtype=ref.dtype)
    if arr.shape != ref.shape:
        arr = np.broadcast_to(arr, ref.shape)
    return arr


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    """Record an externally computed op on the tape.

    `backward(g)` receives the output gradient and must accumulate into the
    parents itself (via Tensor._accumulate); used for fused kernels whose
    gradients are produced in one call.
    """
    return _make(np.ascontiguousarray(data), parents, backward)


# -- arithmetic ----------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    """Elementwise add. `b` may be a same-shape tensor/constant, a scalar, or a
    1-d bias added along the last axis."""
    if not isinstance(b, Tensor):
        return _make(a.data + _const_like(b, a.data), [a], lambda g, a=a: a._accumulate(g))
    if a.data.shape == b.data.shape:
        def bwd(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
        return _make(a.data + b.data, [a, b], bwd)
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        def bwd_bias(g, a=a, b=b):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return _make(a.data + b.data, [a, b], bwd_bias)
    raise ShapeMismatchError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, [a], lambda g, a=a: a._accumulate(-g))


def mul(a: Tensor, b) -> Tensor:
    """Hadamard product. Non-tensor `b` is treated as a constant."""
    if not isinstance(b, Tensor):
        c = _const_like(b, a.data)
        return _make(a.data * c, [a], lambda g, a=a, c=c: a._accumulate(g * c))
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def bwd(g, a=a, b=b):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(a.data * b.data, [a, b], bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Supported operand ranks: (2d, 2d), (nd, 2d) and (nd, nd) with equal
    leading axes. Gradients contract with the transposed counterpart.
    """
    if not isinstance(b, Tensor):
        b = Tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeMismatchError(f"matmul needs >=2-d operands, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner extents differ, {ad.shape} x {bd.shape}")
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeMismatchError(f"matmul: leading axes differ, {ad.shape} x {bd.shape}")

    def bwd(g, a=a, b=b):
        ad, bd = a.data, b.data
        if a.requires_grad:
            ga = g @ np.swapaxes(bd, -1, -2)
            a._accumulate(ga)
        if b.requires_grad:
            gb = np.swapaxes(ad, -1, -2) @ g
            if bd.ndim == 2 and gb.ndim > 2:
                gb = gb.reshape(-1, *gb.shape[-2:]).sum(axis=0)
            b._accumulate(gb)

    return _make(ad @ bd, [a, b], bwd)


# -- activations ---------------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _make(s, [x], lambda g, x=x, s=s: x._accumulate(g * s * (1.0 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _make(t, [x], lambda g, x=x, t=t: x._accumulate(g * (1.0 - t * t)))


def relu(x: Tensor) -> Tensor:
    m = x.data > 0
    return _make(x.data * m, [x], lambda g, x=x, m=m: x._accumulate(g * m))


_ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise activation; kind is one of sigmoid / tanh / relu."""
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation kind {kind!r}") from None


def softmax_lastaxis(x: Tensor) -> Tensor:
    """Numerically stabilized softmax along the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g, x=x, s=s):
        inner = (g * s).sum(axis=-1, keepdims=True)
        x._accumulate(s * (g - inner))

    return _make(s, [x], bwd)


# -- reductions and shape ops ---------------------------------------------------


def sum_all(x: Tensor) -> Tensor:
    out = np.array(x.data.sum(), dtype=x.data.dtype).reshape(())
    return _make(out, [x], lambda g, x=x: x._accumulate(np.broadcast_to(g, x.data.shape)))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.array(x.data.mean(), dtype=x.data.dtype).reshape(())
    return _make(out, [x], lambda g, x=x, n=n: x._accumulate(np.broadcast_to(g / n, x.data.shape)))


def sum_axis(x: Tensor, axis: int) -> Tensor:
    out = x.data.sum(axis=axis)

    def bwd(g, x=x, axis=axis):
        x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.data.shape))

    return _make(out, [x], bwd)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, [x], lambda g, x=x: x._accumulate(g.reshape(x.data.shape)))


def swap_last2(x: Tensor) -> Tensor:
    out = np.ascontiguousarray(np.swapaxes(x.data, -1, -2))
    return _make(out, [x], lambda g, x=x: x._accumulate(np.swapaxes(g, -1, -2)))


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis of extent n by repetition (backward sums it away)."""
    out = np.ascontiguousarray(np.repeat(np.expand_dims(x.data, axis), n, axis=axis))
    return _make(out, [x], lambda g, x=x, axis=axis: x._accumulate(g.sum(axis=axis)))


def take_step(x: Tensor, index: int) -> Tensor:
    """Select one position along axis 1 of a [B, T, ...] tensor."""
    idx = index if index >= 0 else x.data.shape[1] + index
    out = np.ascontiguousarray(x.data[:, idx])

    def bwd(g, x=x, idx=idx):
        full = np.zeros_like(x.data)
        full[:, idx] = g
        x._accumulate(full)

    return _make(out, [x], bwd)


def concat_last(parts: Iterable[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    parts = list(parts)
    widths = [p.data.shape[-1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=-1)

    def bwd(g, parts=parts, widths=widths):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[..., off:off + w])
            off += w

    return _make(out, parts, bwd)


# -- gradient verification -------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    Error per coordinate is |autodiff - fd| / max(1, |fd|). `f` must return a
    scalar tensor.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"eps {eps} outside [1e-7, 1e-3]")
    probe = Tensor(x.data.astype(np.float64), requires_grad=True)
    out = f(probe)
    if out.size != 1:
        raise ContractError(f"grad_check: f must be scalar-valued, got shape {out.shape}")
    out.backward()
    auto = probe.grad.copy() if probe.grad is not None else np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(probe.data)).item()
        flat[i] = orig - eps
        lo = f(Tensor(probe.data)).item()
        flat[i] = orig
        fd[i] = (hi - lo) / (2.0 * eps)
    fd = fd.reshape(probe.data.shape)
    rel = np.abs(auto - fd) / np.maximum(1.0, np.abs(fd))
    return float(rel.max())
