"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is deliberately small: n-d arrays, a handful of primitives
(each with a hand-written backward), and an iterative topological
backward pass.  Everything runs at 64-bit so gradient checks and
run-to-run determinism are exact at desk scale.

A lightweight allocation tracker (``live_bytes`` / ``peak_bytes``)
records the resident size of tensor-owned buffers; the scalability
tests use it to verify that activation memory stays bounded by a
single mini-batch rather than the whole graph.
"""

from __future__ import annotations

import weakref

import numpy as np

__all__ = [
    "NonFiniteError",
    "Tensor",
    "concat",
    "constant",
    "layer_norm_last",
    "live_bytes",
    "narrow_last",
    "narrow_rows",
    "peak_bytes",
    "relu",
    "reset_peak_bytes",
    "rows_cosine",
    "rows_l2norm",
    "segment_mean",
    "sigmoid",
    "softmax_last",
    "tanh",
]


class NonFiniteError(ValueError):
    """NaN reached a computation that cannot give it a meaning.

    Raised instead of silently propagating NaN so that training loops can
    distinguish numerical blow-up from programming errors.
    """


_LIVE_BYTES = 0
_PEAK_BYTES = 0


def _track(nbytes: int) -> None:
    global _LIVE_BYTES, _PEAK_BYTES
    _LIVE_BYTES += nbytes
    if _LIVE_BYTES > _PEAK_BYTES:
        _PEAK_BYTES = _LIVE_BYTES


def _untrack(nbytes: int) -> None:
    global _LIVE_BYTES
    _LIVE_BYTES -= nbytes


def live_bytes() -> int:
    """Bytes currently owned by live Tensor buffers (views excluded)."""
    return _LIVE_BYTES


def peak_bytes() -> int:
    """High-water mark of :func:`live_bytes` since the last reset."""
    return _PEAK_BYTES


def reset_peak_bytes() -> int:
    """Reset the high-water mark to the current live size and return it."""
    global _PEAK_BYTES
    _PEAK_BYTES = _LIVE_BYTES
    return _PEAK_BYTES


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """An n-d float64 array that records how it was computed.

    `requires_grad` marks leaves whose `.grad` accumulates during
    `backward()`; intermediate nodes inherit the flag from their
    parents.  Data is never mutated by ops, so repeated evaluation of
    the same expression is bitwise-identical.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        if arr.base is None:  # only buffers we own count toward the tracker
            _track(arr.nbytes)
            weakref.finalize(self, _untrack, arr.nbytes)

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...]) -> "Tensor":
        out = Tensor(data)
        grad_parents = tuple(p for p in parents if p.requires_grad)
        if grad_parents:
            out.requires_grad = True
            out._parents = grad_parents
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _wrap(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))

    def __add__(self, other) -> "Tensor":
        other = Tensor._wrap(other)
        out = Tensor._result(self.data + other.data, (self, other))
        if out.requires_grad:
            a, b = self, other

            def backward(g: np.ndarray) -> None:
                if a.requires_grad:
                    a.accumulate_grad(_unbroadcast(g, a.data.shape))
                if b.requires_grad:
                    b.accumulate_grad(_unbroadcast(g, b.data.shape))

            out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = Tensor._result(-self.data, (self,))
        if out.requires_grad:
            a = self
            out._backward = lambda g: a.accumulate_grad(-g)
        return out

    def __sub__(self, other) -> "Tensor":
        return self + (-Tensor._wrap(other))

    def __rsub__(self, other) -> "Tensor":
        return Tensor._wrap(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = Tensor._wrap(other)
        out = Tensor._result(self.data * other.data, (self, other))
        if out.requires_grad:
            a, b = self, other

            def backward(g: np.ndarray) -> None:
                if a.requires_grad:
                    a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
                if b.requires_grad:
                    b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

            out._backward = backward
        return out

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        other = Tensor._wrap(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul expects tensors with at least 2 dimensions")
        if a.data.shape[-1] != b.data.shape[-2]:
            raise ValueError(
                f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}"
            )
        out = Tensor._result(a.data @ b.data, (a, b))
        if out.requires_grad:

            def backward(g: np.ndarray) -> None:
                if a.requires_grad:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                    a.accumulate_grad(_unbroadcast(ga, a.data.shape))
                if b.requires_grad:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                    b.accumulate_grad(_unbroadcast(gb, b.data.shape))

            out._backward = backward
        return out

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        out = Tensor._result(a.data.reshape(*shape), (a,))
        if out.requires_grad:
            out._backward = lambda g: a.accumulate_grad(g.reshape(a.data.shape))
        return out

    def transpose(self, *axes: int) -> "Tensor":
        a = self
        inv = np.argsort(axes)
        out = Tensor._result(np.ascontiguousarray(a.data.transpose(*axes)), (a,))
        if out.requires_grad:
            out._backward = lambda g: a.accumulate_grad(g.transpose(*inv))
        return out

    def take_rows(self, idx: np.ndarray) -> "Tensor":
        """Gather rows of a 2-d tensor; output shape = idx.shape + (d,)."""
        a = self
        idx = np.asarray(idx, dtype=np.intp)
        if a.data.ndim != 2:
            raise ValueError("take_rows expects a 2-d tensor")
        out = Tensor._result(a.data[idx], (a,))
        if out.requires_grad:

            def backward(g: np.ndarray) -> None:
                acc = np.zeros_like(a.data)
                np.add.at(acc, idx, g)
                a.accumulate_grad(acc)

            out._backward = backward
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        out = Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,))
        if out.requires_grad:

            def backward(g: np.ndarray) -> None:
                if axis is None:
                    a.accumulate_grad(np.broadcast_to(g, a.data.shape).copy())
                else:
                    gg = g if keepdims else np.expand_dims(g, axis)
                    a.accumulate_grad(np.broadcast_to(gg, a.data.shape).copy())

            out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- autodiff ------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this node into every reachable leaf."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no grad")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        if grad is None:
            grad = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._parents:
                node.grad = None  # free intermediate grads as we go


def constant(data) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(np.asarray(data, dtype=np.float64))


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor._result(np.concatenate(datas, axis=axis), tuple(tensors))
    if out.requires_grad:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)
        parents = list(tensors)

        def backward(g: np.ndarray) -> None:
            for t, lo, hi in zip(parents, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(lo, hi)
                    t.accumulate_grad(g[tuple(sl)])

        out._backward = backward
    return out


def narrow_rows(t: Tensor, start: int, size: int) -> Tensor:
    """Slice `size` rows starting at `start` along the first axis."""
    a = t
    out = Tensor._result(np.ascontiguousarray(a.data[start : start + size]), (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            acc = np.zeros_like(a.data)
            acc[start : start + size] = g
            a.accumulate_grad(acc)

        out._backward = backward
    return out


def narrow_last(t: Tensor, start: int, size: int) -> Tensor:
    """Slice `size` entries starting at `start` along the last axis."""
    a = t
    out = Tensor._result(np.ascontiguousarray(a.data[..., start : start + size]), (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            acc = np.zeros_like(a.data)
            acc[..., start : start + size] = g
            a.accumulate_grad(acc)

        out._backward = backward
    return out


def tanh(t: Tensor) -> Tensor:
    a = t
    y = np.tanh(a.data)
    out = Tensor._result(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: a.accumulate_grad(g * (1.0 - y * y))
    return out


def sigmoid(t: Tensor) -> Tensor:
    a = t
    # split by sign to avoid overflow in exp
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor._result(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: a.accumulate_grad(g * y * (1.0 - y))
    return out


def relu(t: Tensor) -> Tensor:
    a = t
    y = np.maximum(a.data, 0.0)
    out = Tensor._result(y, (a,))
    if out.requires_grad:
        out._backward = lambda g: a.accumulate_grad(g * (a.data > 0.0))
    return out


def softmax_last(t: Tensor) -> Tensor:
    """Row-stabilized softmax over the last axis.

    Entries of -inf are allowed (they get zero weight); NaN input is an
    error.  Each row of the result is nonnegative and sums to 1.
    """
    a = t
    x = a.data
    if np.isnan(x).any():
        raise NonFiniteError("softmax input contains NaN")
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)  # all-(-inf) rows would poison exp
    e = np.exp(x - m)
    s = e.sum(axis=-1, keepdims=True)
    # fully masked rows (all -inf) fall back to uniform rather than 0/0
    y = np.where(s > 0.0, e / np.where(s > 0.0, s, 1.0), 1.0 / x.shape[-1])
    out = Tensor._result(y, (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            dot = (g * y).sum(axis=-1, keepdims=True)
            a.accumulate_grad(y * (g - dot))

        out._backward = backward
    return out


def segment_mean(values: Tensor, seg: np.ndarray, n_segments: int) -> Tensor:
    """Mean of value rows per segment id; empty segments give zero rows."""
    seg = np.asarray(seg, dtype=np.intp)
    a = values
    counts = np.bincount(seg, minlength=n_segments).astype(np.float64)
    denom = np.maximum(counts, 1.0)[:, None]
    acc = np.zeros((n_segments, a.data.shape[-1]))
    np.add.at(acc, seg, a.data)
    out = Tensor._result(acc / denom, (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            a.accumulate_grad(g[seg] / denom[seg])

        out._backward = backward
    return out


def layer_norm_last(t: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance."""
    a = t
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = Tensor._result(y, (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            gx = inv * (
                g
                - g.mean(axis=-1, keepdims=True)
                - y * (g * y).mean(axis=-1, keepdims=True)
            )
            a.accumulate_grad(gx)

        out._backward = backward
    return out


def rows_l2norm(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Euclidean norm of each row of a 2-d tensor; safe gradient at 0."""
    a = t
    norms = np.sqrt((a.data * a.data).sum(axis=-1))
    out = Tensor._result(norms, (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            denom = np.maximum(norms, eps)[..., None]
            a.accumulate_grad(g[..., None] * a.data / denom)

        out._backward = backward
    return out


def rows_cosine(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity per row pair; rows with zero norm score 0 (no NaN)."""
    if a.data.shape != b.data.shape:
        raise ValueError("rows_cosine expects equal shapes")
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = np.sqrt((b.data * b.data).sum(axis=-1))
    dot = (a.data * b.data).sum(axis=-1)
    ok = (na > eps) & (nb > eps)
    denom = np.where(ok, na * nb, 1.0)
    y = np.where(ok, dot / denom, 0.0)
    out = Tensor._result(y, (a, b))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            gm = np.where(ok, g, 0.0)[..., None]
            if a.requires_grad:
                sa = np.maximum(na, eps)[..., None]
                ga = gm * (b.data / denom[..., None] - y[..., None] * a.data / (sa * sa))
                a.accumulate_grad(ga)
            if b.requires_grad:
                sb = np.maximum(nb, eps)[..., None]
                gb = gm * (a.data / denom[..., None] - y[..., None] * b.data / (sb * sb))
                b.accumulate_grad(gb)

        out._backward = backward
    return out
