"""Parameter storage, primitive layers, Adam, and gradient checking.

Every learned matrix in the model lives in a :class:`ParameterStore`
under a dotted name, so checkpoints, the optimizer, and the gradient
checker all see one flat namespace.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import (
    NonFiniteError,
    Tensor,
    layer_norm_last,
    narrow_last,
    sigmoid,
    softmax_last,
    tanh,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ParameterStore:
    """Flat named map of trainable tensors plus per-parameter Adam state."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def create(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.data)
        self._v[name] = np.zeros_like(t.data)
        self._t[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._params[name]

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def opt_state(self, name: str) -> tuple[np.ndarray, np.ndarray, int]:
        return self._m[name], self._v[name], self._t[name]

    def set_opt_state(self, name: str, m: np.ndarray, v: np.ndarray, t: int) -> None:
        self._m[name] = np.asarray(m, dtype=np.float64).reshape(self._params[name].data.shape)
        self._v[name] = np.asarray(v, dtype=np.float64).reshape(self._params[name].data.shape)
        self._t[name] = int(t)


# -- initialization -----------------------------------------------------------


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def embedding_init(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    # N(0, 1/dim): variance shrinks with width so dot products stay O(1)
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(rows, dim))


# -- primitive layers ----------------------------------------------------------


def linear(x: Tensor, w: Tensor) -> Tensor:
    """Matrix product x @ w; shapes must chain."""
    return x @ w


def softmax_rows(x: Tensor) -> Tensor:
    """Stabilized softmax over the last axis of a 2-d tensor."""
    return softmax_last(x)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return layer_norm_last(x) * gain + bias


def create_gru(store: ParameterStore, prefix: str, d_in: int, d_h: int,
               rng: np.random.Generator) -> None:
    """Register GRU weights under `prefix` (gate order: reset, update, candidate)."""
    store.create(f"{prefix}.W_ih", xavier_uniform(rng, d_in, 3 * d_h))
    store.create(f"{prefix}.W_hh", xavier_uniform(rng, d_h, 3 * d_h))
    store.create(f"{prefix}.b_ih", np.zeros(3 * d_h))
    store.create(f"{prefix}.b_hh", np.zeros(3 * d_h))


def gru_batch(x: Tensor, lengths: np.ndarray, store: ParameterStore, prefix: str) -> Tensor:
    """Run a GRU over `x` [B, L, d_in]; return final hidden states [B, d_h].

    `lengths[b]` gives the true length of sequence b; steps past it leave
    that row's hidden state untouched.  All lengths must be >= 1.
    """
    b, l, _ = x.shape
    if l < 1 or (np.asarray(lengths) < 1).any():
        raise ValueError("gru_batch requires sequences of length >= 1")
    w_ih = store[f"{prefix}.W_ih"]
    w_hh = store[f"{prefix}.W_hh"]
    b_ih = store[f"{prefix}.b_ih"]
    b_hh = store[f"{prefix}.b_hh"]
    d_h = w_hh.shape[0]
    h = Tensor(np.zeros((b, d_h)))
    steps = np.arange(l)[None, :] < np.asarray(lengths)[:, None]
    for t in range(l):
        xt = slice_time(x, t)
        gi = xt @ w_ih + b_ih
        gh = h @ w_hh + b_hh
        r = sigmoid(narrow_last(gi, 0, d_h) + narrow_last(gh, 0, d_h))
        z = sigmoid(narrow_last(gi, d_h, d_h) + narrow_last(gh, d_h, d_h))
        n = tanh(narrow_last(gi, 2 * d_h, d_h) + r * narrow_last(gh, 2 * d_h, d_h))
        h_new = (Tensor(np.ones(1)) - z) * n + z * h
        m = Tensor(steps[:, t : t + 1].astype(np.float64))
        h = h_new * m + h * (Tensor(np.ones(1)) - m)
    return h


def slice_time(x: Tensor, t: int) -> Tensor:
    """x[:, t, :] with gradient scatter back into the sequence."""
    a = x
    out = Tensor._result(np.ascontiguousarray(a.data[:, t, :]), (a,))
    if out.requires_grad:

        def backward(g: np.ndarray) -> None:
            acc = np.zeros_like(a.data)
            acc[:, t, :] = g
            a.accumulate_grad(acc)

        out._backward = backward
    return out


def gru_sequence(x: Tensor, store: ParameterStore, prefix: str) -> Tensor:
    """Final hidden state of a single sequence [l, d_in] -> [d_h]."""
    l = x.shape[0]
    if l < 1:
        raise ValueError("gru_sequence requires a non-empty sequence")
    out = gru_batch(x.reshape(1, l, x.shape[1]), np.array([l]), store, prefix)
    return out.reshape(out.shape[1])


def create_attention(store: ParameterStore, prefix: str, d: int,
                     rng: np.random.Generator) -> None:
    for nm in ("Wq", "Wk", "Wv", "Wo"):
        store.create(f"{prefix}.{nm}", xavier_uniform(rng, d, d))
    store.create(f"{prefix}.ln_g", np.ones(d))
    store.create(f"{prefix}.ln_b", np.zeros(d))


def multi_head_attention_batched(
    x: Tensor,
    store: ParameterStore,
    prefix: str,
    heads: int,
    key_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Scaled dot-product self-attention over [B, n, d].

    Returns the projected output [B, n, d] and the head-averaged
    attention matrix [B, n, n].  `key_mask` [B, n] (True = real slot)
    removes padded rows from the key side; every batch row must keep at
    least one real key.
    """
    bsz, n, d = x.shape
    if d % heads != 0:
        raise ValueError(f"model dim {d} not divisible by heads {heads}")
    dh = d // heads
    q = (x @ store[f"{prefix}.Wq"]).reshape(bsz, n, heads, dh).transpose(0, 2, 1, 3)
    k = (x @ store[f"{prefix}.Wk"]).reshape(bsz, n, heads, dh).transpose(0, 2, 1, 3)
    v = (x @ store[f"{prefix}.Wv"]).reshape(bsz, n, heads, dh).transpose(0, 2, 1, 3)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    if key_mask is not None:
        add = np.where(key_mask[:, None, None, :], 0.0, -np.inf)
        scores = scores + Tensor(np.broadcast_to(add, (bsz, heads, n, n)).copy())
    att = softmax_last(scores)  # [B, H, n, n]
    out = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, n, d)
    out = out @ store[f"{prefix}.Wo"]
    alpha = att.mean(axis=1)  # average heads -> [B, n, n]
    return out, alpha


def multi_head_attention(
    x: Tensor,
    store: ParameterStore,
    prefix: str,
    heads: int,
    key_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Single-sequence form: [n, d] -> ([n, d], [n, n])."""
    n, d = x.shape
    km = None if key_mask is None else np.asarray(key_mask).reshape(1, n)
    y, a = multi_head_attention_batched(x.reshape(1, n, d), store, prefix, heads, km)
    return y.reshape(n, d), a.reshape(n, n)


def attention_block(
    x: Tensor,
    store: ParameterStore,
    prefix: str,
    heads: int,
    key_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """Attention with residual connection and layer norm: LN(x + MHA(x))."""
    y, alpha = multi_head_attention_batched(x, store, prefix, heads, key_mask)
    out = layer_norm(x + y, store[f"{prefix}.ln_g"], store[f"{prefix}.ln_b"])
    return out, alpha


# -- optimizer -----------------------------------------------------------------


def adam_step(store: ParameterStore, lr: float) -> None:
    """One Adam update over every parameter; gradients are consumed."""
    for name in store.names():
        p = store._params[name]
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if np.isnan(g).any():
            raise NonFiniteError(f"NaN gradient in parameter {name}")
        t = store._t[name] + 1
        store._t[name] = t
        m = store._m[name]
        v = store._v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        mhat = m / (1 - ADAM_BETA1**t)
        vhat = v / (1 - ADAM_BETA2**t)
        p.data -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        p.grad = None


# -- verification ---------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[], Tensor],
    store: ParameterStore,
    h: float = 1e-5,
    max_entries: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    `loss_fn` must be a deterministic scalar function of the store's
    current parameters.  Tensors larger than `max_entries` are sampled.
    """
    store.zero_grad()
    loss_fn().backward()
    analytic = {name: (None if p.grad is None else p.grad.copy()) for name, p in store.items()}
    store.zero_grad()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in store.names():
        p = store._params[name]
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_entries:
            idxs = np.arange(n)
        else:
            idxs = rng.choice(n, size=max_entries, replace=False)
        ga = analytic[name]
        ga_flat = np.zeros(n) if ga is None else ga.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss_fn().item()
            flat[i] = orig - h
            fm = loss_fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            a, b = ga_flat[i], num
            rel = abs(a - b) / max(abs(a), abs(b), 1e-8)
            if rel > worst:
                worst = rel
    return worst
