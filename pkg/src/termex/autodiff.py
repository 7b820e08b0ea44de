"""Reverse-mode autodiff over dense numpy buffers.

Only the operations the extraction models need are implemented; each op
carries a hand-derived backward rule. Gradients are checked against central
finite differences in the test suite, so the analytic rules here must stay
independent of any numeric-differentiation code.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager disabling tape construction (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float array plus the tape edge that produced it.

    `data` is always a contiguous row-major float32/float64 ndarray. `grad`
    is allocated lazily; for leaves it persists across steps and is zeroed by
    the optimizer.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype, order="C")
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (usually scalar) tensor into leaves."""
        if grad is None:
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                # leaf parameter
                node.ensure_grad()
                node.grad += g
            if node._backward is not None:
                node._backward_dispatch(g, grads)

    def _backward_dispatch(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        for parent, contrib in self._backward(g):
            if contrib is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.ensure_grad()
                parent.grad += contrib
            else:
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; operands must share leading (stack) dimensions."""
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"dtype mismatch: {a.data.dtype} vs {b.data.dtype}")
    if a.data.shape[-1] != b.data.shape[-2] or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} vs {b.data.shape}")
    y = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, ga), (b, gb))

    return _make(y, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may broadcast along leading axes (bias add)."""
    y = a.data + b.data

    def backward(g):
        ga = g if g.shape == a.data.shape else _unbroadcast(g, a.data.shape)
        gb = g if g.shape == b.data.shape else _unbroadcast(g, b.data.shape)
        return ((a, ga), (b, gb))

    return _make(y, (a, b), backward)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shaped tensors (used for batch loss accumulation)."""
    ts = list(tensors)
    y = ts[0].data.copy()
    for t in ts[1:]:
        y += t.data

    def backward(g):
        return tuple((t, g) for t in ts)

    return _make(y, ts, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def mul(a: Tensor, b: Tensor) -> Tensor:
    y = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.data.shape)
        gb = _unbroadcast(g * a.data, b.data.shape)
        return ((a, ga), (b, gb))

    return _make(y, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    y = a.data * s

    def backward(g):
        return ((a, g * s),)

    return _make(y, (a,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    y = a.data.reshape(shape)

    def backward(g):
        return ((a, g.reshape(a.data.shape)),)

    return _make(y, (a,), backward)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    y = np.ascontiguousarray(np.transpose(a.data, axes))
    inv = np.argsort(axes)

    def backward(g):
        return ((a, np.transpose(g, inv)),)

    return _make(y, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    y = x * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        return ((a, g * (cdf + x * pdf)),)

    return _make(y.astype(x.dtype, copy=False), (a,), backward)


def masked_softmax(a: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Row softmax over the last axis of `a + additive_mask`.

    The mask is a constant (non-differentiable) additive term, typically 0 at
    visible positions and -1e9 at masked ones.
    """
    x = a.data
    if additive_mask is not None:
        x = x + additive_mask
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((a, y * (g - dot)),)

    return _make(y.astype(a.data.dtype, copy=False), (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row of the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gamma.data + beta.data

    def backward(g):
        d = x.data.shape[-1]
        gxhat = g * gamma.data
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return ((x, gx.astype(x.data.dtype, copy=False)), (gamma, ggamma), (beta, gbeta))

    return _make(y.astype(x.data.dtype, copy=False), (x, gamma, beta), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    y = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return ((table, gt),)

    return _make(y, (table,), backward)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    y = a.data[idx]

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _make(y, (a,), backward)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    y = a.data.sum()

    def backward(g):
        return ((a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype)),)

    return _make(np.asarray(y, dtype=a.data.dtype), (a,), backward)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if rate <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype)
    keep /= 1.0 - rate
    y = a.data * keep

    def backward(g):
        return ((a, g * keep),)

    return _make(y, (a,), backward)


def softmax_cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log softmax probability of the target class per row."""
    t = np.asarray(targets, dtype=np.int64)
    n, c = logits.data.shape
    if t.shape != (n,):
        raise ValueError(f"targets shape {t.shape} does not match logits rows {n}")
    if t.size and (t.min() < 0 or t.max() >= c):
        raise IndexError(f"target class out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), t].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        return ((logits, (g * p / n).astype(logits.data.dtype, copy=False)),)

    return _make(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward)


def picked_nll(probs: Tensor, labels: Sequence[int],
               weights: np.ndarray | None = None) -> Tensor:
    """-log probs[i, labels[i]] reduced over rows, for probability inputs.

    Without `weights` this is the plain mean; with `weights` it is the
    weighted sum (used to average per-example before averaging per-batch).
    """
    lab = np.asarray(labels, dtype=np.int64)
    n = probs.data.shape[0]
    if lab.shape != (n,):
        raise ValueError(f"labels shape {lab.shape} does not match rows {n}")
    picked = probs.data[np.arange(n), lab]
    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
    live = w != 0.0  # zero-weight rows must not poison the sum via log(0)
    loss = -(w[live] * np.log(picked[live])).sum()

    def backward(g):
        gp = np.zeros_like(probs.data)
        contrib = np.zeros(n, dtype=np.float64)
        contrib[live] = -g * w[live] / picked[live]
        gp[np.arange(n), lab] = contrib
        return ((probs, gp),)

    return _make(np.asarray(loss, dtype=probs.data.dtype), (probs,), backward)


# ---------------------------------------------------------------------------
# parameters


class Parameter:
    """Named leaf tensor; `grad` has the value's shape and starts at zero."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: Tensor):
        self.name = name
        self.value = value
        value.requires_grad = True

    @property
    def grad(self) -> np.ndarray:
        return self.value.ensure_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParamStore:
    """Insertion-ordered registry of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        p = Parameter(name, Tensor(value))
        self._params[name] = p
        return p.value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name].value

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> Iterator[tuple[str, Parameter]]:
        return iter(self._params.items())

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.value.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> list[str]:
        """Copy matching-name arrays in; returns the names actually loaded."""
        loaded = []
        for name, arr in arrays.items():
            if name not in self._params:
                continue
            dst = self._params[name].value.data
            if dst.shape != arr.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {arr.shape} vs model {dst.shape}"
                )
            dst[...] = arr.astype(dst.dtype)
            loaded.append(name)
        return loaded
